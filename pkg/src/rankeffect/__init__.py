"""Rank-effect portfolio analytics."""
