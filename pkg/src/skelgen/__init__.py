"""Skeleton-aware style-based motion synthesis."""
