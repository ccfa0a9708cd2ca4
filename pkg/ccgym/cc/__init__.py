"""Congestion-control algorithms."""
