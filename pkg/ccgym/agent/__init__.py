"""Learned congestion-control agent."""
