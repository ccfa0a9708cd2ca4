"""Benchmark metrics and suite runner."""
