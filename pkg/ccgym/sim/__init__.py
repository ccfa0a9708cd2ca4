"""Packet-level network simulation and benchmark scenarios."""
