"""Datacenter congestion-control gym: packet simulator, baselines and ADPG agents."""
