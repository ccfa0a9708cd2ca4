"""Core systems: event engine, persistence, CLI."""
