"""Deterministic disaggregated-memory simulator with a one-roundtrip replicated key-value stack."""

__version__ = "0.1.0"
