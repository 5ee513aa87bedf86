"""Deterministic ray-launching radio propagation for indoor factory halls."""

__version__ = "0.1.0"
