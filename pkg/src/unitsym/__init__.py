"""Unit-level symbolic execution for memory-corruption detection in mini-IR programs."""

__version__ = "0.1.0"
