"""Numerical laboratory for non-directed polymers in heavy-tail environments."""
from __future__ import annotations

__version__ = "0.1.0"
