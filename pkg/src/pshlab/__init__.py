"""Numerical laboratory for boundary regularization of plurisubharmonic
functions on Lipschitz cap domains."""
from __future__ import annotations

__version__ = "0.1.0"
