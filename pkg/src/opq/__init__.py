"""Density-matrix laboratory for one-pure-qubit measurement-based computation,
blind delegation and trap-based verification."""

__version__ = "0.1.0"
