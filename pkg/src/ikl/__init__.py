"""Implicit kernel learning: neural samplers of kernel spectral distributions."""
