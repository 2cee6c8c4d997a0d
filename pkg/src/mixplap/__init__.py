"""Discrete mixed local/nonlocal anisotropic p-Laplace problems with singular sources."""
