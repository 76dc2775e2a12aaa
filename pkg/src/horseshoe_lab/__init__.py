"""Numerical pipeline for detecting symbolic dynamics in a secular
binary-asteroid / planet model: averaged Hamiltonian, return map on a
transverse section, hyperbolic fixed points, invariant manifolds,
covering-relation certification of a topological horseshoe, and
Lyapunov-based chaos indicators."""

__version__ = "0.1.0"
