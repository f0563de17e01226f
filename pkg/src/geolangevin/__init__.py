"""Geometric Euler-Maruyama Langevin sampling on Riemannian manifolds."""

__version__ = "0.1.0"
