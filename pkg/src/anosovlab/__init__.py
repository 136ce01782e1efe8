"""Numerical laboratory for partially hyperbolic perturbations of a family of 3-torus automorphisms."""

__version__ = "0.1.0"
