"""Exact quadrature for piecewise polynomials on triangles and edges.

Triangle rules are conical (Duffy) products of Gauss-Legendre and
Gauss-Jacobi nodes, so every assembly integrand in this package is
integrated exactly up to roundoff; points are strictly interior.  Weights
are normalized to sum to one and are meant to be scaled by |T| or |E|.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = ["QuadRule", "triangle_rule", "edge_rule", "MAX_TRIANGLE_DEGREE"]

MAX_TRIANGLE_DEGREE = 16


@dataclass(frozen=True)
class QuadRule:
    """Quadrature nodes in barycentric coordinates, weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_points(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Rule integrating all polynomials up to `degree` exactly on a triangle.

    Usage: ``integral = area * (weights @ f(points))`` with `points` the
    (n, 3) barycentric nodes.
    """
    if not 0 <= degree <= MAX_TRIANGLE_DEGREE:
        raise ValueError(
            f"triangle rule degree must be in 0..{MAX_TRIANGLE_DEGREE}, got {degree}"
        )
    n = max(1, (degree + 2) // 2)  # Gauss with n points is exact to 2n-1
    x_leg, w_leg = roots_legendre(n)
    x_jac, w_jac = roots_jacobi(n, 1, 0)
    xi = 0.5 * (x_leg + 1.0)
    wxi = 0.5 * w_leg
    eta = 0.5 * (x_jac + 1.0)
    weta = 0.25 * w_jac  # integrates (1-eta) f(eta) on [0,1]
    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    x = (XI * (1.0 - ETA)).ravel()
    y = ETA.ravel()
    w = 2.0 * np.outer(wxi, weta).ravel()  # normalize: plain sum is the area 1/2
    bary = np.column_stack([1.0 - x - y, x, y])
    return QuadRule(points=bary, weights=w, exactness_degree=degree)


@lru_cache(maxsize=None)
def edge_rule(degree):
    """Gauss-Legendre rule on a segment, barycentric (1-t, t) nodes."""
    if degree < 0:
        raise ValueError("edge rule degree must be nonnegative")
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    t = 0.5 * (x + 1.0)
    bary = np.column_stack([1.0 - t, t])
    return QuadRule(points=bary, weights=0.5 * w, exactness_degree=degree)
