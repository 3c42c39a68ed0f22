"""Quadrature rules on the reference triangle in barycentric form.

Weights are normalised to sum to one, so an element integral is
``area * sum_q w_q f(x_q)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 3) barycentric coordinates
    weights: np.ndarray  # (Q,)
    degree: int

    def __len__(self):
        return len(self.weights)

    def physical_points(self, corners):
        """Map to elements; ``corners`` has shape ``(K, 3, 3)``, result ``(K, Q, 3)``."""
        return np.einsum("qi,kij->kqj", self.points, corners)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


def _dunavant6():
    pts, wts = [], []
    for p, w in (
        _orbit3(0.249286745170910, 0.116786275726379),
        _orbit3(0.063089014491502, 0.050844906370207),
        _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374),
    ):
        pts += p
        wts += w
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


def collapsed_gauss(degree: int) -> QuadratureRule:
    """Duffy-collapsed Gauss-Legendre product rule, exact to ``degree``."""
    n = max(1, int(np.ceil((degree + 2) / 2)))
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel() * 2.0
    pts = np.stack([1.0 - xi - eta, xi, eta], axis=-1)
    return QuadratureRule(pts, weights, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Smallest shipped rule integrating polynomials of ``degree`` exactly."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if degree <= 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)
    if degree == 2:
        pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        return QuadratureRule(pts, np.full(3, 1 / 3), 2)
    if degree <= 6:
        pts, wts = _dunavant6()
        return QuadratureRule(pts, wts, 6)
    return collapsed_gauss(degree)
