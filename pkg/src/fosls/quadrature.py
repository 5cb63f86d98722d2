"""Quadrature rules on the reference triangle and on the unit segment.

The reference triangle is ``{(x, y) : x, y >= 0, x + y <= 1}`` with area 1/2.
Points are stored in barycentric coordinates ``(l0, l1, l2)``; the Cartesian
reference point is ``(l1, l2)``.  All rules used for assembly have strictly
interior points, so every point has a unique owning element.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.optimize import least_squares

MAX_SYMMETRIC_DEGREE = 6


@dataclass(frozen=True)
class QuadRule:
    """Points (barycentric for triangles, in [0, 1] for segments) and weights."""

    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def ref_points(self) -> np.ndarray:
        """Cartesian reference coordinates; for segments the 1D parameter."""
        if self.points.ndim == 1:
            return self.points
        return self.points[:, 1:]

    def __len__(self) -> int:
        return len(self.weights)


def _orbit_s3() -> np.ndarray:
    return np.array([[1 / 3, 1 / 3, 1 / 3]])


def _orbit_s21(a: float) -> np.ndarray:
    b = 1.0 - 2.0 * a
    return np.array([[a, a, b], [a, b, a], [b, a, a]])


def _orbit_s111(a: float, b: float) -> np.ndarray:
    c = 1.0 - a - b
    return np.array([[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]])


def _monomial_moment(i: int, j: int) -> float:
    # integral of x^i y^j over the reference triangle
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def _moment_residual(points: np.ndarray, weights: np.ndarray, degree: int) -> np.ndarray:
    x, y = points[:, 1], points[:, 2]
    res = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            res.append(weights @ (x**i * y**j) - _monomial_moment(i, j))
    return np.array(res)


def _degree6_rule() -> tuple[np.ndarray, np.ndarray]:
    # 12-point rule with two S21 orbits and one S111 orbit; tabulated values are
    # polished by least squares on the moment equations to full double precision.
    def build(p):
        w1, a1, w2, a2, w3, a3, b3 = p
        pts = np.vstack([_orbit_s21(a1), _orbit_s21(a2), _orbit_s111(a3, b3)])
        wts = 0.5 * np.concatenate([np.full(3, w1), np.full(3, w2), np.full(6, w3)])
        return pts, wts

    p0 = np.array([
        0.116786275726379, 0.249286745170910,
        0.050844906370207, 0.063089014491502,
        0.082851075618374, 0.053145049844817, 0.310352451033784,
    ])
    sol = least_squares(
        lambda p: _moment_residual(*build(p), 6), p0,
        method="lm", xtol=3e-16, ftol=3e-16, gtol=3e-16,
    )
    return build(sol.x)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """Symmetric rule on the reference triangle, exact up to total ``degree``.

    Raises
    ------
    ValueError
        If ``degree`` is outside ``0..6``.
    """
    if not 0 <= degree <= MAX_SYMMETRIC_DEGREE:
        raise ValueError(f"unsupported triangle quadrature degree {degree} (0..6)")
    if degree <= 1:
        pts, wts = _orbit_s3(), np.array([0.5])
    elif degree == 2:
        pts, wts = _orbit_s21(1 / 6), np.full(3, 1 / 6)
    elif degree <= 5:
        s15 = np.sqrt(15.0)
        pts = np.vstack([_orbit_s3(), _orbit_s21((6 - s15) / 21), _orbit_s21((6 + s15) / 21)])
        wts = 0.5 * np.concatenate([[9 / 40], np.full(3, (155 - s15) / 1200), np.full(3, (155 + s15) / 1200)])
    else:
        pts, wts = _degree6_rule()
    pts = np.ascontiguousarray(pts)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(degree, pts, wts)


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1] exact up to ``degree``."""
    if degree < 0:
        raise ValueError(f"unsupported segment quadrature degree {degree}")
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    pts, wts = 0.5 * (x + 1.0), 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(degree, pts, wts)


@lru_cache(maxsize=None)
def collapsed_rule(degree: int) -> QuadRule:
    """Conical-product (Duffy) rule on the reference triangle for any degree.

    Not symmetric, but positive and interior; used for high-degree error
    integration against closed-form fields.
    """
    if degree < 0:
        raise ValueError(f"unsupported quadrature degree {degree}")
    g = segment_rule(degree)
    # x-direction carries the (1 - x) Jacobian, so one extra order is needed
    g2 = segment_rule(degree + 1)
    S = np.repeat(g.points, len(g2.points))
    R = np.tile(g2.points, len(g.points))
    W = np.repeat(g.weights, len(g2.points)) * np.tile(g2.weights, len(g.points))
    x = R
    y = S * (1.0 - R)
    w = W * (1.0 - R)
    pts = np.column_stack([1.0 - x - y, x, y])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadRule(degree, pts, w)


def rule_for(degree: int) -> QuadRule:
    """Symmetric rule when available, otherwise the conical-product rule."""
    if degree <= MAX_SYMMETRIC_DEGREE:
        return triangle_rule(max(degree, 0))
    return collapsed_rule(degree)
