"""Closed-form solutions with matching data for convergence studies.

Each builder returns a :class:`Manufactured` whose ``system`` has data
``F = L U`` for the exact component fields ``U`` and whose ``exact`` maps
points to jets ``(n, ncomp, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

from .fields import Field
from .systems import SystemOperator, make_system

S0, S1 = sp.symbols("s0 s1", real=True)


@dataclass(frozen=True, eq=False)
class Manufactured:
    name: str
    system: SystemOperator
    exact: Callable
    components: tuple


def _jets(exprs):
    funcs = [[sp.lambdify((S0, S1), e, "numpy"), sp.lambdify((S0, S1), sp.diff(e, S0), "numpy"),
              sp.lambdify((S0, S1), sp.diff(e, S1), "numpy")] for e in exprs]

    def exact(x):
        x = np.atleast_2d(x)
        out = np.empty((len(x), len(funcs), 3))
        for c, row in enumerate(funcs):
            for j, f in enumerate(row):
                out[:, c, j] = f(x[:, 0], x[:, 1])
        return out

    return exact


def _symbolic_apply(sys: SystemOperator, exprs, matrix):
    jet = [[e, sp.diff(e, S0), sp.diff(e, S1)] for e in exprs]
    rows = []
    for r in range(matrix.shape[0]):
        acc = sp.Integer(0)
        for c in range(matrix.shape[1]):
            for j in range(3):
                m = float(matrix[r, c, j])
                if m != 0:
                    acc += (sp.Integer(int(m)) if m.is_integer() else sp.Float(m)) * jet[c][j]
        acc = sp.expand(acc)
        # drop floating-point cancellation noise
        acc = acc.xreplace({n: 0 for n in acc.atoms(sp.Float) if abs(n) < 1e-12})
        rows.append(sp.simplify(acc))
    return rows


def _field(expr, trace=False) -> Field:
    if trace:
        expr = expr.subs(S0, 0)
    degree = None
    if expr.is_polynomial(S0, S1):
        degree = int(sp.Poly(expr, S0, S1).total_degree()) if expr != 0 else 0
    f = sp.lambdify((S0, S1), expr, "numpy")
    return Field(lambda x: f(x[:, 0], x[:, 1]), degree, "0" if expr == 0 else str(expr))


def manufacture(name: str, tag: str, exprs, **params) -> Manufactured:
    """Build data ``F = L U`` symbolically from component expressions in ``(s0, s1)``.

    Only constant-coefficient operators are supported, since the operator
    matrix is taken at a single point.
    """
    exprs = tuple(sp.sympify(e) for e in exprs)
    sys = make_system(tag, **params)
    if sys.ncomp != len(exprs):
        raise ValueError(f"{tag} needs {sys.ncomp} components")
    M = np.asarray(sys.operator(np.zeros((1, 2)))[0])
    data = [_field(e) for e in _symbolic_apply(sys, exprs, M)]
    trace = [_field(e, trace=True) for e in _symbolic_apply(sys, exprs, sys.trace_op)] if sys.n_trace else None
    return Manufactured(name, sys.with_data(data, trace), _jets(exprs), exprs)


def poisson_sine(k: float = 0.0) -> Manufactured:
    """``u = sin(pi x) sin(pi y)``, ``sigma = grad u``, ``f = (2 pi^2 - k^2) u``."""
    u = sp.sin(sp.pi * S0) * sp.sin(sp.pi * S1)
    return manufacture("poisson_sine", "poisson", (u, sp.diff(u, S0), sp.diff(u, S1)), k=k)


def poisson_polynomial(k: float = 0.0) -> Manufactured:
    """``u = x(1-x)y(1-y)`` with ``sigma = grad u``: polynomial data of degree 2."""
    u = S0 * (1 - S0) * S1 * (1 - S1)
    return manufacture("poisson_polynomial", "poisson", (u, sp.diff(u, S0), sp.diff(u, S1)), k=k)


def heat_sine() -> Manufactured:
    """``u1 = exp(-pi^2 t) sin(pi x)``, ``u2 = -d_x u1``; ``f = 0``, ``u0 = sin(pi x)``."""
    u1 = sp.exp(-sp.pi**2 * S0) * sp.sin(sp.pi * S1)
    return manufacture("heat_sine", "heat", (u1, -sp.diff(u1, S1)), a=1.0, b=0.0, c=0.0)


def heat_linear() -> Manufactured:
    """``u1 = t x (1 - x)``, ``u2 = -d_x u1``: polynomial data."""
    u1 = S0 * S1 * (1 - S1)
    return manufacture("heat_linear", "heat", (u1, -sp.diff(u1, S1)), a=1.0, b=0.0, c=0.0)


def wave_standing() -> Manufactured:
    """``v = sin(pi x) cos(pi t)``, ``sigma = cos(pi x) sin(pi t)``; zero sources."""
    v = sp.sin(sp.pi * S1) * sp.cos(sp.pi * S0)
    s = sp.cos(sp.pi * S1) * sp.sin(sp.pi * S0)
    return manufacture("wave_standing", "wave", (v, s))


def wave_constant() -> Manufactured:
    """``v = 1``, ``sigma = 0``."""
    return manufacture("wave_constant", "wave", (sp.Integer(1), sp.Integer(0)))


def elasticity_bubble(lam: float = 1.0, mu: float = 1.0) -> Manufactured:
    """Polynomial bubble displacement with ``sigma = C eps(u)``."""
    b = S0 * (1 - S0) * S1 * (1 - S1)
    u1, u2 = b, b * (S0 - S1)
    e11, e22 = sp.diff(u1, S0), sp.diff(u2, S1)
    e12 = (sp.diff(u1, S1) + sp.diff(u2, S0)) / 2
    tr = e11 + e22
    s11, s12, s22 = 2 * mu * e11 + lam * tr, 2 * mu * e12, 2 * mu * e22 + lam * tr
    return manufacture("elasticity_bubble", "elasticity", (u1, u2, s11, s12, s12, s22), lam=lam, mu=mu)


MANUFACTURED = {
    "poisson_sine": poisson_sine,
    "poisson_polynomial": poisson_polynomial,
    "heat_sine": heat_sine,
    "heat_linear": heat_linear,
    "wave_standing": wave_standing,
    "wave_constant": wave_constant,
    "elasticity_bubble": elasticity_bubble,
}
