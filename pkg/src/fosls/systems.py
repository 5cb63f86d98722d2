"""First-order operators and data for the supported problem families.

A system acts on jets ``J[c, j]`` of the solution components (``j = 0`` value,
``j = 1, 2`` partial derivatives in the two coordinates) through a linear map
``M(x)`` of shape ``(n_res, ncomp, 3)``: ``(L v)(x) = M(x) : J(x)``.  The
residual is ``F - L v``.  Space-time systems additionally carry trace rows
evaluated on edges labelled ``initial`` (t = 0).  Norm maps ``N(x)`` and
``N_trace`` encode the local V(K) norms in the same way.

Component layout per problem:

poisson/helmholtz  u, sigma_x, sigma_y
elasticity         u1, u2, s11, s12, s21, s22   (rows of the stress)
heat               u1, u2                       (coordinates t, x)
wave               v, sigma                     (coordinates t, x)
ocp_poisson        u, sy_x, sy_y, p, sp_x, sp_y
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import ZERO, Field, as_field

TRACE_LABEL = "initial"


@dataclass(frozen=True, eq=False)
class SystemOperator:
    tag: str
    ncomp: int
    op_func: Callable
    data: tuple
    norm_func: Callable
    trace_op: np.ndarray
    trace_data: tuple
    trace_norm: np.ndarray
    coef_degree: int | None
    params: dict

    @property
    def n_res(self) -> int:
        return len(self.data)

    @property
    def n_trace(self) -> int:
        return len(self.trace_data)

    @property
    def has_initial_trace(self) -> bool:
        return self.n_trace > 0

    def operator(self, x) -> np.ndarray:
        """``M(x)`` of shape (n, n_res, ncomp, 3)."""
        x = np.atleast_2d(x)
        return np.broadcast_to(self.op_func(x), (len(x), self.n_res, self.ncomp, 3))

    def norm_operator(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        N = self.norm_func(x)
        return np.broadcast_to(N, (len(x),) + np.shape(N)[-3:])

    def rhs(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.stack([f(x) for f in self.data], axis=1)

    def trace_rhs(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.stack([f(x) for f in self.trace_data], axis=1) if self.n_trace else np.zeros((len(x), 0))

    def apply(self, jets, x) -> np.ndarray:
        """``L v`` at points: jets (n, ncomp, 3) -> (n, n_res)."""
        return np.einsum("nrcj,ncj->nr", self.operator(x), jets)

    def residual(self, jets, x) -> np.ndarray:
        return self.rhs(x) - self.apply(jets, x)

    def trace_residual(self, jets, x) -> np.ndarray:
        return self.trace_rhs(x) - np.einsum("rcj,ncj->nr", self.trace_op, jets)

    # quadrature requirements -------------------------------------------------
    @property
    def residual_degree(self) -> int | None:
        """Polynomial degree of the element residual for lowest-order trial functions."""
        degs = [f.degree for f in self.data]
        if self.coef_degree is None or any(d is None for d in degs):
            return None
        return max([1 + self.coef_degree] + degs)

    @property
    def trace_degree(self) -> int | None:
        degs = [f.degree for f in self.trace_data]
        if any(d is None for d in degs):
            return None
        return max([1] + degs)

    @property
    def is_polynomial(self) -> bool:
        return self.residual_degree is not None and self.trace_degree is not None

    def with_data(self, data=None, trace_data=None) -> "SystemOperator":
        """Copy with replaced data fields (lists of scalar fields or numbers)."""
        changes = {}
        if data is not None:
            if len(data) != self.n_res:
                raise ValueError(f"expected {self.n_res} data fields")
            changes["data"] = tuple(as_field(f) for f in data)
        if trace_data is not None:
            if len(trace_data) != self.n_trace:
                raise ValueError(f"expected {self.n_trace} trace data fields")
            changes["trace_data"] = tuple(as_field(f) for f in trace_data)
        return dataclasses.replace(self, **changes)


def _fields(values, n, name):
    if values is None:
        return (ZERO,) * n
    if n == 1 and not isinstance(values, (tuple, list)):
        values = (values,)
    if len(values) != n:
        raise ValueError(f"{name} needs {n} component(s)")
    return tuple(as_field(v) for v in values)


def _const(M):
    M = np.asarray(M, dtype=float)
    return lambda x: M[None]


def _poisson_rows(k2: float) -> np.ndarray:
    M = np.zeros((3, 3, 3))
    M[0, 1, 1] = M[0, 2, 2] = -1.0
    M[0, 0, 0] = -k2
    M[1, 0, 1], M[1, 1, 0] = 1.0, -1.0
    M[2, 0, 2], M[2, 2, 0] = 1.0, -1.0
    return M


def _poisson_norm() -> np.ndarray:
    N = np.zeros((6, 3, 3))
    N[0, 0, 0] = 1.0
    N[1, 0, 1] = N[2, 0, 2] = 1.0
    N[3, 1, 0] = N[4, 2, 0] = 1.0
    N[5, 1, 1] = N[5, 2, 2] = 1.0
    return N


def poisson_helmholtz(k: float = 0.0, f=0.0, g=None) -> SystemOperator:
    """``-div sigma - k^2 u = f``, ``grad u - sigma = g`` (``g = 0`` by default)."""
    if k < 0:
        raise ValueError("wavenumber must be non-negative")
    tag = "poisson" if k == 0 else "helmholtz"
    return SystemOperator(
        tag, 3, _const(_poisson_rows(float(k) ** 2)), (as_field(f),) + _fields(g, 2, "g"),
        _const(_poisson_norm()), np.zeros((0, 3, 3)), (), np.zeros((0, 3, 3)), 0, {"k": float(k)},
    )


def elasticity_tensor_power(lam: float, mu: float, alpha: float) -> np.ndarray:
    """``C^alpha`` as a 4x4 matrix on row-major flattened 2x2 matrices.

    ``C tau = 2 mu tau + lam tr(tau) I``; its eigenvalues are ``2 mu`` on
    trace-free matrices and ``2 mu + 2 lam`` on multiples of the identity.
    """
    e = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)
    P = np.outer(e, e)
    return (2 * mu) ** alpha * (np.eye(4) - P) + (2 * mu + 2 * lam) ** alpha * P


def _strain_map() -> np.ndarray:
    E = np.zeros((4, 6, 3))
    E[0, 0, 1] = 1.0
    E[1, 0, 2] = E[1, 1, 1] = 0.5
    E[2, 0, 2] = E[2, 1, 1] = 0.5
    E[3, 1, 2] = 1.0
    return E


def _stress_value_map() -> np.ndarray:
    S = np.zeros((4, 6, 3))
    for i in range(4):
        S[i, 2 + i, 0] = 1.0
    return S


def _stress_div_map() -> np.ndarray:
    D = np.zeros((2, 6, 3))
    D[0, 2, 1] = D[0, 3, 2] = 1.0
    D[1, 4, 1] = D[1, 5, 2] = 1.0
    return D


def elasticity(lam: float, mu: float, f=None, g=None) -> SystemOperator:
    """``-div sigma = f``, ``C^{-1/2} sigma - C^{1/2} eps(u) = g`` (``g = 0`` by default)."""
    if not (lam > 0 and mu > 0):
        raise ValueError("Lame constants must be positive")
    Ch = elasticity_tensor_power(lam, mu, 0.5)
    Cmh = elasticity_tensor_power(lam, mu, -0.5)
    E, S, D = _strain_map(), _stress_value_map(), _stress_div_map()
    M = np.concatenate([-D, np.einsum("ab,bcj->acj", Cmh, S) - np.einsum("ab,bcj->acj", Ch, E)])
    N = np.concatenate([np.einsum("ab,bcj->acj", Ch, E), np.einsum("ab,bcj->acj", Cmh, S), D])
    return SystemOperator(
        "elasticity", 6, _const(M), _fields(f, 2, "f") + _fields(g, 4, "g"), _const(N),
        np.zeros((0, 6, 3)), (), np.zeros((0, 6, 3)), 0, {"lam": float(lam), "mu": float(mu)},
    )


def heat(a=1.0, b=0.0, c=0.0, f=0.0, u0=0.0, g=0.0) -> SystemOperator:
    """Space-time heat in 1+1D, coordinates ``(t, x)``.

    Rows: ``u2 + a d_x u1 = g``, ``d_t u1 + d_x u2 + b d_x u1 + c u1 = f``;
    trace row ``u1(0, .) = u0``.
    """
    a, b, c = as_field(a), as_field(b), as_field(c)
    if a.degree == 0 and a(np.zeros((1, 2)))[0] <= 0:
        raise ValueError("diffusion coefficient a must be positive")
    degs = [fld.degree for fld in (a, b, c)]
    coef_degree = None if any(d is None for d in degs) else max(degs)

    def op(x):
        n = len(x)
        M = np.zeros((n, 2, 2, 3))
        M[:, 0, 1, 0] = 1.0
        M[:, 0, 0, 2] = a(x)
        M[:, 1, 0, 1] = 1.0
        M[:, 1, 1, 2] = 1.0
        M[:, 1, 0, 2] = b(x)
        M[:, 1, 0, 0] = c(x)
        return M

    N = np.zeros((4, 2, 3))
    N[0, 0, 0] = 1.0
    N[1, 0, 2] = 1.0
    N[2, 1, 0] = 1.0
    N[3, 0, 1] = N[3, 1, 2] = 1.0
    T = np.zeros((1, 2, 3))
    T[0, 0, 0] = 1.0
    return SystemOperator(
        "heat", 2, op, (as_field(g), as_field(f)), _const(N), T, (as_field(u0),), T.copy(),
        coef_degree, {"a": a.text, "b": b.text, "c": c.text},
    )


def wave(f=0.0, g=0.0, v0=0.0, sigma0=0.0) -> SystemOperator:
    """Acoustic wave in 1+1D: ``d_t v - d_x sigma = f``, ``d_t sigma - d_x v = g``, traces ``v0, sigma0``."""
    M = np.zeros((2, 2, 3))
    M[0, 0, 1], M[0, 1, 2] = 1.0, -1.0
    M[1, 1, 1], M[1, 0, 2] = 1.0, -1.0
    N = np.zeros((4, 2, 3))
    N[0, 0, 0] = 1.0
    N[1, 1, 1], N[1, 0, 2] = 1.0, -1.0
    N[2, 1, 0] = 1.0
    N[3, 0, 1], N[3, 1, 2] = 1.0, -1.0
    T = np.zeros((2, 2, 3))
    T[0, 0, 0] = T[1, 1, 0] = 1.0
    return SystemOperator(
        "wave", 2, _const(M), (as_field(f), as_field(g)), _const(N), T,
        (as_field(v0), as_field(sigma0)), T.copy(), 0, {},
    )


def ocp_poisson(lam_ocp: float, f=0.0, z=0.0, g_y=None) -> SystemOperator:
    """Optimality system of ``min 1/2 |u - z|^2 + lam/2 |q|^2`` s.t. ``-Laplace u = f + q``.

    State rows ``-div sigma_y + p / lam = f``, ``grad u - sigma_y = g_y``;
    adjoint rows ``-div sigma_p - u = -z``, ``grad p - sigma_p = 0``.
    The optimal control is ``q = -p / lam``.
    """
    if not lam_ocp > 0:
        raise ValueError("lambda_ocp must be positive")
    P = _poisson_rows(0.0)
    M = np.zeros((6, 6, 3))
    M[:3, :3] = P
    M[3:, 3:] = P
    M[0, 3, 0] = 1.0 / lam_ocp
    M[3, 0, 0] = -1.0
    N = np.zeros((12, 6, 3))
    N[:6, :3] = _poisson_norm()
    N[6:, 3:] = _poisson_norm()
    z = as_field(z)
    minus_z = Field(lambda x: -z(x), z.degree, "0" if z.is_zero else f"-({z.text})")
    data = (as_field(f),) + _fields(g_y, 2, "g_y") + (minus_z, ZERO, ZERO)
    return SystemOperator(
        "ocp_poisson", 6, _const(M), data, _const(N), np.zeros((0, 6, 3)), (), np.zeros((0, 6, 3)),
        0, {"lam_ocp": float(lam_ocp)},
    )


def recover_control(space, coeffs, lam_ocp: float) -> np.ndarray:
    """S1 coefficients of the optimal control ``q = -p / lam`` from an OCP solution."""
    return -space.split(coeffs)[2] / lam_ocp


def make_system(tag: str, **params) -> SystemOperator:
    builders = {
        "poisson": poisson_helmholtz, "helmholtz": poisson_helmholtz, "elasticity": elasticity,
        "heat": heat, "wave": wave, "ocp_poisson": ocp_poisson,
    }
    if tag not in builders:
        raise ValueError(f"unknown problem tag {tag!r}")
    return builders[tag](**params)


def residual_at(sys: SystemOperator, space, coeffs, K: int, x) -> np.ndarray:
    """All components of ``F - L v`` at ``x`` in triangle ``K``.

    Element rows come first, then trace rows; trace rows are ``nan`` unless
    ``x`` lies on an initial edge of ``K``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.total_dim,):
        raise ValueError(f"expected {space.total_dim} coefficients, got {coeffs.shape}")
    if space.ncomp != sys.ncomp:
        raise ValueError("space does not match the system")
    mesh = space.mesh
    x = np.asarray(x, dtype=float).reshape(1, 2)
    if not mesh.contains(K, x)[0]:
        raise ValueError(f"point {x[0].tolist()} is not in triangle {K}")
    jets = space.evaluate(coeffs, x, tris=np.array([K]))
    out = np.full(sys.n_res + sys.n_trace, np.nan)
    out[:sys.n_res] = sys.residual(jets, x)[0]
    if sys.n_trace and on_initial_edge(mesh, K, x[0]):
        out[sys.n_res:] = sys.trace_residual(jets, x)[0]
    return out


def on_initial_edge(mesh, K: int, x, tol: float = 1e-12) -> bool:
    for e in mesh.tri_edges[K]:
        if mesh.edge_labels[e] != TRACE_LABEL:
            continue
        a, b = mesh.vertices[mesh.edges[e]]
        d = b - a
        s = np.dot(x - a, d) / np.dot(d, d)
        if -tol <= s <= 1 + tol and np.linalg.norm(a + s * d - x) <= tol * max(1.0, np.linalg.norm(d)):
            return True
    return False
