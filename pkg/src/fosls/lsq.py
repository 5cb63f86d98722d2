"""Least-squares Galerkin assembly, solvers, LS functional and estimators.

For a product space with shape functions ``theta_i`` the normal equations are
``G_ij = (L theta_i, L theta_j)``, ``b_i = (F, L theta_i)``, ``c = |F|^2`` so
that ``LS(v) = v'Gv - 2 v'b + c``.  All integrals include the initial-trace
rows of space-time systems, each edge integral being charged to its unique
adjacent triangle.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .quadrature import collapsed_rule, rule_for, segment_rule
from .systems import TRACE_LABEL

INEXACT_DEGREE = 6
ERROR_DEGREE = 8
DENSE_LIMIT = 1000
_CHUNK = 4096


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class LsqSystem:
    gram: sps.csr_matrix
    load: np.ndarray
    data_norm: float
    space: object
    system: object
    quad_degree: int
    exact: bool

    @property
    def ndof(self) -> int:
        return len(self.load)

    def ls(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.gram @ v) - 2.0 * v @ self.load + self.data_norm)


@dataclass(frozen=True)
class EstimatorField:
    local: np.ndarray

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.local**2)))

    @property
    def eta_squared(self) -> float:
        return float(np.sum(self.local**2))


def quadrature_degrees(sys) -> tuple[int, int, bool]:
    """(element degree, trace degree, exact) for degree-exact integration of the LS functional."""
    rd, td = sys.residual_degree, sys.trace_degree
    exact = rd is not None and td is not None
    return (2 * rd if rd is not None else INEXACT_DEGREE,
            2 * td if td is not None else INEXACT_DEGREE, exact)


def _n_workers() -> int:
    env = os.environ.get("FOSLS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def _map_chunks(fn, n: int):
    chunks = [np.arange(s, min(n, s + _CHUNK)) for s in range(0, n, _CHUNK)]
    workers = _n_workers()
    if workers == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def initial_edges(mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(edge ids, owning triangle, local edge index) of all initial-trace edges."""
    be = mesh.boundary_edges
    e = be[mesh.edge_labels[be] == TRACE_LABEL]
    k = mesh.edge_tris[e, 0]
    j = np.argmax(mesh.tri_edges[k] == e[:, None], axis=1) if len(e) else np.zeros(0, dtype=np.int64)
    return e, k, j


def _edge_bary(j: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (ne, nq, 3) of parameter ``s`` along local edge ``j``."""
    lam = np.zeros((len(j), len(s), 3))
    rows = np.arange(len(j))
    lam[rows, :, (j + 1) % 3] = 1.0 - s[None, :]
    lam[rows, :, (j + 2) % 3] = s[None, :]
    return lam


class _Integrator:
    """Element and trace quadrature data shared by assembly and functionals."""

    def __init__(self, sys, space, degree=None, trace_degree=None):
        if space.ncomp != sys.ncomp:
            raise ValueError("space does not match the system")
        self.sys, self.space, self.mesh = sys, space, space.mesh
        qd, td, self.exact = quadrature_degrees(sys)
        self.degree = qd if degree is None else degree
        self.trace_degree = td if trace_degree is None else trace_degree
        self.rule = rule_for(self.degree)
        self.seg = segment_rule(self.trace_degree)
        self.tr_edges, self.tr_tris, self.tr_local = initial_edges(self.mesh)

    def element_terms(self, tris):
        """``B = L theta`` (nk, nq, nres, nloc), data F (nk, nq, nres), weights (nk, nq)."""
        lam = self.rule.points
        x = self.mesh.to_physical(tris, lam)
        nk, nq = x.shape[:2]
        J = self.space.local_jets(tris, lam)
        M = self.sys.operator(x.reshape(-1, 2)).reshape(nk, nq, self.sys.n_res, self.sys.ncomp, 3)
        B = np.einsum("kqrcj,kqlcj->kqrl", M, J)
        F = self.sys.rhs(x.reshape(-1, 2)).reshape(nk, nq, self.sys.n_res)
        w = 2.0 * self.mesh.areas[tris][:, None] * self.rule.weights[None, :]
        return B, F, w

    def trace_terms(self, sel):
        """Same as :meth:`element_terms` for trace rows on the selected initial edges."""
        tris, j = self.tr_tris[sel], self.tr_local[sel]
        lam = _edge_bary(j, self.seg.points)
        p = self.mesh.vertices[self.mesh.triangles[tris]]
        x = np.einsum("kqj,kjd->kqd", lam, p)
        J = self.space.local_jets(tris, lam)
        B = np.einsum("rcj,kqlcj->kqrl", self.sys.trace_op, J)
        F = self.sys.trace_rhs(x.reshape(-1, 2)).reshape(len(tris), len(self.seg), self.sys.n_trace)
        e = self.mesh.edges[self.tr_edges[sel]]
        length = np.linalg.norm(self.mesh.vertices[e[:, 1]] - self.mesh.vertices[e[:, 0]], axis=1)
        w = length[:, None] * self.seg.weights[None, :]
        return B, F, w, tris

    def coeff_local(self, coeffs, tris):
        ld = self.space.local_dofs[tris]
        return np.where(ld >= 0, coeffs[np.maximum(ld, 0)], 0.0) if len(coeffs) else np.zeros(ld.shape)

    def local_residual_sq(self, coeffs) -> np.ndarray:
        """Per-element squared residual norms, trace rows included."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.space.total_dim,):
            raise ValueError(f"expected {self.space.total_dim} coefficients, got {coeffs.shape}")

        def chunk(tris):
            B, F, w = self.element_terms(tris)
            R = F - np.einsum("kqrl,kl->kqr", B, self.coeff_local(coeffs, tris))
            return np.einsum("kq,kqr,kqr->k", w, R, R)

        out = np.concatenate(_map_chunks(chunk, self.mesh.n_triangles) or [np.zeros(0)])
        if self.sys.n_trace and len(self.tr_edges):
            B, F, w, tris = self.trace_terms(slice(None))
            R = F - np.einsum("kqrl,kl->kqr", B, self.coeff_local(coeffs, tris))
            np.add.at(out, tris, np.einsum("kq,kqr,kqr->k", w, R, R))
        return out


def assemble(sys, space, quad_degree=None) -> LsqSystem:
    """Assemble the normal equations of the LSQ Galerkin problem."""
    it = _Integrator(sys, space, quad_degree)
    if np.any(space.mesh.areas <= 0):
        raise ValueError("singular element geometry")
    n = space.total_dim

    def scatter_parts(B, F, w, tris):
        Gl = np.einsum("kq,kqrl,kqrm->klm", w, B, B)
        bl = np.einsum("kq,kqrl,kqr->kl", w, B, F)
        c = float(np.einsum("kq,kqr,kqr->", w, F, F))
        ld = space.local_dofs[tris]
        rows = np.broadcast_to(ld[:, :, None], Gl.shape)
        cols = np.broadcast_to(ld[:, None, :], Gl.shape)
        keep = (rows >= 0) & (cols >= 0)
        bkeep = ld >= 0
        return rows[keep], cols[keep], Gl[keep], ld[bkeep], bl[bkeep], c

    def chunk(tris):
        return scatter_parts(*it.element_terms(tris), tris)

    parts = _map_chunks(chunk, space.mesh.n_triangles)
    if sys.n_trace and len(it.tr_edges):
        parts.append(scatter_parts(*it.trace_terms(slice(None))))
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    G = sps.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    G.sum_duplicates()
    G = ((G + G.T) * 0.5).tocsr()
    b = np.zeros(n)
    for p in parts:
        np.add.at(b, p[3], p[4])
    c = sum(p[5] for p in parts)
    return LsqSystem(G, b, float(c), space, sys, it.degree, it.exact)


def solve(ls: LsqSystem, method: str = "direct", tol: float = 1e-10, maxit: int | None = None) -> np.ndarray:
    """Solve ``G u = b`` by direct factorization or Jacobi-preconditioned CG."""
    n = ls.ndof
    if n == 0:
        return np.zeros(0)
    b = ls.load
    if not np.any(b):
        return np.zeros(n)
    if method == "direct":
        try:
            if n <= DENSE_LIMIT:
                factor = sla.cho_factor(ls.gram.toarray())
                return sla.cho_solve(factor, b)
            return spla.splu(ls.gram.tocsc()).solve(b)
        except (np.linalg.LinAlgError, RuntimeError) as err:
            raise SolverError(f"direct solve failed: {err}") from err
    if method == "cg":
        maxit = 10 * n if maxit is None else maxit
        d = ls.gram.diagonal()
        if np.any(d <= 0):
            raise SolverError("Gram matrix has a non-positive diagonal")
        M = sps.diags(1.0 / d)
        u, info = spla.cg(ls.gram, b, rtol=tol, atol=0.0, maxiter=maxit, M=M)
        res = float(np.linalg.norm(ls.gram @ u - b) / np.linalg.norm(b))
        if info != 0:
            raise SolverError(f"CG did not converge in {maxit} iterations (relative residual {res:.3e})", res)
        return u
    raise ValueError(f"unknown solver method {method!r}")


def residual_orthogonality(ls: LsqSystem, coeffs) -> float:
    r = ls.gram @ np.asarray(coeffs, dtype=float) - ls.load
    return float(np.abs(r).max(initial=0.0) / max(1.0, np.abs(ls.load).max(initial=0.0)))


def estimate(sys, space, coeffs, quad_degree=None) -> EstimatorField:
    """Elementwise estimator ``eta_K = |F - L u|_{L(K)}`` (trace rows included)."""
    local = _Integrator(sys, space, quad_degree).local_residual_sq(coeffs)
    return EstimatorField(np.sqrt(np.maximum(local, 0.0)))


def ls_value(sys, space, coeffs, quad_degree=None) -> float:
    """LS functional by elementwise quadrature."""
    return float(np.sum(_Integrator(sys, space, quad_degree).local_residual_sq(coeffs)))


def discrete_loss(sys, space, coeffs, quad_degree: int, trace_degree: int | None = None) -> float:
    """Squared residual loss evaluated with degree ``quad_degree`` rules only.

    Trace terms use ``trace_degree`` when given, else ``quad_degree``.
    """
    trace_degree = quad_degree if trace_degree is None else trace_degree
    if quad_degree < 0 or trace_degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    return float(np.sum(_Integrator(sys, space, quad_degree, trace_degree).local_residual_sq(coeffs)))


def error_norm(sys, space, coeffs, exact=None, degree: int = ERROR_DEGREE, local: bool = False):
    """``|U - u_h|_V`` for exact jets ``exact(x) -> (n, ncomp, 3)`` (``None``: the norm of ``u_h``)."""
    mesh = space.mesh
    coeffs = np.asarray(coeffs, dtype=float)
    rule, seg = collapsed_rule(degree), segment_rule(degree)

    def diff_jets(tris, lam, x):
        jets = -space.evaluate_local(coeffs, tris, lam)
        if exact is not None:
            jets = jets + exact(x.reshape(-1, 2)).reshape(jets.shape)
        return jets

    def chunk(tris):
        x = mesh.to_physical(tris, rule.points)
        D = diff_jets(tris, rule.points, x)
        N = sys.norm_operator(x.reshape(-1, 2))
        V = np.einsum("nrcj,ncj->nr", N, D.reshape(-1, sys.ncomp, 3)).reshape(len(tris), len(rule), -1)
        w = 2.0 * mesh.areas[tris][:, None] * rule.weights[None, :]
        return np.einsum("kq,kqr,kqr->k", w, V, V)

    out = np.concatenate(_map_chunks(chunk, mesh.n_triangles))
    e, tris, j = initial_edges(mesh)
    if len(sys.trace_norm) and len(e):
        lam = _edge_bary(j, seg.points)
        x = np.einsum("kqj,kjd->kqd", lam, mesh.vertices[mesh.triangles[tris]])
        D = diff_jets(tris, lam, x)
        V = np.einsum("rcj,kqcj->kqr", sys.trace_norm, D)
        ev = mesh.edges[e]
        length = np.linalg.norm(mesh.vertices[ev[:, 1]] - mesh.vertices[ev[:, 0]], axis=1)
        np.add.at(out, tris, np.einsum("k,q,kqr,kqr->k", length, seg.weights, V, V))
    return np.sqrt(out) if local else float(np.sqrt(out.sum()))


def condition_estimate(ls: LsqSystem) -> float:
    """2-norm condition number of ``G`` (dense; for monitoring small systems)."""
    if ls.ndof == 0:
        return 1.0
    return float(np.linalg.cond(ls.gram.toarray()))


def dump_coo(ls: LsqSystem, path) -> None:
    """Write ``G`` as ``row col value`` lines."""
    G = ls.gram.tocoo()
    np.savetxt(path, np.column_stack([G.row, G.col, G.data]), fmt=["%d", "%d", "%.17g"])
