"""Marking strategies and the adaptive Solve-Estimate-Mark-Refine loop."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .fespace import make_product
from .lsq import assemble, error_norm, estimate, solve
from .mesh import refine_nvb


def mark_doerfler(eta, theta: float = 0.5) -> set[int]:
    """Smallest set carrying a ``theta`` fraction of ``sum(eta**2)``.

    Elements are taken greedily by decreasing ``eta`` (ties by index), which
    yields a set of minimal cardinality.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.size == 0:
        raise ValueError("empty estimator")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if np.any(eta < 0):
        raise ValueError("estimator values must be non-negative")
    sq = eta**2
    total = sq.sum()
    if total == 0:
        return set()
    if theta == 1:
        return set(np.flatnonzero(sq > 0).tolist())
    order = np.lexsort((np.arange(len(eta)), -sq))
    csum = np.cumsum(sq[order])
    n = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return set(order[:n].tolist())


def mark_maximum(eta, sigma: float = 0.5) -> set[int]:
    """Elements with ``eta_K >= sigma * max(eta)``; empty if all are zero."""
    eta = np.asarray(eta, dtype=float)
    if eta.size == 0:
        raise ValueError("empty estimator")
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    top = eta.max()
    if top <= 0:
        return set()
    return set(np.flatnonzero(eta >= sigma * top).tolist())


def marking_gap(eta, marked, strategy: str, param: float) -> float:
    """``g(max marked eta) - max unmarked eta``; non-negative iff the marking assumption holds.

    ``g(s) = s`` for Doerfler marking and ``g(s) = sigma * s`` for the maximum strategy.
    """
    eta = np.asarray(eta, dtype=float)
    marked = np.array(sorted(marked), dtype=np.int64)
    unmarked = np.setdiff1d(np.arange(len(eta)), marked)
    top_m = eta[marked].max() if marked.size else 0.0
    top_u = eta[unmarked].max() if unmarked.size else 0.0
    g = top_m if strategy == "doerfler" else param * top_m
    return float(g - top_u)


@dataclass
class LevelRecord:
    level: int
    ndof: int
    eta: float
    error: float | None
    seconds: float
    local_eta: np.ndarray = field(repr=False, default=None)


@dataclass
class ConvergenceRecord:
    levels: list = field(default_factory=list)
    meshes: list = field(default_factory=list, repr=False)
    solution: np.ndarray | None = field(default=None, repr=False)
    reason: str = ""

    @property
    def ndof(self) -> np.ndarray:
        return np.array([r.ndof for r in self.levels])

    @property
    def eta(self) -> np.ndarray:
        return np.array([r.eta for r in self.levels])

    @property
    def error(self) -> np.ndarray:
        return np.array([np.nan if r.error is None else r.error for r in self.levels])

    def rate(self, last: int = 4) -> float:
        """Least-squares slope of log eta against log ndof over the last levels."""
        n, e = self.ndof[-last:], self.eta[-last:]
        ok = (n > 0) & (e > 0)
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(n[ok]), np.log(e[ok]), 1)[0])

    def write_csv(self, path, timing: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "ndof", "eta", "error", "seconds"])
            for r in self.levels:
                w.writerow([r.level, r.ndof, repr(r.eta), "" if r.error is None else repr(r.error),
                            f"{r.seconds:.6f}" if timing else ""])


class AfemError(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


def afem_run(sys, tag: str, mesh0, strategy: str = "doerfler", param: float = 0.5, tol: float = 0.0,
             max_levels: int = 10, max_ndof: int | None = None, exact=None, solver: str = "direct",
             keep_meshes: bool = False, all_edges: bool = True) -> ConvergenceRecord:
    """Adaptive loop: solve on the current mesh, estimate, mark, refine by NVB.

    Marked triangles have all their edges bisected by default
    (``all_edges=False`` bisects only the refinement edge); the uniform
    strategy marks every triangle.  Stops when ``eta <= tol``, after ``max_levels`` levels, when the number of
    DOFs exceeds ``max_ndof``, or when nothing is marked.
    """
    if strategy not in ("doerfler", "maximum", "uniform"):
        raise ValueError(f"unknown marking strategy {strategy!r}")
    if max_levels < 1:
        raise ValueError("max_levels must be positive")
    record = ConvergenceRecord()
    mesh = mesh0
    for level in range(max_levels):
        t0 = time.perf_counter()
        space = make_product(mesh, tag)
        try:
            u = solve(assemble(sys, space), solver)
        except Exception as err:
            raise AfemError(f"level {level}: {err}", record) from err
        est = estimate(sys, space, u)
        err = error_norm(sys, space, u, exact) if exact is not None else None
        record.levels.append(LevelRecord(level, space.total_dim, est.eta, err, time.perf_counter() - t0, est.local))
        record.solution = u
        if keep_meshes:
            record.meshes.append(mesh)
        if est.eta <= tol:
            record.reason = "tolerance"
            break
        if max_ndof is not None and space.total_dim > max_ndof:
            record.reason = "max_ndof"
            break
        if level == max_levels - 1:
            record.reason = "max_levels"
            break
        if strategy == "doerfler":
            marked = mark_doerfler(est.local, param)
        elif strategy == "maximum":
            marked = mark_maximum(est.local, param)
        else:
            marked = set(range(mesh.n_triangles))
        if not marked:
            record.reason = "nothing marked"
            break
        mesh = refine_nvb(mesh, marked, all_edges=all_edges)
    if not keep_meshes:
        record.meshes = [mesh]
    return record
