"""Lowest-order S1, S0 and RT0 spaces and their Cartesian products.

Local evaluation returns *jets*: arrays whose last axis holds
``(value, d/dx0, d/dx1)``.  For space-time problems ``x0`` is time.

RT0 shape functions are normalized to unit flux, ``int_e theta_e . n_e = 1``,
with ``n_e`` pointing out of the lower-index adjacent triangle (outward on the
boundary).  On a triangle ``K`` with edge ``e`` opposite vertex ``p``,
``theta_e = s (x - p) / (2|K|)`` and ``div theta_e = s / |K|`` where
``s = +1`` if ``K`` is the lower-index neighbour of ``e`` and ``-1`` otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import BOUNDARY_LABELS, SimplicialMesh
from .quadrature import segment_rule

KINDS = ("S1", "S0", "RT0")
PROBLEMS = ("poisson", "helmholtz", "elasticity", "heat", "wave", "ocp_poisson")

_NCOMP = {"S1": 1, "S0": 1, "RT0": 2}
_NLOC = {"S1": 3, "S0": 1, "RT0": 3}
_ENTITY = {"S1": "vertex", "S0": "triangle", "RT0": "edge"}


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: SimplicialMesh
    kind: str
    dirichlet: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        labels = frozenset(self.dirichlet)
        unknown = labels - set(BOUNDARY_LABELS)
        if unknown:
            raise ValueError(f"unknown boundary label(s) {sorted(unknown)}")
        object.__setattr__(self, "dirichlet", labels)

    @property
    def ncomp(self) -> int:
        return _NCOMP[self.kind]

    @property
    def nloc(self) -> int:
        return _NLOC[self.kind]

    @property
    def entity_kind(self) -> str:
        return _ENTITY[self.kind]

    @property
    def n_entities(self) -> int:
        m = self.mesh
        return {"S1": m.n_vertices, "S0": m.n_triangles, "RT0": len(m.edges)}[self.kind]

    @cached_property
    def bc_mask(self) -> np.ndarray:
        """Boolean mask of entities removed by homogeneous essential conditions."""
        mask = np.zeros(self.n_entities, dtype=bool)
        if self.kind == "S1" and self.dirichlet:
            m = self.mesh
            be = m.boundary_edges
            hit = be[np.isin(m.edge_labels[be], list(self.dirichlet))]
            mask[m.edges[hit].reshape(-1)] = True
        return mask

    @cached_property
    def dof_entities(self) -> np.ndarray:
        return np.flatnonzero(~self.bc_mask)

    @cached_property
    def dof_index(self) -> np.ndarray:
        idx = np.full(self.n_entities, -1, dtype=np.int64)
        idx[self.dof_entities] = np.arange(len(self.dof_entities))
        return idx

    @property
    def dim(self) -> int:
        return len(self.dof_entities)

    @cached_property
    def local_entities(self) -> np.ndarray:
        m = self.mesh
        if self.kind == "S1":
            return m.triangles
        if self.kind == "S0":
            return np.arange(m.n_triangles)[:, None]
        return m.tri_edges

    @cached_property
    def local_dofs(self) -> np.ndarray:
        """Global DOF per (triangle, local slot); ``-1`` for masked entities."""
        return self.dof_index[self.local_entities]

    @cached_property
    def local_signs(self) -> np.ndarray:
        if self.kind != "RT0":
            return np.ones(self.local_entities.shape)
        own = self.mesh.edge_tris[self.local_entities, 0]
        return np.where(own == np.arange(self.mesh.n_triangles)[:, None], 1.0, -1.0)

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit normal per edge, pointing out of the lower-index adjacent triangle."""
        m = self.mesh
        a, b = m.vertices[m.edges[:, 0]], m.vertices[m.edges[:, 1]]
        d = b - a
        n = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
        k = m.edge_tris[:, 0]
        centroid = m.vertices[m.triangles[k]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, centroid - a) > 0
        n[flip] *= -1
        return n

    def local_jets(self, tris: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Jets of the local shape functions.

        Parameters
        ----------
        tris : (nk,) triangle indices
        lam : (nq, 3) or (nk, nq, 3) barycentric coordinates

        Returns
        -------
        (nk, nq, nloc, ncomp, 3) array.
        """
        m = self.mesh
        tris = np.atleast_1d(np.asarray(tris, dtype=np.int64))
        lam = np.broadcast_to(lam, (len(tris),) + np.shape(lam)[-2:])
        nk, nq = lam.shape[:2]
        out = np.zeros((nk, nq, self.nloc, self.ncomp, 3))
        if self.kind == "S0":
            out[..., 0, 0, 0] = 1.0
        elif self.kind == "S1":
            G, _ = m.barycentric_maps
            out[..., :, 0, 0] = lam
            out[..., :, 0, 1:] = G[tris][:, None]
        else:
            p = m.vertices[m.triangles[tris]]  # (nk, 3, 2)
            x = np.einsum("kqj,kjd->kqd", lam, p)
            scale = self.local_signs[tris] / (2.0 * m.areas[tris][:, None])  # (nk, 3)
            diff = x[:, :, None, :] - p[:, None, :, :]  # (nk, nq, 3, 2)
            out[..., 0] = scale[:, None, :, None] * diff
            for c in range(2):
                out[..., c, 1 + c] = scale[:, None, :]
        return out

    def eval_shape(self, i: int, K: int, x) -> np.ndarray:
        """Jet of shape function ``i`` (a DOF index) at point ``x`` in triangle ``K``.

        Returns an array of shape (ncomp, 3); zero if ``i`` is not supported on ``K``.
        """
        x = np.asarray(x, dtype=float)
        if not self.mesh.contains(K, x[None])[0]:
            raise ValueError(f"point {x.tolist()} is not in triangle {K}")
        if not 0 <= i < self.dim:
            raise ValueError(f"DOF index {i} out of range")
        G, c = self.mesh.barycentric_maps
        lam = (G[K] @ x + c[K])[None, None]
        jets = self.local_jets([K], lam)[0, 0]
        slot = np.flatnonzero(self.local_dofs[K] == i)
        if slot.size == 0:
            return np.zeros((self.ncomp, 3))
        return jets[slot[0]]

    def interpolate(self, f) -> np.ndarray:
        """Canonical interpolant of a vectorized field ``f(x)`` with ``x`` of shape (n, 2).

        S1 uses vertex values, S0 centroid values and RT0 normal fluxes
        ``int_e f . n_e ds`` (Gauss-Legendre, degree 9).
        """
        m = self.mesh
        if self.kind == "S1":
            vals = np.asarray(f(m.vertices), dtype=float).reshape(-1)
        elif self.kind == "S0":
            vals = np.asarray(f(m.vertices[m.triangles].mean(axis=1)), dtype=float).reshape(-1)
        else:
            rule = segment_rule(9)
            a, b = m.vertices[m.edges[:, 0]], m.vertices[m.edges[:, 1]]
            length = np.linalg.norm(b - a, axis=1)
            pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
            fv = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(len(a), len(rule), 2)
            vals = np.einsum("eqd,ed,q->e", fv, self.edge_normals, rule.weights) * length
        return vals[self.dof_entities]


def make_space(mesh: SimplicialMesh, kind: str, dirichlet=()) -> FeSpace:
    if isinstance(dirichlet, str):
        dirichlet = (dirichlet,)
    return FeSpace(mesh, kind, frozenset(dirichlet))


@dataclass(frozen=True, eq=False)
class ProductSpace:
    """Tagged Cartesian product; components are the scalar components of all factors in order."""

    factors: tuple
    tag: str = ""

    def __post_init__(self):
        meshes = {id(f.mesh) for f, _ in self.factors}
        if len(meshes) != 1:
            raise ValueError("all factors must live on the same mesh")

    @property
    def mesh(self) -> SimplicialMesh:
        return self.factors[0][0].mesh

    @property
    def spaces(self) -> list:
        return [f for f, _ in self.factors]

    @property
    def names(self) -> list:
        return [n for _, n in self.factors]

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([f.dim for f in self.spaces])])

    @property
    def total_dim(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def comp_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([f.ncomp for f in self.spaces])])

    @property
    def ncomp(self) -> int:
        return int(self.comp_offsets[-1])

    @property
    def nloc(self) -> int:
        return sum(f.nloc for f in self.spaces)

    def factor_of(self, dof: int) -> tuple[int, int]:
        """(factor index, local DOF index) of a global DOF."""
        k = int(np.searchsorted(self.offsets, dof, side="right") - 1)
        return k, int(dof - self.offsets[k])

    def split(self, coeffs) -> list:
        coeffs = np.asarray(coeffs)
        return [coeffs[self.offsets[k]:self.offsets[k + 1]] for k in range(len(self.factors))]

    @cached_property
    def local_dofs(self) -> np.ndarray:
        blocks = []
        for f, off in zip(self.spaces, self.offsets):
            d = f.local_dofs
            blocks.append(np.where(d >= 0, d + off, -1))
        return np.concatenate(blocks, axis=1)

    def local_jets(self, tris, lam) -> np.ndarray:
        """(nk, nq, nloc, ncomp, 3) jets with each factor placed in its component block."""
        tris = np.atleast_1d(np.asarray(tris, dtype=np.int64))
        nq = np.shape(lam)[-2]
        out = np.zeros((len(tris), nq, self.nloc, self.ncomp, 3))
        s = 0
        for f, c0 in zip(self.spaces, self.comp_offsets):
            out[:, :, s:s + f.nloc, c0:c0 + f.ncomp] = f.local_jets(tris, lam)
            s += f.nloc
        return out

    def evaluate_local(self, coeffs, tris, lam) -> np.ndarray:
        """Jets of the FE function ``coeffs`` at barycentric points: (nk, nq, ncomp, 3)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.total_dim,):
            raise ValueError(f"expected {self.total_dim} coefficients, got {coeffs.shape}")
        tris = np.atleast_1d(np.asarray(tris, dtype=np.int64))
        ld = self.local_dofs[tris]
        c = np.where(ld >= 0, coeffs[np.maximum(ld, 0)], 0.0) if self.total_dim else np.zeros(ld.shape)
        return np.einsum("kqlcj,kl->kqcj", self.local_jets(tris, lam), c)

    def evaluate(self, coeffs, x, tris=None) -> np.ndarray:
        """Jets at physical points (n, 2); owners located unless ``tris`` is given."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tris = self.mesh.locate(x) if tris is None else np.asarray(tris)
        if np.any(tris < 0):
            raise ValueError("evaluation point outside the mesh")
        G, c = self.mesh.barycentric_maps
        lam = np.einsum("njd,nd->nj", G[tris], x) + c[tris]
        return self.evaluate_local(coeffs, tris, lam[:, None, :])[:, 0]

    def interpolate(self, fields) -> np.ndarray:
        """Interpolate one vectorized field per factor."""
        if len(fields) != len(self.factors):
            raise ValueError("need one field per factor")
        return np.concatenate([f.interpolate(g) for f, g in zip(self.spaces, fields)])


def make_product(mesh: SimplicialMesh, tag: str) -> ProductSpace:
    """Product space for a problem family.

    poisson/helmholtz: (u, sigma) in S1_0 x RT0; elasticity: (u1, u2, sigma_1,
    sigma_2) with sigma_i the rows of the stress; heat/wave: S1 with lateral
    Dirichlet condition times S1; ocp_poisson: two copies of the Poisson product.
    """
    if tag in ("poisson", "helmholtz"):
        f = [(make_space(mesh, "S1", "dirichlet"), "u"), (make_space(mesh, "RT0"), "sigma")]
    elif tag == "elasticity":
        s1 = make_space(mesh, "S1", "dirichlet")
        rt = make_space(mesh, "RT0")
        f = [(s1, "u1"), (s1, "u2"), (rt, "sigma1"), (rt, "sigma2")]
    elif tag in ("heat", "wave"):
        names = ("u1", "u2") if tag == "heat" else ("v", "sigma")
        f = [(make_space(mesh, "S1", "lateral"), names[0]), (make_space(mesh, "S1"), names[1])]
    elif tag == "ocp_poisson":
        s1 = make_space(mesh, "S1", "dirichlet")
        rt = make_space(mesh, "RT0")
        f = [(s1, "u"), (rt, "sigma_y"), (s1, "p"), (rt, "sigma_p")]
    elif tag == "maxwell":
        raise ValueError("maxwell needs three-dimensional Nedelec spaces and is not supported")
    else:
        raise ValueError(f"unknown problem tag {tag!r}")
    return ProductSpace(tuple(f), tag)
