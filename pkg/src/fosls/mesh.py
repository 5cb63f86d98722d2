"""Conforming 2D simplicial meshes with newest-vertex bisection.

Triangles are stored counter-clockwise.  Local edge ``j`` of a triangle is
the edge opposite local vertex ``j``; ``refinement_edge[k]`` is the local
index of the NVB refinement edge of triangle ``k``.

Ownership of points on shared edges and vertices follows a fixed generic
direction ``w``: a point ``x`` belongs to the triangle containing
``x + eps * w`` for all small ``eps > 0``.  Per triangle this is a
conjunction of three half-plane tests (strict or non-strict depending on the
sign of ``grad(lambda_j) . w``), which is what the BiSU indicator networks
realize.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

BOUNDARY_LABELS = ("dirichlet", "free", "initial", "final", "lateral")

_OWNERSHIP_ANGLES = (0.5, 0.61, 0.37, 0.71, 0.29)


@dataclass(frozen=True)
class EntitySet:
    kind: str
    items: np.ndarray
    multiplicity: np.ndarray

    def __len__(self) -> int:
        return len(self.items)

    @property
    def max_multiplicity(self) -> int:
        return int(self.multiplicity.max()) if len(self.multiplicity) else 0


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    refinement_edge: np.ndarray
    boundary: dict = field(default_factory=dict)
    generation: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (n, 2)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle references a missing vertex")
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        area2 = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        scale = np.maximum(np.abs(p1 - p0).max(1), np.abs(p2 - p0).max(1)) ** 2
        if np.any(np.abs(area2) <= 1e-14 * scale):
            bad = int(np.flatnonzero(np.abs(area2) <= 1e-14 * scale)[0])
            raise ValueError(f"degenerate triangle {bad}")
        ref = np.ascontiguousarray(self.refinement_edge, dtype=np.int64)
        flip = area2 < 0
        if flip.any():
            # swap local vertices 1 and 2 to make the orientation positive
            t = t.copy()
            t[flip, 1], t[flip, 2] = t[flip, 2].copy(), t[flip, 1].copy()
            ref = ref.copy()
            r = ref[flip]
            ref[flip] = np.where(r == 1, 2, np.where(r == 2, 1, r))
        gen = (np.zeros(len(t), dtype=np.int64) if self.generation is None
               else np.ascontiguousarray(self.generation, dtype=np.int64))
        bnd = {tuple(sorted(map(int, e))): str(lab) for e, lab in self.boundary.items()}
        for lab in bnd.values():
            if lab not in BOUNDARY_LABELS:
                raise ValueError(f"unknown boundary label {lab!r}")
        for arr in (v, t, ref, gen):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "refinement_edge", ref)
        object.__setattr__(self, "generation", gen)
        object.__setattr__(self, "boundary", bnd)

    # basic geometry -------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def barycentric_maps(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine maps with ``lambda = G[k] @ x + c[k]`` for every triangle ``k``."""
        p = self.vertices[self.triangles]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        Binv = np.linalg.inv(B)
        G = np.empty((self.n_triangles, 3, 2))
        G[:, 1:, :] = Binv
        G[:, 0, :] = -Binv.sum(axis=1)
        c = -np.einsum("kij,kj->ki", G, p[:, 0])
        c[:, 0] += 1.0
        return G, c

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    # topology -------------------------------------------------------------
    @cached_property
    def _edge_data(self):
        t = self.triangles
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)  # edge j opposite vertex j
        local = np.sort(local, axis=2)
        flat = local.reshape(-1, 2)
        edges, inverse = np.unique(flat, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        tri_edges = inverse.reshape(-1, 3)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        tri_idx = np.repeat(np.arange(len(t)), 3)
        order = np.lexsort((tri_idx, inverse))
        inv_sorted, tri_sorted = inverse[order], tri_idx[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv_sorted[1:] != inv_sorted[:-1]
        edge_tris[inv_sorted[first], 0] = tri_sorted[first]
        edge_tris[inv_sorted[~first], 1] = tri_sorted[~first]
        if np.bincount(inverse, minlength=len(edges)).max() > 2:
            raise ValueError("non-manifold mesh: an edge is shared by more than two triangles")
        return edges, tri_edges, edge_tris

    @property
    def edges(self) -> np.ndarray:
        """Edges as lexicographically sorted vertex pairs ``(i, j)``, ``i < j``."""
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """``tri_edges[k, j]``: global index of the edge opposite local vertex ``j``."""
        return self._edge_data[1]

    @property
    def edge_tris(self) -> np.ndarray:
        """Adjacent triangles per edge, ascending, ``-1`` for the missing one."""
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    @cached_property
    def edge_labels(self) -> np.ndarray:
        """Label per edge; ``""`` for interior edges, ``"dirichlet"`` if unlabelled."""
        labels = np.full(len(self.edges), "", dtype=object)
        for e in self.boundary_edges:
            labels[e] = self.boundary.get(tuple(self.edges[e]), "dirichlet")
        return labels

    @property
    def labels(self) -> set[str]:
        return {str(x) for x in self.edge_labels[self.boundary_edges]}

    @cached_property
    def vertex_tris(self) -> list[np.ndarray]:
        t = self.triangles.reshape(-1)
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(t, kind="stable")
        split = np.cumsum(np.bincount(t, minlength=self.n_vertices))[:-1]
        return np.split(tri[order], split)

    def is_conforming(self) -> bool:
        """True if no vertex lies in the relative interior of an edge (hanging node)."""
        try:
            edges = self.edges
        except ValueError:
            return False
        v = self.vertices
        a, b = v[edges[:, 0]], v[edges[:, 1]]
        for i, p in enumerate(v):
            d = b - a
            s = np.einsum("ij,ij->i", p - a, d) / np.einsum("ij,ij->i", d, d)
            cross = d[:, 0] * (p - a)[:, 1] - d[:, 1] * (p - a)[:, 0]
            inside = (s > 1e-12) & (s < 1 - 1e-12) & (np.abs(cross) <= 1e-12 * np.einsum("ij,ij->i", d, d))
            if inside.any():
                return False
        return True

    # ownership / point location ---------------------------------------------
    @cached_property
    def ownership_direction(self) -> np.ndarray:
        G, _ = self.barycentric_maps
        grads = G.reshape(-1, 2)
        gnorm = np.linalg.norm(grads, axis=1)
        for ang in _OWNERSHIP_ANGLES:
            w = np.array([np.cos(ang), np.sin(ang)])
            if np.all(np.abs(grads @ w) > 1e-6 * gnorm):
                return w
        raise ValueError("no admissible ownership direction for this mesh")

    @cached_property
    def closed_faces(self) -> np.ndarray:
        """``closed_faces[k, j]``: the half-plane test for local edge ``j`` is ``>= 0``."""
        G, _ = self.barycentric_maps
        return (G @ self.ownership_direction) > 0

    def owns(self, k: int, x: np.ndarray) -> np.ndarray:
        """Ownership test of triangle ``k`` for points ``x`` of shape (n, 2)."""
        G, c = self.barycentric_maps
        lam = np.atleast_2d(x) @ G[k].T + c[k]
        closed = self.closed_faces[k]
        ok = np.where(closed, lam >= 0, lam > 0)
        return ok.all(axis=1)

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Owning triangle per point (``-1`` if outside the mesh).

        Points on the domain boundary that no triangle owns in the direction
        ``w`` fall back to the smallest-index closed triangle containing them.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        G, c = self.barycentric_maps
        out = np.full(len(x), -1, dtype=np.int64)
        closed = self.closed_faces
        chunk = max(1, 2_000_000 // max(1, self.n_triangles * 3))
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            lam = np.einsum("kjd,nd->nkj", G, xs) + c[None]
            own = np.where(closed[None], lam >= 0, lam > 0).all(axis=2)
            has = own.any(axis=1)
            idx = np.where(has, own.argmax(axis=1), -1)
            if (~has).any():
                inside = (lam >= -1e-12).all(axis=2)
                fb = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
                idx = np.where(has, idx, fb)
            out[s:s + chunk] = idx
        return out

    def contains(self, k: int, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        G, c = self.barycentric_maps
        lam = np.atleast_2d(x) @ G[k].T + c[k]
        return (lam >= -tol).all(axis=1)

    def to_physical(self, k, ref_points: np.ndarray) -> np.ndarray:
        """Map barycentric points (q, 3) into triangles ``k`` -> (len(k), q, 2)."""
        p = self.vertices[self.triangles[np.atleast_1d(k)]]
        return np.einsum("qj,kjd->kqd", ref_points, p)

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        bnd = sorted(self.boundary.items())
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "refine_edge": self.refinement_edge.tolist(),
            "generation": self.generation.tolist(),
            "boundary": [[int(e[0]), int(e[1]), lab] for e, lab in bnd],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimplicialMesh":
        try:
            bnd = {(int(a), int(b)): lab for a, b, lab in data.get("boundary", [])}
            return cls(np.array(data["vertices"], dtype=float), np.array(data["triangles"], dtype=np.int64),
                       np.array(data["refine_edge"], dtype=np.int64), bnd, data.get("generation"))
        except (KeyError, TypeError) as err:
            raise ValueError(f"malformed mesh data: {err}") from err


def _longest_edge_init(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    lengths = np.stack([np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                        np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
                        np.linalg.norm(p[:, 0] - p[:, 1], axis=1)], axis=1)
    ref = np.empty(len(triangles), dtype=np.int64)
    for k in range(len(triangles)):
        L = lengths[k]
        cand = np.flatnonzero(L >= L.max() * (1 - 1e-12))
        # tie break: smallest opposite-vertex index
        ref[k] = cand[np.argmin(triangles[k, cand])]
    return ref


def make_mesh(vertices, triangles, boundary=None, refinement_edge=None) -> SimplicialMesh:
    """Build a mesh; refinement edges default to the longest edge of each triangle."""
    v = np.asarray(vertices, dtype=float)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if t.size and (t.min() < 0 or t.max() >= len(v)):
        raise ValueError("triangle references a missing vertex")
    ref = _longest_edge_init(v, t) if refinement_edge is None else refinement_edge
    mesh = SimplicialMesh(v, t, ref, boundary or {})
    if boundary is None:
        mesh = SimplicialMesh(v, mesh.triangles, mesh.refinement_edge,
                              {tuple(mesh.edges[e]): "dirichlet" for e in mesh.boundary_edges})
    return mesh


def build_reference_mesh(name: str, T: float = 1.0) -> SimplicialMesh:
    """Fixture meshes: ``unit_square``, ``l_shape`` and ``spacetime_rect``.

    For ``spacetime_rect`` the first coordinate is time ``t in [0, T]`` and the
    second is space ``x in [0, 1]``; boundary edges are labelled ``initial``
    (t = 0), ``final`` (t = T) and ``lateral`` (x in {0, 1}).
    """
    if name == "unit_square":
        return make_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    if name == "l_shape":
        v = [[-1, -1], [0, -1], [-1, 0], [0, 0], [1, 0], [-1, 1], [0, 1], [1, 1]]
        t = [[0, 1, 3], [0, 3, 2], [2, 3, 5], [3, 6, 5], [3, 4, 7], [3, 7, 6]]
        return make_mesh(v, t)
    if name == "spacetime_rect":
        if not T > 0:
            raise ValueError("spacetime_rect needs T > 0")
        v = [[0, 0], [T, 0], [T, 1], [0, 1]]
        bnd = {(0, 1): "lateral", (2, 3): "lateral", (1, 2): "final", (0, 3): "initial"}
        return make_mesh(v, [[0, 1, 2], [0, 2, 3]], boundary=bnd)
    raise ValueError(f"unknown reference mesh {name!r}")


def refine_nvb(mesh: SimplicialMesh, marked, all_edges: bool = False) -> SimplicialMesh:
    """Newest-vertex bisection of the marked triangles plus conformity closure.

    By default each marked triangle is bisected once along its refinement
    edge.  With ``all_edges=True`` all three edges of a marked triangle are
    split, so it is replaced by four children of half the size.
    """
    marked = np.asarray(sorted(set(int(k) for k in marked)), dtype=np.int64)
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise ValueError("marked triangle index out of range")
    tri_edges = mesh.tri_edges
    ref_edge = tri_edges[np.arange(mesh.n_triangles), mesh.refinement_edge]
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[tri_edges[marked].reshape(-1) if all_edges else ref_edge[marked]] = True
    while True:
        need = edge_marked[tri_edges].any(axis=1) & ~edge_marked[ref_edge]
        if not need.any():
            break
        edge_marked[ref_edge[need]] = True

    verts = [row for row in mesh.vertices]
    midpoint = {}
    for e in np.flatnonzero(edge_marked):
        a, b = mesh.edges[e]
        midpoint[(int(a), int(b))] = len(verts)
        verts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))

    new_tris, new_ref, new_gen = [], [], []

    def bisect(tri, r, gen):
        a, b, c = tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]
        m = midpoint.get((min(b, c), max(b, c)))
        if m is None:
            new_tris.append(tri)
            new_ref.append(r)
            new_gen.append(gen)
            return
        bisect((a, b, m), 2, gen + 1)
        bisect((a, m, c), 1, gen + 1)

    for k in range(mesh.n_triangles):
        bisect(tuple(int(i) for i in mesh.triangles[k]), int(mesh.refinement_edge[k]), int(mesh.generation[k]))

    boundary = {}
    for e, lab in mesh.boundary.items():
        m = midpoint.get(e)
        if m is None:
            boundary[e] = lab
        else:
            boundary[(min(e[0], m), max(e[0], m))] = lab
            boundary[(min(e[1], m), max(e[1], m))] = lab
    return SimplicialMesh(np.array(verts), np.array(new_tris), np.array(new_ref), boundary, np.array(new_gen))


def refine_uniform(mesh: SimplicialMesh, times: int = 1) -> SimplicialMesh:
    """Each step splits every edge once, halving the mesh width (two NVB sweeps)."""
    for _ in range(times):
        mesh = refine_nvb(mesh, range(mesh.n_triangles), all_edges=True)
    return mesh


def entities(mesh: SimplicialMesh, kind: str) -> EntitySet:
    """Vertices, edges or triangles with multiplicities ``s(i)``."""
    if kind == "vertex":
        s = np.bincount(mesh.triangles.reshape(-1), minlength=mesh.n_vertices)
        return EntitySet(kind, np.arange(mesh.n_vertices), s)
    if kind == "edge":
        s = (mesh.edge_tris >= 0).sum(axis=1)
        return EntitySet(kind, mesh.edges, s)
    if kind == "triangle":
        return EntitySet(kind, np.arange(mesh.n_triangles), np.ones(mesh.n_triangles, dtype=np.int64))
    raise ValueError(f"unknown entity kind {kind!r}")


def patch(mesh: SimplicialMesh, k: int) -> set[int]:
    """Triangles sharing at least one vertex with triangle ``k`` (including ``k``)."""
    if not 0 <= k < mesh.n_triangles:
        raise ValueError(f"triangle index {k} out of range")
    return set(np.concatenate([mesh.vertex_tris[v] for v in mesh.triangles[k]]).tolist())


def shape_regularity(mesh: SimplicialMesh) -> float:
    """Minimum interior angle over all triangles (radians)."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for j in range(3):
        u = p[:, (j + 1) % 3] - p[:, j]
        v = p[:, (j + 2) % 3] - p[:, j]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.min(angles))


# file formats -------------------------------------------------------------
def write_json(mesh: SimplicialMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_dict()))


def read_json(path) -> SimplicialMesh:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON ({err})") from err
    return SimplicialMesh.from_dict(data)


def _data_lines(path):
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.split()


def read_triangle(node_path, ele_path=None) -> SimplicialMesh:
    """Read a Triangle-style ``.node``/``.ele`` pair; boundary edges become ``dirichlet``."""
    node_path = Path(node_path)
    ele_path = Path(ele_path) if ele_path else node_path.with_suffix(".ele")
    lines = _data_lines(node_path)
    n, dim = (int(x) for x in next(lines)[:2])
    if dim != 2:
        raise ValueError(f"{node_path}: only 2D meshes are supported")
    ids, coords = [], []
    for _ in range(n):
        row = next(lines)
        ids.append(int(row[0]))
        coords.append([float(row[1]), float(row[2])])
    base = min(ids)
    order = np.argsort(ids)
    vertices = np.array(coords)[order]
    lines = _data_lines(ele_path)
    m, npe = (int(x) for x in next(lines)[:2])
    if npe != 3:
        raise ValueError(f"{ele_path}: only linear triangles are supported")
    tris = [[int(x) - base for x in next(lines)[1:4]] for _ in range(m)]
    return make_mesh(vertices, tris)
