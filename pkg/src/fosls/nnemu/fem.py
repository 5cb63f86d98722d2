"""Networks realizing S0, S1 and RT0 shape functions and FoSLS product spaces.

Constructions (input ``x`` in R^2):

* ``indicator_net(mesh, K)``: three BiSU half-plane tests, one BiSU counting
  neuron, identity output (depth 3).  The tests are strict or non-strict
  according to the mesh ownership direction, so the indicators of all
  triangles partition the domain.
* S1 / RT0 shape functions: ``sum_{K ~ i} mult(a_{iK}(x), 1_K(x))`` where
  ``a_{iK}`` is the local affine (vector) piece and ``mult`` is the
  ReLU product-with-a-step net, joined by a sparse concatenation (depth 5).
* ReLU-only S1: ``hat_i = ReLU(min_{K ~ i} lambda_{i,K})`` with a binary
  tree of ReLU minima, validated against the FE hat by sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from ..fespace import FeSpace, ProductSpace
from ..lsq import _edge_bary, assemble, initial_edges, solve
from ..quadrature import segment_rule
from .core import (BISU, ID, RELU, Layer, NeuralNet, _layer, concat, identity_net, mult_by_step_net,
                   parallelize, sparse_concat, sum_nn)


def indicator_net(mesh, K: int) -> NeuralNet:
    """BiSU network equal to 1 on the owned part of triangle ``K`` and 0 elsewhere."""
    G, c = mesh.barycentric_maps
    closed = mesh.closed_faces[K]
    sign = np.where(closed, -1.0, 1.0)
    A1 = sign[:, None] * G[K]
    b1 = sign * c[K]
    # open tests must fire, closed tests must stay silent
    A2 = np.where(closed, -1.0, 1.0)[None, :]
    b2 = np.array([closed.sum() - 2.5])
    return NeuralNet([_layer(A1, b1, BISU), _layer(A2, b2, BISU), _layer(np.eye(1), np.zeros(1), ID)])


def _local_affine(space: FeSpace, K: int, slot: int) -> tuple[np.ndarray, np.ndarray]:
    """Affine piece ``a(x) = P x + q`` of local shape function ``slot`` on ``K`` (all components)."""
    m = space.mesh
    if space.kind == "S1":
        G, c = m.barycentric_maps
        return G[K, slot][None, :], np.array([c[K, slot]])
    p = m.vertices[m.triangles[K, slot]]
    s = space.local_signs[K, slot] / (2.0 * m.areas[K])
    return s * np.eye(2), -s * p


def _kappa(space: FeSpace, P, q) -> float:
    vals = space.mesh.vertices @ P.T + q
    return float(np.abs(vals).max()) + 1.0


def _piece_net(space: FeSpace, K: int, slot: int) -> NeuralNet:
    P, q = _local_affine(space, K, slot)
    d = len(q)
    I = sps.identity(d, format="csr")
    carry = NeuralNet([_layer(P, q, ID), Layer(I, np.zeros(d), ID), Layer(I, np.zeros(d), ID)])
    inner = parallelize(carry, indicator_net(space.mesh, K))
    return sparse_concat(mult_by_step_net(_kappa(space, P, q), d), inner)


def _support(space: FeSpace):
    """Per DOF, the list of (triangle, local slot) pairs of its support."""
    ld = space.local_dofs
    k, s = np.nonzero(ld >= 0)
    dofs = ld[k, s]
    order = np.lexsort((k, dofs))
    pairs = [[] for _ in range(space.dim)]
    for i in order:
        pairs[dofs[i]].append((int(k[i]), int(s[i])))
    return pairs


def basis_net(space: FeSpace, relu_only: bool = False) -> NeuralNet:
    """Network whose outputs are all shape functions of ``space``.

    Output rows are DOF-major; RT0 DOFs contribute two rows (components).
    """
    if space.dim == 0:
        raise ValueError("space has no degrees of freedom")
    if relu_only:
        if space.kind != "S1":
            raise ValueError("the ReLU-only construction exists for S1 only")
        return s1_relu_basis_net(space)
    if space.kind == "S0":
        return parallelize(*[indicator_net(space.mesh, int(K)) for K in space.dof_entities])
    # one block-diagonal pass over all pieces, then sum the pieces of each DOF
    support = _support(space)
    pieces = [_piece_net(space, K, s) for pairs in support for K, s in pairs]
    owner = np.repeat(np.arange(space.dim), [len(p) for p in support])
    out = pieces[0].output_dim
    rows = (owner[:, None] * out + np.arange(out)).reshape(-1)
    S = sps.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(space.dim * out, len(rows)))
    P = parallelize(*pieces)
    last = P.layers[-1]
    return NeuralNet(P.layers[:-1] + (Layer((S @ last.A).tocsr(), S @ last.b, last.act[:space.dim * out]),))


# ReLU-only hats ---------------------------------------------------------------
def _min_tree_net(P: np.ndarray, q: np.ndarray) -> NeuralNet:
    """``ReLU(min_k (P_k x + q_k))`` via pairwise minima ``min(a, b) = a - ReLU(a - b)``."""
    # current values as affine maps of the previous layer's output
    V, v0 = P, q
    layers = []
    while len(v0) > 1:
        rows, bias, combos = [], [], []
        n = 0
        for k in range(0, len(v0) - 1, 2):
            a, b = (V[k], v0[k]), (V[k + 1], v0[k + 1])
            rows += [a[0] - b[0], a[0], -a[0]]
            bias += [a[1] - b[1], a[1], -a[1]]
            combos.append({n: -1.0, n + 1: 1.0, n + 2: -1.0})
            n += 3
        if len(v0) % 2:
            rows += [V[-1], -V[-1]]
            bias += [v0[-1], -v0[-1]]
            combos.append({n: 1.0, n + 1: -1.0})
            n += 2
        layers.append(_layer(np.array(rows), np.array(bias), RELU))
        V = np.zeros((len(combos), n))
        for r, combo in enumerate(combos):
            for j, w in combo.items():
                V[r, j] = w
        v0 = np.zeros(len(combos))
    layers.append(_layer(V, v0, RELU))
    layers.append(_layer(np.eye(1), np.zeros(1), ID))
    return NeuralNet(layers)


def _hat_samples(mesh, n_per: int = 12, seed: int = 0):
    rng = np.random.default_rng(seed)
    lam = rng.dirichlet(np.ones(3), size=n_per)
    lam = np.vstack([lam, [[1 / 3, 1 / 3, 1 / 3]], [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
                     np.eye(3)])
    x = mesh.to_physical(np.arange(mesh.n_triangles), lam)
    return x, lam


def s1_relu_basis_net(space: FeSpace, check: bool = True) -> NeuralNet:
    """ReLU-only S1 basis; raises ``ValueError`` naming the first vertex where the min formula fails."""
    m = space.mesh
    G, c = m.barycentric_maps
    nets = []
    if check:
        x, lam = _hat_samples(m)
    for i, pairs in enumerate(_support(space)):
        P = np.array([G[K, s] for K, s in pairs])
        q = np.array([c[K, s] for K, s in pairs])
        if check:
            v = int(space.dof_entities[i])
            approx = np.maximum(np.min(np.einsum("kd,tqd->tqk", P, x) + q, axis=2), 0.0)
            exact = np.where(m.triangles[:, None, :] == v, lam[None], 0.0).sum(axis=2)
            if not np.allclose(approx, exact, atol=1e-12, rtol=0):
                raise ValueError(f"min formula does not reproduce the hat function of vertex {v}")
        nets.append(_min_tree_net(P, q))
    depth = max(n.depth for n in nets)
    # outputs are non-negative hats, so a ReLU identity pads them exactly
    padded = [n if n.depth == depth else concat(identity_net(1, depth - n.depth + 1, relu_only=True), n)
              for n in nets]
    return parallelize(*padded)


# FoSLS product networks -------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FoslsNet:
    """Basis network for a product space plus output recombination.

    ``rows[i]``/``comps[i]`` list, for DOF ``i``, the basis-output rows and
    the FE components they feed.  With coefficients set, the network output is
    the vector of FE components ``(n, ncomp)``.
    """

    hidden: tuple
    basis_A: sps.csr_matrix
    basis_b: np.ndarray
    space: ProductSpace
    variant: str
    rows: np.ndarray
    comps: np.ndarray
    coeffs: np.ndarray | None = None

    @cached_property
    def net(self) -> NeuralNet:
        if self.coeffs is None:
            return NeuralNet(self.hidden + (Layer(self.basis_A, self.basis_b, ID),))
        C = self.recombination(self.coeffs)
        return NeuralNet(self.hidden + (Layer((C @ self.basis_A).tocsr(), C @ self.basis_b, ID),))

    @property
    def basis(self) -> NeuralNet:
        return NeuralNet(self.hidden + (Layer(self.basis_A, self.basis_b, ID),))

    @property
    def signature(self) -> str:
        return self.basis.signature(hidden_only=True)

    @property
    def n_dofs(self) -> int:
        return self.space.total_dim

    @property
    def depth(self) -> int:
        return len(self.hidden) + 1

    def recombination(self, coeffs) -> sps.csr_matrix:
        coeffs = np.asarray(coeffs, dtype=float)
        ok = self.rows >= 0
        vals = np.broadcast_to(coeffs[:, None], self.rows.shape)[ok]
        return sps.csr_matrix((vals, (self.comps[ok], self.rows[ok])),
                              shape=(self.space.ncomp, len(self.basis_b)))

    def realize(self, x) -> np.ndarray:
        return self.net.realize(x)

    def jets(self, x) -> np.ndarray:
        """(n, ncomp, 3): values and first derivatives of the realization."""
        if self.coeffs is None:
            raise ValueError("set output weights first")
        v, d = self.net.realize_with_jacobian(x)
        return np.concatenate([v[:, :, None], d], axis=2)

    def shape_values(self, x) -> np.ndarray:
        """(n, total_dim, ncomp) realization of every shape function, embedded in the FE components."""
        raw = self.basis.realize(np.atleast_2d(x))
        out = np.zeros((len(raw), self.n_dofs, self.space.ncomp))
        for j in range(self.rows.shape[1]):
            ok = self.rows[:, j] >= 0
            idx = np.flatnonzero(ok)
            out[:, idx, self.comps[idx, j]] = raw[:, self.rows[idx, j]]
        return out


def _dof_tables(space: ProductSpace, row_offsets, entity_rows):
    """Per product DOF, basis-output rows and FE component indices (padded with -1)."""
    rows = np.full((space.total_dim, 2), -1, dtype=np.int64)
    comps = np.full((space.total_dim, 2), -1, dtype=np.int64)
    for k, f in enumerate(space.spaces):
        off, c0 = space.offsets[k], space.comp_offsets[k]
        for c in range(f.ncomp):
            rows[off:off + f.dim, c] = row_offsets[k] + entity_rows[k] * f.ncomp + c
            comps[off:off + f.dim, c] = c0 + c
    return rows, comps


def fosls_basis_net(space: ProductSpace, variant: str = "per_factor") -> FoslsNet:
    """FoSLS basis network; ``shared`` builds one basis net per distinct element kind."""
    if variant not in ("per_factor", "shared"):
        raise ValueError(f"unknown variant {variant!r}")
    if space.tag not in ("poisson", "helmholtz", "elasticity", "heat", "wave", "ocp_poisson"):
        raise ValueError(f"unsupported product {space.tag!r}")
    if variant == "per_factor":
        # factors without DOFs (e.g. S1_0 on a coarse L-shape) emit no rows
        nets = [basis_net(f) for f in space.spaces if f.dim]
        sizes = [f.dim * f.ncomp for f in space.spaces]
        row_offsets = np.concatenate([[0], np.cumsum(sizes)])[:-1]
        entity_rows = [np.arange(f.dim) for f in space.spaces]
    else:
        kinds = []
        for f in space.spaces:
            if f.kind not in kinds:
                kinds.append(f.kind)
        full = {kind: FeSpace(space.mesh, kind) for kind in kinds}
        nets = [basis_net(full[kind]) for kind in kinds]
        sizes = [n.output_dim for n in nets]
        starts = dict(zip(kinds, np.concatenate([[0], np.cumsum(sizes)])[:-1]))
        row_offsets = [starts[f.kind] for f in space.spaces]
        # DOF j of a masked factor sits at the row of its entity in the unmasked net
        entity_rows = [full[f.kind].dof_index[f.dof_entities] for f in space.spaces]
    net = parallelize(*nets) if len(nets) > 1 else nets[0]
    rows, comps = _dof_tables(space, row_offsets, entity_rows)
    last = net.layers[-1]
    return FoslsNet(net.layers[:-1], last.A, last.b, space, variant, rows, comps)


def set_output_weights(basis: FoslsNet, coeffs) -> FoslsNet:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.n_dofs,):
        raise ValueError(f"expected {basis.n_dofs} coefficients, got {coeffs.shape}")
    out = replace(basis, coeffs=coeffs.copy())
    out.coeffs.setflags(write=False)
    return out


def nn_linear_comb(n1: FoslsNet, lam: float, n2: FoslsNet) -> FoslsNet:
    """Network of the FE function ``v1 + lam v2`` (same hidden layers)."""
    if n1.signature != n2.signature or n1.variant != n2.variant:
        raise ValueError("networks have different hidden layers")
    c1 = np.zeros(n1.n_dofs) if n1.coeffs is None else n1.coeffs
    c2 = np.zeros(n2.n_dofs) if n2.coeffs is None else n2.coeffs
    return set_output_weights(n1, c1 + lam * c2)


def nn_local_residual_sq(sys, fnet: FoslsNet, quad_degree=None) -> np.ndarray:
    """Elementwise squared LS residual evaluated from the network realization."""
    from ..lsq import _Integrator

    it = _Integrator(sys, fnet.space, quad_degree)
    mesh = fnet.space.mesh
    x = mesh.to_physical(np.arange(mesh.n_triangles), it.rule.points)
    pts = x.reshape(-1, 2)
    R = sys.residual(fnet.jets(pts), pts).reshape(mesh.n_triangles, len(it.rule), -1)
    w = 2.0 * mesh.areas[:, None] * it.rule.weights[None, :]
    out = np.einsum("kq,kqr,kqr->k", w, R, R)
    e, tris, j = initial_edges(mesh)
    if sys.n_trace and len(e):
        seg = segment_rule(it.trace_degree)
        lam = _edge_bary(j, seg.points)
        xe = np.einsum("kqj,kjd->kqd", lam, mesh.vertices[mesh.triangles[tris]]).reshape(-1, 2)
        Rt = sys.trace_residual(fnet.jets(xe), xe).reshape(len(e), len(seg), -1)
        ev = mesh.edges[e]
        length = np.linalg.norm(mesh.vertices[ev[:, 1]] - mesh.vertices[ev[:, 0]], axis=1)
        np.add.at(out, tris, np.einsum("k,q,kqr,kqr->k", length, seg.weights, Rt, Rt))
    return out


def deep_lsq_solve(sys, space: ProductSpace, variant: str = "per_factor", method: str = "direct"):
    """Solve the LSQ Galerkin problem and load the minimizer into a FoSLS network.

    Returns the network and the LS value evaluated from its realization.
    """
    u = solve(assemble(sys, space), method)
    fnet = set_output_weights(fosls_basis_net(space, variant), u)
    return fnet, float(nn_local_residual_sq(sys, fnet).sum())
