"""Feed-forward networks with per-neuron ReLU / BiSU / identity activations.

A network is a list of layers ``(A, b, act)``; the realization is
``x_l = act_l(A_l x_{l-1} + b_l)``.  The size counts nonzero weights and
biases, the depth counts layers (the output layer included).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps

ID, RELU, BISU = 0, 1, 2
ACT_NAMES = {ID: "id", RELU: "relu", BISU: "bisu"}
ACT_CODES = {v: k for k, v in ACT_NAMES.items()}


def relu(x):
    return np.maximum(x, 0.0)


def bisu(x):
    """Binary step: 0 for ``x <= 0`` and 1 for ``x > 0``."""
    return (np.asarray(x) > 0).astype(float)


@dataclass(frozen=True, eq=False)
class Layer:
    A: sps.csr_matrix
    b: np.ndarray
    act: np.ndarray

    def __post_init__(self):
        A = self.A
        if not (sps.isspmatrix_csr(A) and A.dtype == np.float64):
            A = sps.csr_matrix(A, dtype=float)
        A.sort_indices()
        b = np.asarray(self.b, dtype=float).reshape(-1)
        act = np.asarray(self.act, dtype=np.int8).reshape(-1)
        if act.size == 1 and A.shape[0] != 1:
            act = np.full(A.shape[0], act[0], dtype=np.int8)
        if not (A.shape[0] == len(b) == len(act)):
            raise ValueError(f"layer has {A.shape[0]} rows, {len(b)} biases and {len(act)} activations")
        if np.any((act < 0) | (act > 2)):
            raise ValueError("unknown activation code")
        b.setflags(write=False)
        act.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "act", act)

    @property
    def n_in(self) -> int:
        return self.A.shape[1]

    @property
    def n_out(self) -> int:
        return self.A.shape[0]

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.A.data) + np.count_nonzero(self.b))

    def same_as(self, other: "Layer") -> bool:
        """Bitwise equality of weights, biases and activations."""
        a, o = self.A, other.A
        return (a.shape == o.shape and np.array_equal(a.indptr, o.indptr) and np.array_equal(a.indices, o.indices)
                and a.data.tobytes() == o.data.tobytes() and self.b.tobytes() == other.b.tobytes()
                and np.array_equal(self.act, other.act))


def _layer(A, b, act) -> Layer:
    return Layer(sps.csr_matrix(A), b, act)


class NeuralNet:
    """Immutable layered network."""

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise ValueError(f"layer {i}: expects {layers[i].n_in} inputs but layer {i - 1} "
                                 f"has {layers[i - 1].n_out} outputs")
        if np.any(layers[-1].act != ID):
            raise ValueError("the last layer must use the identity activation")
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def size(self) -> int:
        return sum(layer.size for layer in self.layers)

    @property
    def hidden_size(self) -> int:
        return sum(layer.size for layer in self.layers[:-1])

    def realize(self, x) -> np.ndarray:
        """Forward pass for points of shape (n, d) (or a single point of shape (d,))."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.input_dim:
            raise ValueError(f"input dimension {X.shape[1]} does not match network input {self.input_dim}")
        H = X.T
        for layer in self.layers:
            Z = layer.A @ H + layer.b[:, None]
            H = _activate(Z, layer.act)
        out = H.T
        return out[0] if single else out

    def realize_with_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Values (n, N_L) and input derivatives (n, N_L, d) by forward-mode propagation.

        Derivative conventions: ``ReLU'(0) = 1/2`` (exact for the odd pairs
        ``ReLU(z) - ReLU(-z)`` used as identities), ``BiSU' = 0``.
        """
        X = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = X.shape
        H = X.T
        D = np.broadcast_to(np.eye(d)[:, None, :], (d, n, d)).reshape(d, n * d)
        for layer in self.layers:
            Z = layer.A @ H + layer.b[:, None]
            Dz = layer.A @ D
            H = _activate(Z, layer.act)
            slope = np.ones_like(Z)
            relu_rows = layer.act == RELU
            slope[relu_rows] = np.where(Z[relu_rows] > 0, 1.0, np.where(Z[relu_rows] == 0, 0.5, 0.0))
            slope[layer.act == BISU] = 0.0
            D = (Dz.reshape(-1, n, d) * slope[:, :, None]).reshape(-1, n * d)
        return H.T, D.reshape(-1, n, d).transpose(1, 0, 2)

    def signature(self, hidden_only: bool = True) -> str:
        h = hashlib.sha256()
        for layer in (self.layers[:-1] if hidden_only else self.layers):
            for arr in (np.asarray(layer.A.shape), layer.A.indptr, layer.A.indices, layer.A.data, layer.b, layer.act):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __repr__(self) -> str:
        return f"NeuralNet(depth={self.depth}, widths={[l.n_out for l in self.layers]}, size={self.size})"


def _activate(Z, act):
    if np.all(act == ID):
        return Z
    H = np.where((act == RELU)[:, None], np.maximum(Z, 0.0), Z)
    s = act == BISU
    if s.any():
        H = np.where(s[:, None], (Z > 0).astype(float), H)
    return H


def nn_stats(net: NeuralNet) -> dict:
    """Depth, size, per-layer sizes and widths."""
    return {
        "depth": net.depth,
        "size": net.size,
        "layer_sizes": [layer.size for layer in net.layers],
        "widths": [net.input_dim] + [layer.n_out for layer in net.layers],
    }


# calculus -------------------------------------------------------------------
def parallelize(*nets: NeuralNet) -> NeuralNet:
    """Same input, stacked outputs; requires equal depth and input dimension."""
    if len(nets) == 1 and not isinstance(nets[0], NeuralNet):
        nets = tuple(nets[0])
    if len({n.depth for n in nets}) != 1 or len({n.input_dim for n in nets}) != 1:
        raise ValueError("parallelization needs equal depths and input dimensions")
    layers = []
    for i in range(nets[0].depth):
        ls = [n.layers[i] for n in nets]
        A = sps.vstack([l.A for l in ls]) if i == 0 else sps.block_diag([l.A for l in ls])
        layers.append(Layer(A.tocsr(), np.concatenate([l.b for l in ls]), np.concatenate([l.act for l in ls])))
    return NeuralNet(layers)


def sum_nn(*nets: NeuralNet) -> NeuralNet:
    """Realization ``sum_k R(net_k)``; requires equal depth, input and output dimension."""
    if len(nets) == 1 and not isinstance(nets[0], NeuralNet):
        nets = tuple(nets[0])
    if len({n.output_dim for n in nets}) != 1:
        raise ValueError("summed networks need equal output dimensions")
    if len(nets) == 1:
        return nets[0]
    P = parallelize(*nets)
    last = [n.layers[-1] for n in nets]
    A = sps.hstack([l.A for l in last]).tocsr()
    A.sum_duplicates()
    b = np.sum([l.b for l in last], axis=0)
    return NeuralNet(P.layers[:-1] + (Layer(A, b, last[0].act),))


def concat(net1: NeuralNet, net2: NeuralNet) -> NeuralNet:
    """Composition ``R(net1) o R(net2)``, merging net1's first and net2's last layer."""
    if net2.output_dim != net1.input_dim:
        raise ValueError(f"cannot compose: inner output {net2.output_dim} != outer input {net1.input_dim}")
    f, l = net1.layers[0], net2.layers[-1]
    merged = Layer((f.A @ l.A).tocsr(), f.A @ l.b + f.b, f.act)
    return NeuralNet(net2.layers[:-1] + (merged,) + net1.layers[1:])


def identity_net(d: int, depth: int, relu_only: bool = False) -> NeuralNet:
    """Realizes the identity on ``R^d``.

    With ``relu_only`` the hidden layers carry ``(ReLU(x), ReLU(-x))``
    (requires ``depth >= 2``); otherwise all layers use the identity activation.
    """
    if depth < 1:
        raise ValueError("depth must be positive")
    I = sps.identity(d, format="csr")
    if not relu_only:
        return NeuralNet([Layer(I, np.zeros(d), ID) for _ in range(depth)])
    if depth < 2:
        raise ValueError("a ReLU identity needs depth >= 2")
    first = Layer(sps.vstack([I, -I]).tocsr(), np.zeros(2 * d), RELU)
    mid = [Layer(sps.identity(2 * d, format="csr"), np.zeros(2 * d), RELU) for _ in range(depth - 2)]
    last = Layer(sps.hstack([I, -I]).tocsr(), np.zeros(d), ID)
    return NeuralNet([first] + mid + [last])


def sparse_concat(net1: NeuralNet, net2: NeuralNet) -> NeuralNet:
    """``net1 . Id_2 . net2`` with a two-layer ReLU identity in between; depth ``L1 + L2``."""
    return concat(net1, concat(identity_net(net2.output_dim, 2, relu_only=True), net2))


def affine_net(A, b) -> NeuralNet:
    return NeuralNet([_layer(np.atleast_2d(A), np.atleast_1d(b), ID)])


def scale_output(net: NeuralNet, C, c=None) -> NeuralNet:
    """Replace the output layer ``(A, b)`` by ``(C A, C b + c)``."""
    C = sps.csr_matrix(C)
    last = net.layers[-1]
    b = C @ last.b + (0.0 if c is None else np.asarray(c, dtype=float))
    return NeuralNet(net.layers[:-1] + (Layer((C @ last.A).tocsr(), b, ID),))


def mult_by_step_net(kappa: float, d: int = 1) -> NeuralNet:
    """Input ``(x_1..x_d, y)``, output ``x y`` for ``|x_c| <= kappa`` and ``y in {0, 1}``.

    Uses ``x y = ReLU(x - kappa (1 - y)) - ReLU(-x - kappa (1 - y))``.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    A = np.zeros((2 * d, d + 1))
    for c in range(d):
        A[2 * c, c], A[2 * c + 1, c] = 1.0, -1.0
    A[:, d] = kappa
    b = np.full(2 * d, -kappa)
    out = np.zeros((d, 2 * d))
    for c in range(d):
        out[c, 2 * c], out[c, 2 * c + 1] = 1.0, -1.0
    return NeuralNet([_layer(A, b, RELU), _layer(out, np.zeros(d), ID)])


# serialization ------------------------------------------------------------
def to_json_dict(net: NeuralNet) -> dict:
    layers = []
    for layer in net.layers:
        A = layer.A.tocoo()
        order = np.lexsort((A.col, A.row))
        trip = [[int(A.row[k]), int(A.col[k]), float(A.data[k])] for k in order]
        layers.append({
            "A": {"rows": layer.n_out, "cols": layer.n_in, "triplets": trip},
            "b": [float(v) for v in layer.b],
            "act": [ACT_NAMES[int(a)] for a in layer.act],
        })
    return {"layers": layers}


def from_json_dict(data: dict) -> NeuralNet:
    if not isinstance(data, dict) or not isinstance(data.get("layers"), list) or not data["layers"]:
        raise ValueError("network JSON needs a non-empty 'layers' list")
    layers = []
    prev = None
    for i, L in enumerate(data["layers"]):
        try:
            rows, cols = int(L["A"]["rows"]), int(L["A"]["cols"])
            trip = np.asarray(L["A"]["triplets"], dtype=float).reshape(-1, 3)
            b = np.asarray(L["b"], dtype=float)
            act = [ACT_CODES[a] for a in L["act"]]
        except (KeyError, TypeError, ValueError) as err:
            raise ValueError(f"layer {i}: malformed entry ({err})") from err
        if prev is not None and cols != prev:
            raise ValueError(f"layer {i}: A has {cols} columns but layer {i - 1} has {prev} outputs")
        if len(b) != rows or len(act) != rows:
            raise ValueError(f"layer {i}: A has {rows} rows but b has {len(b)} and act has {len(act)} entries")
        r, c = trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64)
        if trip.size and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ValueError(f"layer {i}: triplet index outside a {rows}x{cols} matrix")
        A = sps.csr_matrix((trip[:, 2], (r, c)), shape=(rows, cols))
        layers.append(Layer(A, b, np.asarray(act, dtype=np.int8)))
        prev = rows
    try:
        return NeuralNet(layers)
    except ValueError as err:
        raise ValueError(f"invalid network: {err}") from err


def export_nn(net: NeuralNet, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(net)))


def import_nn(path) -> NeuralNet:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}") from err
    return from_json_dict(data)
