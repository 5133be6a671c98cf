"""Feedforward ReLU networks with exact size accounting.

An :class:`MLP` is a list of affine layers ``x -> W x + b``, each optionally
followed by ``relu``.  Weights are stored as CSR matrices because constructed
networks are deep and very sparse; ``Layer.dense()`` gives the usual arrays.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import erf


@dataclass
class Layer:
    W: sp.csr_matrix
    b: np.ndarray
    activated: bool

    def __post_init__(self):
        self.W = sp.csr_matrix(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.W.shape[0] != self.b.shape[0]:
            raise ValueError("weight rows and bias length differ")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def dense(self):
        return self.W.toarray(), self.b.copy()


@dataclass
class MLP:
    layers: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer dims {prev.out_dim} -> {nxt.in_dim} incompatible")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        """Number of hidden (activated) layers."""
        return sum(layer.activated for layer in self.layers)

    @property
    def width(self) -> int:
        """Largest hidden layer."""
        return max((l.out_dim for l in self.layers if l.activated), default=0)

    @property
    def n_params(self) -> int:
        """Nonzero weights plus biases actually stored."""
        return int(sum(l.W.nnz + l.out_dim for l in self.layers))

    @property
    def size(self) -> int:
        """Fully connected convention ``(d_in + d_out) width + width^2 depth``.

        Affine-only networks count their dense parameters ``d_out (d_in + 1)``.
        """
        if self.depth == 0:
            return self.out_dim * (self.in_dim + 1)
        w = self.width
        return (self.in_dim + self.out_dim) * w + w * w * self.depth

    def __call__(self, x):
        return eval_mlp(self, x)


def gelu(z: np.ndarray) -> np.ndarray:
    """Exact GELU ``z Phi(z) = z (1 + erf(z / sqrt 2)) / 2``."""
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "gelu": gelu,
    "identity": lambda z: z,
}


def activation_fn(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def eval_mlp(net: MLP, x, activation: str = "relu") -> np.ndarray:
    """Forward pass on a vector (d_in,) or a batch (batch, d_in)."""
    act = activation_fn(activation)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[-1] != net.in_dim:
        raise ValueError(f"input dimension {X.shape[-1]} != {net.in_dim}")
    Z = X.T
    for layer in net.layers:
        Z = layer.W @ Z + layer.b[:, None]
        if layer.activated:
            Z = act(np.asarray(Z))
    out = np.asarray(Z).T
    return out[0] if single else out


def affine(W, b=None) -> MLP:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    b = np.zeros(W.shape[0]) if b is None else b
    return MLP([Layer(W, b, False)])


def identity(dim: int) -> MLP:
    return affine(np.eye(dim))


def compose(outer: MLP, inner: MLP) -> MLP:
    """``outer o inner``; a trailing affine layer of ``inner`` is merged into ``outer``."""
    if outer.in_dim != inner.out_dim:
        raise ValueError("dimension mismatch in composition")
    layers = list(inner.layers)
    first = outer.layers[0]
    if not layers[-1].activated:
        last = layers.pop()
        first = Layer(first.W @ last.W, first.W @ last.b + first.b, first.activated)
    return MLP(layers + [first] + list(outer.layers[1:]))


def _canonical(net: MLP):
    """Activated layers followed by exactly one affine output layer."""
    out = []
    pending = None
    for layer in net.layers:
        if pending is not None:
            layer = Layer(layer.W @ pending.W, layer.W @ pending.b + layer.b, layer.activated)
            pending = None
        if layer.activated:
            out.append(layer)
        else:
            pending = layer
    if pending is None:
        pending = Layer(sp.identity(net.out_dim), np.zeros(net.out_dim), False)
    return out, pending


def _pad_depth(net: MLP, depth: int) -> tuple:
    hidden, last = _canonical(net)
    extra = depth - len(hidden)
    if extra < 0:
        raise ValueError("cannot reduce depth")
    if extra == 0:
        return hidden, last
    # route the output through relu as (y+, y-)
    hidden = hidden + [Layer(sp.vstack([last.W, -last.W]), np.concatenate([last.b, -last.b]), True)]
    d = last.out_dim
    I = sp.identity(d)
    swap = sp.bmat([[I, -I], [-I, I]])
    for _ in range(extra - 1):
        hidden.append(Layer(swap, np.zeros(2 * d), True))
    return hidden, Layer(sp.hstack([I, -I]), np.zeros(d), False)


def parallel(nets, shared_input: bool = True) -> MLP:
    """Run networks side by side, concatenating outputs.

    With ``shared_input`` all nets read the same input vector, otherwise the
    input is the concatenation of the individual inputs.  Shallower nets are
    padded with identity layers ``x = relu(x) - relu(-x)``.
    """
    nets = list(nets)
    depth = max(n.depth for n in nets)
    parts = [_pad_depth(n, depth) for n in nets]
    layers = []
    for k in range(depth):
        blocks = [p[0][k] for p in parts]
        if k == 0 and shared_input:
            W = sp.vstack([b.W for b in blocks])
        else:
            W = sp.block_diag([b.W for b in blocks])
        layers.append(Layer(W, np.concatenate([b.b for b in blocks]), True))
    lasts = [p[1] for p in parts]
    if depth == 0 and shared_input:
        W = sp.vstack([l.W for l in lasts])
    else:
        W = sp.block_diag([l.W for l in lasts])
    layers.append(Layer(W, np.concatenate([l.b for l in lasts]), False))
    return MLP(layers)


# ---------------------------------------------------------------------------
# serialization

def mlp_to_json(net: MLP) -> str:
    """Human-readable form with dense row-major weights (small nets only)."""
    layers = []
    for l in net.layers:
        W, b = l.dense()
        layers.append({"in": l.in_dim, "out": l.out_dim, "activated": l.activated,
                       "W": [float.hex(float(v)) for v in W.ravel()],
                       "b": [float.hex(float(v)) for v in b]})
    return json.dumps({"layers": layers, "meta": net.meta})


def mlp_from_json(text: str) -> MLP:
    d = json.loads(text)
    layers = []
    for l in d["layers"]:
        W = np.array([float.fromhex(v) for v in l["W"]]).reshape(l["out"], l["in"])
        b = np.array([float.fromhex(v) for v in l["b"]])
        layers.append(Layer(W, b, bool(l["activated"])))
    return MLP(layers, d.get("meta", {}))


_MLP_MAGIC = b"MLP1"


def mlp_to_bytes(net: MLP) -> bytes:
    """Binary form: per layer dims, activation flag and CSR arrays (little-endian)."""
    buf = io.BytesIO()
    meta = json.dumps(net.meta).encode()
    buf.write(_MLP_MAGIC + struct.pack("<II", len(net.layers), len(meta)) + meta)
    for l in net.layers:
        W = l.W.tocsr()
        W.sort_indices()
        buf.write(struct.pack("<IIIB", l.out_dim, l.in_dim, W.nnz, int(l.activated)))
        buf.write(np.asarray(W.indptr, "<i8").tobytes())
        buf.write(np.asarray(W.indices, "<i8").tobytes())
        buf.write(np.asarray(W.data, "<f8").tobytes())
        buf.write(np.asarray(l.b, "<f8").tobytes())
    return buf.getvalue()


def mlp_from_bytes(raw: bytes) -> MLP:
    if raw[:4] != _MLP_MAGIC:
        raise ValueError("not an MLP blob")
    n_layers, mlen = struct.unpack_from("<II", raw, 4)
    off = 12
    meta = json.loads(raw[off:off + mlen].decode())
    off += mlen
    layers = []
    for _ in range(n_layers):
        out_dim, in_dim, nnz, act = struct.unpack_from("<IIIB", raw, off)
        off += 13

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr

        indptr = take("<i8", out_dim + 1)
        indices = take("<i8", nnz)
        data = take("<f8", nnz)
        b = take("<f8", out_dim).astype(float)
        W = sp.csr_matrix((data.astype(float), indices, indptr), shape=(out_dim, in_dim))
        layers.append(Layer(W, b, bool(act)))
    return MLP(layers, meta)
