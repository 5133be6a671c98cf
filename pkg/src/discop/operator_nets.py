"""DeepONet, shift-DeepONet and FNO forward passes with size accounting.

Inputs are grid functions on a periodic grid.  Branch-type networks read the
input at sensor points, snapped to the nearest grid node.  FNO layers act on
``d_v`` channels and use the 1/N-normalized DFT restricted to ``|k| <= k_max``,
evaluated directly in ``O(k_max N)`` per channel.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import Grid, GridFunction
from .relu.mlp import MLP, activation_fn, eval_mlp, mlp_from_bytes, mlp_to_bytes


class SensorMismatch(ValueError):
    pass


class GridTooCoarse(ValueError):
    pass


# ---------------------------------------------------------------------------
# sensors

def sensor_indices(grid: Grid, sensors) -> np.ndarray:
    """Nearest grid node for each sensor coordinate."""
    s = np.asarray(sensors, float).reshape(-1)
    rel = (s - grid.origin) / grid.dx
    if np.any(rel < -0.5) or np.any(rel > grid.n - 0.5 + 1e-9):
        raise SensorMismatch("sensor/grid mismatch: sensor outside the grid domain")
    return np.rint(rel).astype(int) % grid.n


def encode_sensors(u, sensors, grid: Grid | None = None) -> np.ndarray:
    """Values of ``u`` at the sensors (nearest-node snapping).

    ``u`` is a :class:`GridFunction` or an array ``(..., n)`` together with
    its ``grid``.
    """
    if isinstance(u, GridFunction):
        grid, values = u.grid, u.values
    else:
        if grid is None:
            raise ValueError("array input needs a grid")
        values = np.asarray(u, float)
        if values.shape[-1] != grid.n:
            raise SensorMismatch("sensor/grid mismatch: values do not match the grid")
    return values[..., sensor_indices(grid, sensors)]


def random_sensors(grid: Grid, m: int, seed: int) -> np.ndarray:
    """``m`` distinct grid points in increasing order, reproducible under ``seed``."""
    if not 1 <= m <= grid.n:
        raise ValueError("need 1 <= m <= n")
    idx = np.sort(np.random.default_rng(seed).choice(grid.n, size=m, replace=False))
    return grid.points[idx]


def _inputs(u, grid, channels: int = 1):
    """Input values as ``(batch, n)`` or ``(batch, channels, n)`` plus a single-input flag."""
    if isinstance(u, GridFunction):
        return u.values[None, :], u.grid, True
    values = np.asarray(u, float)
    if grid is None:
        raise ValueError("array input needs a grid")
    if channels == 1 and values.ndim == 3 and values.shape[1] == 1:
        values = values[:, 0]
    single = values.ndim == (1 if channels == 1 else 2)
    return (values[None] if single else values), grid, single


def _encode(model, values, grid):
    """Branch input ``(batch, channels * m)``."""
    e = encode_sensors(values, model.sensors, grid)
    if model.channels > 1:
        if e.ndim != 3 or e.shape[1] != model.channels:
            raise SensorMismatch(f"expected {model.channels} input channels")
        e = e.reshape(len(e), -1)
    return e


def _points(y, d):
    """Evaluation points as ``(q, d)`` plus the shape of a single output."""
    y = np.asarray(y, float)
    shape = y.shape if d == 1 else y.shape[:-1]
    return y.reshape(-1, d), shape


# ---------------------------------------------------------------------------
# DeepONet and shift-DeepONet

def _don_account(nets, m, p):
    width = sum(n.width for n in nets)
    depth = max(n.depth for n in nets)
    return {"m": m, "p": p, "width": width, "depth": depth,
            "size": (m + p) * width + width * width * depth,
            "n_params": int(sum(n.n_params for n in nets))}


@dataclass
class DeepONetModel:
    """``N(u)(y) = sum_k beta_k(E(u)) tau_k(y)``."""

    branch: MLP
    trunk: MLP
    sensors: np.ndarray
    activation: str = "relu"
    meta: dict = field(default_factory=dict)
    channels: int = 1

    def __post_init__(self):
        self.sensors = np.asarray(self.sensors, float).reshape(-1)
        if self.branch.in_dim != self.channels * len(self.sensors):
            raise SensorMismatch("sensor/grid mismatch: branch input differs from sensor count")
        if self.branch.out_dim != self.trunk.out_dim:
            raise ValueError("branch and trunk output dims differ")

    @property
    def p(self) -> int:
        return self.branch.out_dim

    @property
    def m(self) -> int:
        return len(self.sensors)

    @property
    def d(self) -> int:
        return self.trunk.in_dim

    def account(self) -> dict:
        return _don_account([self.branch, self.trunk], self.channels * self.m, self.p)


@dataclass
class ShiftDeepONetModel:
    """``N(u)(y) = sum_k beta_k(E(u)) tau_k(A_k(E(u)) y + gamma_k(E(u)))``.

    The scale net returns ``p d d`` numbers reshaped to ``p`` matrices
    ``A_k`` (row major); the shift net returns ``p d`` numbers reshaped to
    ``p`` vectors ``gamma_k``.
    """

    branch: MLP
    trunk: MLP
    scale_net: MLP
    shift_net: MLP
    sensors: np.ndarray
    activation: str = "relu"
    meta: dict = field(default_factory=dict)
    channels: int = 1

    def __post_init__(self):
        self.sensors = np.asarray(self.sensors, float).reshape(-1)
        m, p, d = len(self.sensors), self.branch.out_dim, self.trunk.in_dim
        for net in (self.branch, self.scale_net, self.shift_net):
            if net.in_dim != self.channels * m:
                raise SensorMismatch("sensor/grid mismatch: net input differs from sensor count")
        if self.trunk.out_dim != p:
            raise ValueError("branch and trunk output dims differ")
        if self.scale_net.out_dim != p * d * d:
            raise ValueError(f"scale net must return p*d*d = {p * d * d} values")
        if self.shift_net.out_dim != p * d:
            raise ValueError(f"shift net must return p*d = {p * d} values")

    @property
    def p(self) -> int:
        return self.branch.out_dim

    @property
    def m(self) -> int:
        return len(self.sensors)

    @property
    def d(self) -> int:
        return self.trunk.in_dim

    def account(self) -> dict:
        return _don_account([self.branch, self.trunk, self.scale_net, self.shift_net],
                            self.channels * self.m, self.p)


def deeponet_forward(model: DeepONetModel, u, y, grid: Grid | None = None):
    """Evaluate at points ``y``.

    ``u`` is a GridFunction or values ``(n,)`` / ``(batch, n)`` on ``grid``.
    Returns the shape of ``y`` (minus the coordinate axis when ``d > 1``)
    for a single input, else ``(batch, n_points)``.
    """
    values, grid, single = _inputs(u, grid, model.channels)
    Y, shape = _points(y, model.d)
    act = model.activation
    beta = eval_mlp(model.branch, _encode(model, values, grid), act)
    tau = eval_mlp(model.trunk, Y, act)
    out = _contract(beta, tau[None])
    return _shape_out(out, single, shape)


def shift_deeponet_forward(model: ShiftDeepONetModel, u, y, grid: Grid | None = None):
    """Evaluate at points ``y``; shapes as in :func:`deeponet_forward`."""
    values, grid, single = _inputs(u, grid, model.channels)
    Y, shape = _points(y, model.d)
    act = model.activation
    p, d = model.p, model.d
    e = _encode(model, values, grid)
    beta = eval_mlp(model.branch, e, act)                          # (B, p)
    A = eval_mlp(model.scale_net, e, act).reshape(-1, p, d, d)      # (B, p, d, d)
    gamma = eval_mlp(model.shift_net, e, act).reshape(-1, p, d)     # (B, p, d)
    z = np.einsum("bkij,qj->bqki", A, Y) + gamma[:, None, :, :]     # (B, q, p, d)
    tau = eval_mlp(model.trunk, z.reshape(-1, d), act).reshape(z.shape[:3] + (p,))
    tau_kk = np.einsum("bqkk->bqk", tau)                            # tau_k at its own argument
    out = _contract(beta, tau_kk)
    return _shape_out(out, single, shape)


def _contract(beta, tau):
    """``sum_k beta[b, k] tau[b, q, k]``; one code path so both models round alike."""
    return (beta[:, None, :] * tau).sum(axis=-1)


def _shape_out(out, single, shape):
    if not single:
        return out
    out = out[0].reshape(shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# FNO

@dataclass
class FourierLayer:
    """``v -> sigma(W v + b + K v)`` with ``K v = F^-1(P(k) F v(k))``.

    ``P`` has shape ``(2 k_max + 1, d_v, d_v)`` and ``bhat`` shape
    ``(2 k_max + 1, d_v)``, both indexed by ``k + k_max``.  ``None`` means
    zero.
    """

    W: np.ndarray
    P: np.ndarray | None = None
    bhat: np.ndarray | None = None
    activated: bool = True

    def __post_init__(self):
        self.W = np.asarray(self.W, float)
        if self.P is not None:
            self.P = np.asarray(self.P, complex)
        if self.bhat is not None:
            self.bhat = np.asarray(self.bhat, complex)
        self._sparse = None
        self._rows = None

    def active_rows(self) -> np.ndarray:
        """Output channels that can be nonzero before the activation."""
        if self._rows is not None:
            return self._rows
        live = np.any(self.W != 0, axis=1)
        if self.P is not None:
            live |= np.any(self.P != 0, axis=(0, 2))
        if self.bhat is not None:
            live |= np.any(self.bhat != 0, axis=0)
        self._rows = np.flatnonzero(live)
        return self._rows

    def W_op(self, cols: np.ndarray):
        """``W`` restricted to the active rows and ``cols``, sparse when mostly zero."""
        key = cols.tobytes()
        if self._sparse is None or self._sparse[0] != key:
            W = self.W[self.active_rows()][:, cols]
            density = np.count_nonzero(W) / max(1, W.size)
            self._sparse = (key, sp.csr_matrix(W) if density < 0.3 else W)
        return self._sparse[1]


@dataclass
class FNOModel:
    """``Q o L_L o ... o L_1 o R`` acting on functions on a periodic grid.

    The lifting ``R`` reads the input channels followed by the coordinate
    ``x``.  The projection is ``v -> Q v + q``.
    """

    lifting: MLP
    layers: list
    Q: np.ndarray
    k_max: int
    q_bias: np.ndarray | None = None
    activation: str = "relu"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, float))
        dv = self.d_v
        if self.lifting.out_dim != dv:
            raise ValueError("lifting output differs from projection input")
        K = 2 * self.k_max + 1
        for l in self.layers:
            if l.W.shape != (dv, dv):
                raise ValueError("layer weight must be d_v x d_v")
            if l.P is not None and l.P.shape != (K, dv, dv):
                raise ValueError(f"multiplier must have shape {(K, dv, dv)}")
            if l.bhat is not None and l.bhat.shape != (K, dv):
                raise ValueError(f"bias coefficients must have shape {(K, dv)}")
        if self.q_bias is None:
            self.q_bias = np.zeros(self.Q.shape[0])
        self.q_bias = np.asarray(self.q_bias, float).reshape(-1)

    @property
    def d_v(self) -> int:
        return self.Q.shape[1]

    @property
    def d_u(self) -> int:
        return self.lifting.in_dim - 1

    @property
    def d_out(self) -> int:
        return self.Q.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def account(self) -> dict:
        """Tunable parameters with complex numbers counted twice."""
        dv, K = self.d_v, 2 * self.k_max + 1
        lift = sum(l.out_dim * (l.in_dim + 1) for l in self.lifting.layers)
        per_layer = dv * dv + 2 * K * dv * dv + 2 * K * dv
        size = lift + self.depth * per_layer + self.d_out * (dv + 1)
        return {"k_max": self.k_max, "d_v": dv, "depth": self.depth,
                "width": dv * K, "size": size}

    def is_hermitian(self, tol: float = 0.0) -> bool:
        """``P(-k) = conj P(k)`` and ``bhat(-k) = conj bhat(k)`` for every layer."""
        for l in self.layers:
            for arr in (l.P, l.bhat):
                if arr is not None and np.max(np.abs(arr[::-1] - arr.conj()), initial=0) > tol:
                    return False
        return True


def _mode_matrices(grid: Grid, k_max: int):
    k = np.arange(-k_max, k_max + 1)
    phase = 2j * np.pi * np.outer(k, grid.points) / grid.period
    return np.exp(-phase) / grid.n, np.exp(phase).T  # forward (K, n), inverse (n, K)


def fno_forward(model: FNOModel, u, grid: Grid | None = None, return_imag: bool = False):
    """Evaluate an FNO on the grid of ``u``.

    Parameters
    ----------
    u : GridFunction or array
        ``(n,)``, ``(batch, n)`` for one channel or ``(batch, d_u, n)``.
    return_imag : bool
        Also return the largest imaginary part discarded after inverse DFTs.

    Returns
    -------
    array ``(batch, d_out, n)`` (leading singleton axes removed for a
    single-channel single input).
    """
    if isinstance(u, GridFunction):
        grid, values = u.grid, u.values[None, None, :]
        squeeze = True
    else:
        if grid is None:
            raise ValueError("array input needs a grid")
        values = np.asarray(u, float)
        squeeze = values.ndim == 1
        if values.ndim == 1:
            values = values[None, None, :]
        elif values.ndim == 2:
            values = values[:, None, :]
    B, du, n = values.shape
    if du != model.d_u or n != grid.n:
        raise ValueError("input channels or grid size do not match the model")
    if n < 2 * model.k_max + 1:
        raise GridTooCoarse(f"grid too coarse for k_max: need n >= {2 * model.k_max + 1}")
    act = activation_fn(model.activation)
    x = np.broadcast_to(grid.points, (B, 1, n))
    lift_in = np.concatenate([values, x], axis=1).transpose(0, 2, 1).reshape(-1, du + 1)
    dv = model.d_v
    v = eval_mlp(model.lifting, lift_in, model.activation).reshape(B, n, dv).transpose(2, 0, 1)
    v = v.reshape(dv, B * n)                                   # channels x (batch, node)
    Fm, Fi = _mode_matrices(grid, model.k_max)
    imag = 0.0
    live = np.arange(dv)                                       # rows of v that are stored
    for layer in model.layers:
        # only live channels are carried; act(0) = 0 for every activation
        rows = layer.active_rows()
        pre = np.asarray(layer.W_op(live) @ v)
        if layer.P is not None:
            coeffs = v.reshape(len(live), B, n) @ Fm.T         # (live, B, K)
            spec = np.einsum("koi,ibk->bko", layer.P[:, rows][:, :, live], coeffs)
            phys = np.matmul(Fi, spec).transpose(2, 0, 1)      # (rows, B, n)
            imag = max(imag, float(np.max(np.abs(phys.imag), initial=0.0)))
            pre += phys.real.reshape(len(rows), B * n)
        if layer.bhat is not None:
            bias = (Fi @ layer.bhat[:, rows]).T                # (rows, n), batch independent
            imag = max(imag, float(np.max(np.abs(bias.imag), initial=0.0)))
            pre.reshape(len(rows), B, n)[...] += bias.real[:, None, :]
        if layer.activated:
            pre = np.maximum(pre, 0.0, out=pre) if model.activation == "relu" else act(pre)
        v, live = pre, rows
    out = (model.Q[:, live] @ v + model.q_bias[:, None]).reshape(-1, B, n).transpose(1, 0, 2)
    if squeeze and out.shape[1] == 1:
        out = out[:, 0, :]
        if out.shape[0] == 1:
            out = out[0]
    return (out, imag) if return_imag else out


# ---------------------------------------------------------------------------
# checkpoints: magic, u32 header length, JSON header, raw little-endian payload

_MAGIC = b"OPM1"


class CheckpointError(ValueError):
    pass


def _model_arrays(model):
    """(header, list of (name, array)) for a model."""
    arrays = []

    def mlp(name, net):
        arrays.append((name, np.frombuffer(mlp_to_bytes(net), dtype=np.uint8)))

    if isinstance(model, (DeepONetModel, ShiftDeepONetModel)):
        kind = "deeponet" if isinstance(model, DeepONetModel) else "shift-deeponet"
        arrays.append(("sensors", model.sensors))
        mlp("branch", model.branch)
        mlp("trunk", model.trunk)
        if kind == "shift-deeponet":
            mlp("scale_net", model.scale_net)
            mlp("shift_net", model.shift_net)
        header = {"kind": kind, "m": model.m, "p": model.p, "d": model.d,
                  "channels": model.channels}
    elif isinstance(model, FNOModel):
        kind = "fno"
        mlp("lifting", model.lifting)
        arrays += [("Q", model.Q), ("q_bias", model.q_bias)]
        for i, l in enumerate(model.layers):
            arrays.append((f"layer{i}.W", l.W))
            if l.P is not None:
                arrays.append((f"layer{i}.P", l.P))
            if l.bhat is not None:
                arrays.append((f"layer{i}.bhat", l.bhat))
        header = {"kind": kind, "k_max": model.k_max, "d_v": model.d_v,
                  "n_layers": model.depth,
                  "activated": [bool(l.activated) for l in model.layers]}
    else:
        raise TypeError(f"not an operator model: {type(model).__name__}")
    header["activation"] = model.activation
    header["meta"] = model.meta
    return header, arrays


def model_to_bytes(model) -> bytes:
    header, arrays = _model_arrays(model)
    header["arrays"] = []
    payload = io.BytesIO()
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        dtype = {"f": "<f8", "c": "<c16", "u": "u1"}[arr.dtype.kind]
        payload.write(arr.astype(dtype).tobytes())
        header["arrays"].append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
    text = json.dumps(header).encode()
    return _MAGIC + struct.pack("<I", len(text)) + text + payload.getvalue()


def model_from_bytes(raw: bytes):
    if raw[:4] != _MAGIC:
        raise CheckpointError("not an operator-model checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8:8 + hlen])
    except ValueError as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    pos = 8 + hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=int))
        end = pos + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError("truncated checkpoint payload")
        arrays[spec["name"]] = np.frombuffer(raw[pos:end], dtype=dt).reshape(spec["shape"]).copy()
        pos = end
    if pos != len(raw):
        raise CheckpointError("trailing bytes in checkpoint")

    def mlp(name):
        return mlp_from_bytes(arrays[name].tobytes())

    kind, act, meta = header["kind"], header["activation"], header["meta"]
    if kind == "deeponet":
        return DeepONetModel(mlp("branch"), mlp("trunk"), arrays["sensors"], act, meta,
                             header.get("channels", 1))
    if kind == "shift-deeponet":
        return ShiftDeepONetModel(mlp("branch"), mlp("trunk"), mlp("scale_net"),
                                  mlp("shift_net"), arrays["sensors"], act, meta,
                                  header.get("channels", 1))
    if kind == "fno":
        layers = [FourierLayer(arrays[f"layer{i}.W"], arrays.get(f"layer{i}.P"),
                               arrays.get(f"layer{i}.bhat"), header["activated"][i])
                  for i in range(header["n_layers"])]
        return FNOModel(mlp("lifting"), layers, arrays["Q"], header["k_max"],
                        arrays["q_bias"], act, meta)
    raise CheckpointError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def forward(model, u, y=None, grid: Grid | None = None):
    """Dispatch to the right forward pass; (shift-)DeepONets default to ``y`` = grid nodes."""
    if isinstance(model, FNOModel):
        return fno_forward(model, u, grid)
    g = u.grid if isinstance(u, GridFunction) else grid
    if y is None:
        y = g.points
    if isinstance(model, ShiftDeepONetModel):
        return shift_deeponet_forward(model, u, y, grid)
    return deeponet_forward(model, u, y, grid)
