"""Training of DeepONets, shift-DeepONets and FNOs with an L1 loss.

Gradients come from a float64 torch mirror of the numpy forward passes in
:mod:`discop.operator_nets`; parameters live in one flat numpy vector that
the numpy Adam implementation updates.  Trained models are exported back to
the numpy model classes, so evaluation and checkpoints share one code path.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .grid import Grid
from .measures import Dataset
from .operator_nets import (
    DeepONetModel, FNOModel, FourierLayer, ShiftDeepONetModel, encode_sensors, forward,
    random_sensors,
)
from .relu.mlp import MLP, Layer


class Divergence(RuntimeError):
    """Non-finite loss; carries the batch index and the history so far."""

    def __init__(self, message, batch=None, history=None):
        super().__init__(message)
        self.batch = batch
        self.history = history


# ---------------------------------------------------------------------------
# configuration

SCHEDULERS = ("none", "step", "exponential")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 10
    epochs: int = 100
    scheduler: str = "exponential"
    gamma: float = 0.999
    step_interval: int = 100
    weight_decay: float = 1e-6
    seed: int = 0
    val_every: int = 1
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.val_every < 1:
            raise ValueError("batch size and validation cadence must be positive, epochs >= 0")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.step_interval < 1:
            raise ValueError("step interval must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        self.betas = tuple(self.betas)

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (counted from 0)."""
        if self.scheduler == "exponential":
            return self.lr * self.gamma ** epoch
        if self.scheduler == "step":
            return self.lr * self.gamma ** (epoch // self.step_interval)
        return self.lr


# ---------------------------------------------------------------------------
# flat parameters

@dataclass
class Layout:
    """Names and shapes of the arrays packed in a flat parameter vector."""

    entries: list = field(default_factory=list)

    def add(self, name: str, shape) -> None:
        self.entries.append((name, tuple(int(s) for s in shape)))

    @property
    def size(self) -> int:
        return sum(math.prod(s) for _, s in self.entries)

    def unpack(self, flat) -> dict:
        out, pos = {}, 0
        for name, shape in self.entries:
            k = math.prod(shape)
            out[name] = flat[pos:pos + k].reshape(shape)
            pos += k
        return out


@dataclass
class Gradient:
    """Gradient congruent with a model's parameter layout."""

    flat: np.ndarray
    layout: Layout

    def arrays(self) -> dict:
        return self.layout.unpack(self.flat)


def _mlp_layers(net: MLP):
    return [(l.dense(), l.activated) for l in net.layers]


def _pack_mlp(prefix, net, layout, chunks):
    acts = []
    for i, ((W, b), a) in enumerate(_mlp_layers(net)):
        layout.add(f"{prefix}.{i}.W", W.shape)
        layout.add(f"{prefix}.{i}.b", b.shape)
        chunks += [W.ravel(), b.ravel()]
        acts.append(a)
    return acts


def _unpack_mlp(prefix, arrs, acts) -> MLP:
    return MLP([Layer(arrs[f"{prefix}.{i}.W"], arrs[f"{prefix}.{i}.b"], a)
                for i, a in enumerate(acts)])


def _torch_act(name):
    if name == "relu":
        return torch.relu
    if name == "gelu":
        return torch.nn.functional.gelu  # exact erf form
    if name == "identity":
        return lambda z: z
    raise ValueError(f"unknown activation {name!r}")


def _torch_mlp(prefix, P, acts, x, act):
    for i, a in enumerate(acts):
        x = x @ P[f"{prefix}.{i}.W"].T + P[f"{prefix}.{i}.b"]
        if a:
            x = act(x)
    return x


class Trainable:
    """Flat parameters plus torch and numpy views of one operator model."""

    def __init__(self, model):
        self.template = model
        self.layout = Layout()
        chunks: list = []
        self.activation = model.activation
        if isinstance(model, FNOModel):
            self.kind = "fno"
            self._pack_fno(model, chunks)
        elif isinstance(model, (DeepONetModel, ShiftDeepONetModel)):
            if model.d != 1:
                raise ValueError("training supports one-dimensional evaluation points only")
            self.kind = "sdon" if isinstance(model, ShiftDeepONetModel) else "don"
            names = ["branch", "trunk"] + (["scale_net", "shift_net"] if self.kind == "sdon" else [])
            self.acts = {n: _pack_mlp(n, getattr(model, n), self.layout, chunks) for n in names}
        else:
            raise TypeError(f"not an operator model: {type(model).__name__}")
        self.theta = np.concatenate(chunks) if chunks else np.zeros(0)

    # -- FNO parametrization: P(-k) = conj P(k), P(0) and bhat(0) real
    def _pack_fno(self, model, chunks):
        K, km = 2 * model.k_max + 1, model.k_max
        self.k_max, self.d_v = km, model.d_v
        self.acts = {"lifting": _pack_mlp("lifting", model.lifting, self.layout, chunks)}
        self.fno_layers = []
        for i, l in enumerate(model.layers):
            has_p, has_b = l.P is not None, l.bhat is not None
            self.fno_layers.append((has_p, has_b, l.activated))
            self.layout.add(f"L{i}.W", l.W.shape)
            chunks.append(l.W.ravel())
            if has_p:
                if np.max(np.abs(l.P[::-1] - l.P.conj()), initial=0) > 1e-12:
                    raise ValueError("only Hermitian multipliers are trainable")
                pos = l.P[km:]                                   # k = 0..k_max
                self.layout.add(f"L{i}.Pr", pos.shape)
                self.layout.add(f"L{i}.Pi", (km,) + pos.shape[1:])
                chunks += [pos.real.ravel(), pos[1:].imag.ravel()]
            if has_b:
                pos = l.bhat[km:]
                self.layout.add(f"L{i}.br", pos.shape)
                self.layout.add(f"L{i}.bi", (km,) + pos.shape[1:])
                chunks += [pos.real.ravel(), pos[1:].imag.ravel()]
        self.layout.add("Q", model.Q.shape)
        self.layout.add("q", model.q_bias.shape)
        chunks += [model.Q.ravel(), model.q_bias.ravel()]
        del K

    @staticmethod
    def _full(pos_r, pos_i, km):
        """Hermitian full array indexed by ``k + k_max`` from ``k >= 0`` parts."""
        pos = pos_r.astype(complex)
        pos[1:] += 1j * pos_i
        return np.concatenate([pos[1:][::-1].conj(), pos]) if km else pos

    def to_model(self, theta=None):
        """Numpy operator model carrying ``theta`` (default: current parameters)."""
        A = self.layout.unpack(np.asarray(self.theta if theta is None else theta, float))
        m = self.template
        if self.kind == "fno":
            layers = []
            for i, (has_p, has_b, act) in enumerate(self.fno_layers):
                P = self._full(A[f"L{i}.Pr"], A[f"L{i}.Pi"], self.k_max) if has_p else None
                b = self._full(A[f"L{i}.br"], A[f"L{i}.bi"], self.k_max) if has_b else None
                layers.append(FourierLayer(A[f"L{i}.W"].copy(), P, b, act))
            return FNOModel(_unpack_mlp("lifting", A, self.acts["lifting"]), layers,
                            A["Q"].copy(), m.k_max, A["q"].copy(), m.activation, dict(m.meta))
        nets = {n: _unpack_mlp(n, A, a) for n, a in self.acts.items()}
        if self.kind == "don":
            return DeepONetModel(nets["branch"], nets["trunk"], m.sensors, m.activation,
                                 dict(m.meta), m.channels)
        return ShiftDeepONetModel(nets["branch"], nets["trunk"], nets["scale_net"],
                                  nets["shift_net"], m.sensors, m.activation, dict(m.meta),
                                  m.channels)

    # -- torch forward
    def prepare(self, inputs: np.ndarray, grid: Grid) -> dict:
        """Precomputed tensors for inputs ``(B, C, n)`` on ``grid``."""
        inputs = np.asarray(inputs, float)
        if self.kind == "fno":
            k = np.arange(self.k_max + 1)
            ph = 2 * np.pi * np.outer(grid.points, k) / grid.period
            x = np.broadcast_to(grid.points, (len(inputs), 1, grid.n))
            lift = np.concatenate([inputs, x], axis=1).transpose(0, 2, 1)
            return {"lift": torch.from_numpy(np.ascontiguousarray(lift)),
                    "C": torch.from_numpy(np.cos(ph)), "S": torch.from_numpy(np.sin(ph)),
                    "n": grid.n}
        e = encode_sensors(inputs if self.template.channels > 1 else inputs[:, 0],
                           self.template.sensors, grid)
        e = e.reshape(len(inputs), -1)
        return {"e": torch.from_numpy(np.ascontiguousarray(e)),
                "y": torch.from_numpy(grid.points.copy())}

    @staticmethod
    def select(prep: dict, idx) -> dict:
        idx = torch.as_tensor(np.asarray(idx))
        return {k: (v[idx] if k in ("lift", "e") else v) for k, v in prep.items()}

    def torch_forward(self, theta: torch.Tensor, prep: dict) -> torch.Tensor:
        """Predictions ``(B, n)`` at the grid nodes."""
        P = self.layout.unpack(theta)
        act = _torch_act(self.activation)
        if self.kind == "fno":
            return self._torch_fno(P, prep, act)
        e, y = prep["e"], prep["y"]
        beta = _torch_mlp("branch", P, self.acts["branch"], e, act)
        if self.kind == "don":
            tau = _torch_mlp("trunk", P, self.acts["trunk"], y[:, None], act)
            return beta @ tau.T
        A = _torch_mlp("scale_net", P, self.acts["scale_net"], e, act)       # (B, p)
        g = _torch_mlp("shift_net", P, self.acts["shift_net"], e, act)       # (B, p)
        z = A[:, None, :] * y[None, :, None] + g[:, None, :]                 # (B, q, p)
        acts = self.acts["trunk"]
        h = _torch_mlp("trunk", P, acts[:-1], z.reshape(-1, 1), act)
        h = h.reshape(z.shape + (-1,))                                       # (B, q, p, H)
        last = len(acts) - 1
        # only output k of the last layer is needed at argument z_k
        tau = torch.einsum("bqkh,kh->bqk", h, P[f"trunk.{last}.W"]) + P[f"trunk.{last}.b"]
        if acts[-1]:
            tau = act(tau)
        return (beta[:, None, :] * tau).sum(-1)

    def _torch_fno(self, P, prep, act):
        C, S, n = prep["C"], prep["S"], prep["n"]
        km = self.k_max
        w = torch.full((km + 1,), 2.0, dtype=C.dtype)
        w[0] = 1.0
        v = _torch_mlp("lifting", P, self.acts["lifting"], prep["lift"], act)  # (B, n, dv)
        for i, (has_p, has_b, activated) in enumerate(self.fno_layers):
            pre = v @ P[f"L{i}.W"].T
            re = im = None
            if has_p:
                ar = torch.einsum("bnd,nk->bkd", v, C) / n
                ai = -torch.einsum("bnd,nk->bkd", v, S) / n
                Pr = P[f"L{i}.Pr"]
                Pi = torch.cat([torch.zeros_like(Pr[:1]), P[f"L{i}.Pi"]])
                re = torch.einsum("koi,bki->bko", Pr, ar) - torch.einsum("koi,bki->bko", Pi, ai)
                im = torch.einsum("koi,bki->bko", Pr, ai) + torch.einsum("koi,bki->bko", Pi, ar)
            if has_b:
                br = P[f"L{i}.br"][None]
                bi = torch.cat([torch.zeros_like(br[:, :1]), P[f"L{i}.bi"][None]], dim=1)
                re = br if re is None else re + br
                im = bi if im is None else im + bi
            if re is not None:
                pre = pre + torch.einsum("bkd,nk->bnd", re * w[None, :, None], C) \
                    - torch.einsum("bkd,nk->bnd", im * w[None, :, None], S)
            v = act(pre) if activated else pre
        return (v @ P["Q"].T + P["q"])[..., 0]


# ---------------------------------------------------------------------------
# initialization

def _dense_init(rng, widths, activate_last=False) -> MLP:
    """He-style uniform fan-in weights, biases uniform in ``+-1/sqrt(fan_in)``."""
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        bound = math.sqrt(6.0 / a)
        act = i < len(widths) - 2 or activate_last
        layers.append(Layer(rng.uniform(-bound, bound, (b, a)),
                            rng.uniform(-1, 1, b) / math.sqrt(a), act))
    return MLP(layers)


def init_deeponet(grid: Grid, m: int, p: int, branch_hidden=(64, 64), trunk_hidden=(64, 64),
                  seed: int = 0, activation: str = "relu", channels: int = 1) -> DeepONetModel:
    """DeepONet with ``m`` random sensors on ``grid``."""
    rng = np.random.default_rng(seed)
    sensors = random_sensors(grid, m, seed)
    branch = _dense_init(rng, [channels * m, *branch_hidden, p])
    trunk = _dense_init(rng, [1, *trunk_hidden, p])
    return DeepONetModel(branch, trunk, sensors, activation, {"init_seed": seed}, channels)


def init_shift_deeponet(grid: Grid, m: int, p: int, branch_hidden=(64, 64),
                        trunk_hidden=(64, 64), shift_hidden=(64, 64), seed: int = 0,
                        activation: str = "relu", channels: int = 1) -> ShiftDeepONetModel:
    """Shift-DeepONet whose scale net starts at ``A_k = 1`` and shift net at ``gamma_k = 0``."""
    rng = np.random.default_rng(seed)
    sensors = random_sensors(grid, m, seed)
    mi = channels * m
    branch = _dense_init(rng, [mi, *branch_hidden, p])
    trunk = _dense_init(rng, [1, *trunk_hidden, p])
    scale = _dense_init(rng, [mi, *shift_hidden, p])
    shift = _dense_init(rng, [mi, *shift_hidden, p])
    for net, bias in ((scale, 1.0), (shift, 0.0)):
        last = net.layers[-1]
        W, _ = last.dense()
        net.layers[-1] = Layer(0.1 * W, np.full(p, bias), False)
    return ShiftDeepONetModel(branch, trunk, scale, shift, sensors, activation,
                              {"init_seed": seed}, channels)


def init_fno(d_v: int, k_max: int, n_layers: int, seed: int = 0, activation: str = "gelu",
             d_u: int = 1) -> FNOModel:
    """FNO: linear lifting, ``n_layers`` Fourier layers, a pointwise layer, linear output.

    Multipliers are Hermitian with entries of variance ``1 / (d_v (2 k_max + 1))``.
    """
    rng = np.random.default_rng(seed)
    K = 2 * k_max + 1
    lifting = _dense_init(rng, [d_u + 1, d_v])
    layers = []
    sd = math.sqrt(1.0 / (d_v * K) / 2)
    bound = math.sqrt(6.0 / d_v)
    for _ in range(n_layers):
        pos = rng.normal(0, sd, (k_max + 1, d_v, d_v)) + 1j * rng.normal(0, sd, (k_max + 1, d_v, d_v))
        pos[0] = pos[0].real
        P = np.concatenate([pos[1:][::-1].conj(), pos])
        layers.append(FourierLayer(rng.uniform(-bound, bound, (d_v, d_v)), P,
                                   np.zeros((K, d_v), complex)))
    layers.append(FourierLayer(rng.uniform(-bound, bound, (d_v, d_v))))
    Q = rng.uniform(-bound, bound, (1, d_v)) / math.sqrt(2)
    return FNOModel(lifting, layers, Q, k_max, np.zeros(1), activation, {"init_seed": seed})


# ---------------------------------------------------------------------------
# loss and gradients

def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error; ``d|r|/dr = 0`` at ``r = 0``."""
    return (pred - target).abs().mean()


def backward(model, batch, loss: str = "l1"):
    """Loss value and gradient with respect to the flat parameters.

    ``batch`` is a :class:`Dataset` or a tuple ``(inputs, outputs, grid)``.
    """
    if loss != "l1":
        raise ValueError("only the L1 loss is supported")
    inputs, outputs, grid = (batch.inputs, batch.outputs, batch.grid) \
        if isinstance(batch, Dataset) else batch
    tr = Trainable(model)
    prep = tr.prepare(np.asarray(inputs, float), grid)
    theta = torch.tensor(tr.theta, requires_grad=True)
    value = l1_loss(tr.torch_forward(theta, prep), torch.as_tensor(np.asarray(outputs, float)))
    if not torch.isfinite(value):
        raise Divergence("divergence: non-finite loss", batch=0)
    value.backward()
    return float(value.detach()), Gradient(theta.grad.numpy().copy(), tr.layout)


# ---------------------------------------------------------------------------
# optimizer

def adam_step(params: np.ndarray, grad: np.ndarray, state: dict | None, config: TrainConfig,
              lr: float | None = None):
    """One bias-corrected Adam step with coupled (L2) weight decay."""
    b1, b2 = config.betas
    g = grad + config.weight_decay * params
    if state is None:
        state = {"t": 0, "m": np.zeros_like(params), "v": np.zeros_like(params)}
    t = state["t"] + 1
    m = b1 * state["m"] + (1 - b1) * g
    v = b2 * state["v"] + (1 - b2) * g * g
    mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
    step = (config.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + config.adam_eps)
    return params - step, {"t": t, "m": m, "v": v}


# ---------------------------------------------------------------------------
# evaluation

def predict(model, inputs: np.ndarray, grid: Grid) -> np.ndarray:
    """Predictions ``(B, n)`` at the grid nodes."""
    inputs = np.asarray(inputs, float)
    if isinstance(model, FNOModel):
        out = forward(model, inputs, grid=grid)
        return out[:, 0, :] if out.ndim == 3 else out
    u = inputs if getattr(model, "channels", 1) > 1 else inputs[:, 0]
    return np.asarray(forward(model, u, grid.points, grid)).reshape(len(inputs), grid.n)


def relative_l1(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-sample ``||pred - target||_1 / ||target||_1`` (absolute when the target is 0)."""
    num = np.abs(pred - target).sum(-1)
    den = np.abs(target).sum(-1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)


def error_quantiles(errors) -> dict:
    errors = np.asarray(errors, float)
    if errors.size == 0:
        raise ValueError("empty test set")
    q25, med, q75 = np.quantile(errors, [0.25, 0.5, 0.75])
    return {"median": float(med), "q25": float(q25), "q75": float(q75)}


def evaluate(model, test: Dataset) -> dict:
    """Median and quartiles of the per-sample relative L1 error."""
    if len(test) == 0:
        raise ValueError("empty test set")
    errs = relative_l1(predict(model, test.inputs, test.grid), test.outputs)
    return {**error_quantiles(errs), "n": int(len(errs))}


# ---------------------------------------------------------------------------
# training loop

@dataclass
class History:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_rel_l1)
    best_epoch: int = 0
    best_val: float = math.inf
    status: str = "ok"

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_rel_l1"])
        for e, tl, vl in self.rows:
            w.writerow([e, repr(float(tl)), "" if vl is None else repr(float(vl))])
        return out.getvalue()

    def train_loss(self, epoch: int) -> float:
        for e, tl, _ in self.rows:
            if e == epoch:
                return tl
        raise KeyError(epoch)


def _check_disjoint(train: Dataset, val: Dataset):
    a, b = train.manifest, val.manifest
    if all(k in a and k in b for k in ("seed", "start", "n_samples")) and a["seed"] == b["seed"] \
            and a.get("measure") == b.get("measure") and "subset" not in a and "subset" not in b:
        lo = max(a["start"], b["start"])
        hi = min(a["start"] + a["n_samples"], b["start"] + b["n_samples"])
        if lo < hi:
            raise ValueError("train and validation splits overlap")
    rows = {np.ascontiguousarray(r).tobytes() for r in train.inputs}
    if any(np.ascontiguousarray(r).tobytes() in rows for r in val.inputs):
        raise ValueError("train and validation splits overlap")


def _batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, epoch], dtype=np.uint64)))
    return rng.permutation(n)


def train_model(model, data, config: TrainConfig, log=None):
    """Adam on the L1 loss; returns the best-validation snapshot and the history.

    ``data`` is a pair ``(train, validation)`` of disjoint datasets on one grid.
    Epoch 0 in the history is the initialization.  On a non-finite loss a
    :class:`Divergence` carrying the history is raised.
    """
    train, val = data
    if train.grid != val.grid:
        raise ValueError("train and validation grids differ")
    _check_disjoint(train, val)
    if len(train) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(config.seed)
    tr = Trainable(model)
    prep = tr.prepare(train.inputs, train.grid)
    target = torch.from_numpy(np.asarray(train.outputs, float))
    hist = History()

    def val_error(theta):
        if len(val) == 0:
            return None
        return float(np.median(relative_l1(predict(tr.to_model(theta), val.inputs, val.grid),
                                           val.outputs)))

    with torch.no_grad():
        init_loss = float(l1_loss(tr.torch_forward(torch.from_numpy(tr.theta), prep), target))
    v0 = val_error(tr.theta)
    hist.rows.append((0, init_loss, v0))
    best = tr.theta.copy()
    hist.best_val = math.inf if v0 is None else v0
    theta, state = tr.theta.copy(), None
    n, bs = len(train), config.batch_size
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch - 1)
        order = _batch_order(config.seed, epoch, n)
        total = 0.0
        for bi, s in enumerate(range(0, n, bs)):
            idx = order[s:s + bs]
            th = torch.tensor(theta, requires_grad=True)
            loss = l1_loss(tr.torch_forward(th, Trainable.select(prep, idx)), target[idx])
            if not torch.isfinite(loss):
                hist.status = f"divergence at epoch {epoch}, batch {bi}"
                raise Divergence(f"divergence: non-finite loss at epoch {epoch}, batch {bi}",
                                 batch=bi, history=hist)
            loss.backward()
            theta, state = adam_step(theta, th.grad.numpy(), state, config, lr)
            total += float(loss.detach()) * len(idx)
        ve = val_error(theta) if (epoch % config.val_every == 0 or epoch == config.epochs) else None
        hist.rows.append((epoch, total / n, ve))
        if ve is not None and ve < hist.best_val:
            hist.best_val, hist.best_epoch, best = ve, epoch, theta.copy()
        if log is not None:
            log(epoch, total / n, ve)
    if len(val) == 0:
        best = theta
        hist.best_epoch = config.epochs
    return tr.to_model(best), hist


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
