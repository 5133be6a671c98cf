"""Explicit shift-DeepONet and FNO networks for advection and Burgers.

All constructions work on the period ``2 pi``.  The advection benchmark
(unit period, widths in ``[0.05, 0.3]``, speed ``0.5``, time ``0.25``) is
rescaled accordingly: widths ``[0.1 pi, 0.6 pi]``, shift ``a t = pi / 4``,
with the center uniform over the whole period.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exact_pde import box_wave, burgers_exact, psi_inverse, psi_inverse_extended
from .grid import TWO_PI, Grid
from .measures import BoxWaveMeasure, sample_box, sample_stream
from .operator_nets import (
    FNOModel, FourierLayer, ShiftDeepONetModel, fno_forward, shift_deeponet_forward,
)
from .relu.analytic import Divider, plan_analytic
from .relu.angle import AngleRecovery
from .relu.blocks import indicator_c, maxpool_c, multiply_c, ramp_c
from .relu.circuit import Circuit, const
from .relu.mlp import MLP, Layer, affine

ADV_MEASURE = BoxWaveMeasure(h_range=(0.2, 0.8), w_range=(0.05 * TWO_PI, 0.3 * TWO_PI),
                             xi_range=(0.0, TWO_PI), period=TWO_PI, speed=math.pi,
                             t_final=0.25)
ADV_SHIFT = ADV_MEASURE.speed * ADV_MEASURE.t_final


class ConstructionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers

def _const_mlp(values, n_in: int) -> MLP:
    values = np.atleast_1d(np.asarray(values, float))
    return affine(np.zeros((len(values), n_in)), values)


def _pad_rows(net: MLP, rows: int) -> MLP:
    """Append zero outputs so the net returns ``rows`` values."""
    *hidden, last = net.layers
    W, b = last.dense()
    extra = rows - W.shape[0]
    if extra < 0:
        raise ValueError("cannot shrink output")
    W = np.vstack([W, np.zeros((extra, W.shape[1]))])
    return MLP(hidden + [Layer(W, np.concatenate([b, np.zeros(extra)]), last.activated)])


def _pointwise_layers(net: MLP, d_v: int, k_max: int):
    """Hidden layers of a pointwise ReLU net as Fourier layers with ``P = 0``."""
    K = 2 * k_max + 1
    layers = []
    for layer in net.layers[:-1]:
        if not layer.activated:
            raise ValueError("expected activated hidden layers")
        W = np.zeros((d_v, d_v))
        Wd, b = layer.dense()
        W[:Wd.shape[0], :Wd.shape[1]] = Wd
        bhat = np.zeros((K, d_v), complex)
        bhat[k_max, :len(b)] = b
        layers.append(FourierLayer(W, None, bhat))
    last = net.layers[-1]
    if last.activated:
        raise ValueError("expected an affine output layer")
    Wd, b = last.dense()
    Q = np.zeros((Wd.shape[0], d_v))
    Q[:, :Wd.shape[1]] = Wd
    return layers, Q, b


def _dv_for(net: MLP, minimum: int) -> int:
    return max([minimum] + [l.out_dim for l in net.layers[:-1]] + [net.in_dim])


# ---------------------------------------------------------------------------
# advection shift-DeepONet

def _height_subset(m: int, w_min: float) -> np.ndarray:
    """Sensor indices spaced (also across the wrap) strictly closer than ``w_min``."""
    dx = TWO_PI / m
    stride = int(math.ceil(w_min / dx)) - 1
    if stride < 1:
        raise ConstructionError("insufficient sensors: spacing must be below the minimal width")
    return np.arange(0, m, stride)


def build_adv_sdon(eps: float, m: int, measure: BoxWaveMeasure = ADV_MEASURE) -> ShiftDeepONetModel:
    """Shift-DeepONet with ``p = 6`` for box waves on the ``2 pi`` period.

    Height is the exact max over a sensor subset, width is the input mass
    divided by the height, the center comes from the first discrete Fourier
    mode normalized by ``2 h sin(w/2)`` and passed through angle recovery.
    The output is ``h`` times an approximate periodic indicator built from
    six shifted ramps.
    """
    if not 0 < eps <= 0.5:
        raise ConstructionError("eps must lie in (0, 1/2]")
    (h_lo, h_hi), (w_lo, w_hi) = measure.h_range, measure.w_range
    if m * w_lo < 2 * measure.period:
        raise ConstructionError(f"insufficient sensors: need m * w_min >= {2 * measure.period:.4g}")
    at = measure.speed * measure.t_final
    grid = Grid(m)
    x, dx = grid.points, grid.dx
    subset = _height_subset(m, w_lo)

    def height(c):
        return maxpool_c(c, [c.input(int(i)) for i in subset])

    # branch: +-h for the six terms
    c = Circuit(m)
    h = height(c)
    branch = c.compile([h, h, h, -h, -h, -h], {"part": "height"})

    # shift net
    c = Circuit(m)
    u = c.inputs()
    h = height(c)
    mass = dx * sum((ui for ui in u), const(0.0))
    w_div = Divider(h_lo, h_hi, eps, num_bound=h_hi * (w_hi + 2 * dx))
    w_t = w_div.apply(c, mass, h)
    sin_half = plan_analytic(np.sin, (0.5 * w_lo - 0.1, 0.5 * w_hi + 0.1), eps / 8)
    d_lo = 2 * h_lo * math.sin(0.5 * w_lo) * 0.9
    d_hi = 2 * h_hi * math.sin(0.5 * w_hi) * 1.1
    denom = multiply_c(c, h, 2 * sin_half.apply(c, 0.5 * w_t), 2.0, eps / 8)
    re = dx * sum((float(np.cos(xj)) * uj for xj, uj in zip(x, u)), const(0.0))
    im = dx * sum((float(np.sin(xj)) * uj for xj, uj in zip(x, u)), const(0.0))
    cs_div = Divider(d_lo, d_hi, eps / 4, num_bound=1.1 * d_hi)
    cos_t, sin_t = cs_div.apply(c, re, denom), cs_div.apply(c, im, denom)
    xi_t = AngleRecovery(eps / 2).apply(c, cos_t, sin_t)
    shifts = [-xi_t - at + s * 0.5 * w_t + TWO_PI * j for s in (1, -1) for j in (-1, 0, 1)]
    shift_net = c.compile(shifts, {"part": "shift"})

    # trunk: the same ramp step for all six terms
    c = Circuit(1)
    step = ramp_c(c, c.input(0), 0.0, eps)
    trunk = c.compile([step] * 6, {"part": "step"})

    return ShiftDeepONetModel(branch, trunk, _const_mlp(np.ones(6), m), shift_net, x,
                              meta={"construction": "adv_sdon", "eps": eps, "m": m,
                                    "height_sensors": len(subset), "at": at})


def adv_sdon_components(model: ShiftDeepONetModel, U: np.ndarray) -> dict:
    """Recovered height, width and center for sensor values ``U`` (batch, m)."""
    from .relu.mlp import eval_mlp
    h = eval_mlp(model.branch, U)[:, 0]
    g = eval_mlp(model.shift_net, U)
    at = model.meta["at"]
    w = g[:, 1] - g[:, 4]
    xi = -(g[:, 1] + g[:, 4]) / 2 - at
    return {"h": h, "w": w, "xi": xi}


# ---------------------------------------------------------------------------
# advection FNO

@dataclass
class AdvFNOParts:
    model: FNOModel
    probe: FNOModel  # channels: height, thresholded indicator, C_N, S_N
    N: int


def build_adv_fno_parts(N: int, measure: BoxWaveMeasure = ADV_MEASURE) -> AdvFNOParts:
    """FNO with ``k_max = 1`` evaluating ``h 1[C_N - S_N >= 0]`` on ``N`` nodes.

    ``C_N`` is the first Fourier mode of the input indicator, scaled and
    phase shifted to ``sin(w/2) cos(x - xi - a t)``; ``S_N`` approximates
    ``sin(w) / 2`` from the indicator mass; the height is the mean of the
    input divided by the mean of its indicator.
    """
    (h_lo, h_hi), (w_lo, w_hi) = measure.h_range, measure.w_range
    if N < 4 or TWO_PI / N > w_lo:
        raise ConstructionError("need N >= 4 and 2 pi / N <= w_min")
    at = measure.speed * measure.t_final
    eps = 1.0 / N
    # pointwise tail on channels (mean u, mean indicator, C+, C-)
    c = Circuit(4)
    mu, mi, cp, cm = c.inputs()
    lo = max(1.0 / N, w_lo / TWO_PI - 1.0 / N)
    hi = w_hi / TWO_PI + 1.0 / N
    h_t = Divider(lo, hi, eps, num_bound=h_hi * hi).apply(c, mu, mi)
    half_sin = plan_analytic(lambda w: 0.5 * np.sin(w), (w_lo - 1.0, w_hi + 1.0), eps)
    s_t = half_sin.apply(c, TWO_PI * mi)
    c_t = cp - cm
    ind = ramp_c(c, c_t - s_t, 0.0, eps)
    out = multiply_c(c, h_t, ind, 2.0, eps)
    tail = c.compile([out])
    probe_tail = c.compile([h_t, ind, c_t, s_t])
    d_v = max(_dv_for(tail, 4), _dv_for(probe_tail, 4))

    # lifting: (u, x) -> (indicator, u) using u >= 0
    lc = Circuit(2)
    uu = lc.input(0)
    indicator = lc.relu(uu / h_lo) - lc.relu(uu / h_lo - 1.0)
    lifting = _pad_rows(lc.compile([indicator, lc.relu(uu)]), d_v)

    P = np.zeros((3, d_v, d_v), complex)
    P[1, 0, 1] = 1.0          # mean of u
    P[1, 1, 0] = 1.0          # mean of the indicator
    for k, idx in ((1, 2), (-1, 0)):
        mult = 0.5 * math.pi * np.exp(-1j * k * at)
        P[idx, 2, 0], P[idx, 3, 0] = mult, -mult
    first = FourierLayer(np.zeros((d_v, d_v)), P)

    def assemble(net, meta):
        layers, Q, q = _pointwise_layers(net, d_v, 1)
        return FNOModel(lifting, [first] + layers, Q, 1, q, meta=meta)

    meta = {"construction": "adv_fno", "N": N, "at": at}
    return AdvFNOParts(assemble(tail, meta), assemble(probe_tail, dict(meta, probe=True)), N)


def build_adv_fno(N: int, measure: BoxWaveMeasure = ADV_MEASURE) -> FNOModel:
    return build_adv_fno_parts(N, measure).model


# ---------------------------------------------------------------------------
# Burgers

def phase_matrix(sensors=None) -> np.ndarray:
    """``A`` with ``A g(X) = (cos xi, sin xi)`` for ``g = -sin(x - xi)``.

    Solves for the coefficients of ``{1, sin, cos}`` through the sensor values;
    since ``-sin(x - xi) = -cos(xi) sin x + sin(xi) cos x`` the rows are the
    negated sine and the cosine coefficient functionals.
    """
    x = np.asarray(TWO_PI * np.arange(3) / 3 if sensors is None else sensors, float)
    V = np.stack([np.ones_like(x), np.sin(x), np.cos(x)], axis=1)
    Vinv = np.linalg.inv(V)
    return np.stack([-Vinv[1], Vinv[2]])


@dataclass
class BurgersProfile:
    """ReLU approximation of the shock-centered profile on ``[-2 pi, 2 pi]``."""

    t: float
    eps: float
    plan: object = None
    delta: float = 0.0
    mult_eps: float = 0.0
    regime: str = "post-shock"

    def __post_init__(self):
        if self.t > 1.0:
            f = lambda y: -np.sin(psi_inverse_extended(y, self.t))  # noqa: E731
        else:
            self.regime = "pre-shock"
            f = lambda y: -np.sin(psi_inverse(np.clip(y, 0.0, TWO_PI), self.t))  # noqa: E731
        self.plan = plan_analytic(f, (0.0, TWO_PI), self.eps / 8)
        self.delta = self.eps / 4
        self.mult_eps = self.eps / 16

    def apply(self, c: Circuit, y):
        """``chi+(y) U(y) + chi-(y) U(y + 2 pi)`` with ramp indicators."""
        plus = indicator_c(c, y, 0.0, TWO_PI, self.delta)
        minus = indicator_c(c, y, -TWO_PI, 0.0, self.delta)
        up = self.plan.apply(c, y)
        um = self.plan.apply(c, y + TWO_PI)
        return (multiply_c(c, plus, up, 2.0, self.mult_eps)
                + multiply_c(c, minus, um, 2.0, self.mult_eps))


def _check_time(t):
    if t <= 1.0:
        warnings.warn("pre-shock regime: use smooth path", RuntimeWarning, stacklevel=3)


def build_burg_sdon(eps: float, t: float) -> ShiftDeepONetModel:
    """``N(u)(x) = Phi(x - Xi(A u(X)))`` with three sensors ``2 pi j / 3``.

    One term: ``beta = 1``, trunk ``Phi``, scale ``1``, shift ``-Xi``.
    """
    if not 0 < eps <= 0.5:
        raise ConstructionError("eps must lie in (0, 1/2]")
    _check_time(t)
    sensors = TWO_PI * np.arange(3) / 3
    A = phase_matrix(sensors)
    c = Circuit(3)
    u = c.inputs()
    cs = sum((float(A[0, j]) * u[j] for j in range(3)), const(0.0))
    sn = sum((float(A[1, j]) * u[j] for j in range(3)), const(0.0))
    xi_t = AngleRecovery(eps / 8).apply(c, cs, sn)
    shift_net = c.compile([-xi_t], {"part": "shift"})
    prof = BurgersProfile(t, eps)
    c = Circuit(1)
    trunk = c.compile([prof.apply(c, c.input(0))], {"part": "profile"})
    return ShiftDeepONetModel(_const_mlp(1.0, 3), trunk, _const_mlp(1.0, 3), shift_net, sensors,
                              meta={"construction": "burg_sdon", "eps": eps, "t": t,
                                    "regime": prof.regime})


@dataclass
class BurgFNOParts:
    model: FNOModel
    phase: FNOModel  # outputs (cos xi, sin xi)
    N: int


def build_burg_fno_parts(eps: float, t: float, N: int) -> BurgFNOParts:
    """FNO with ``k_max = 1`` on ``N`` nodes of ``[0, 2 pi)``.

    Phase recovery: a multiplier ``exp(i k pi / 2)`` produces ``u(x + pi/2)``,
    a ReLU gate built from ``x`` keeps only the node ``x = 0``, and the
    ``k = 0`` multiplier ``N`` turns the gated values into the constants
    ``u(0) = sin xi`` and ``u(pi/2) = -cos xi``.  Both steps are exact for
    ``N >= 3`` because the input only has modes ``|k| <= 1``.
    """
    if N < 3:
        raise ConstructionError("N < 3: the phase recovery needs at least 3 grid points")
    if not 0 < eps <= 0.5:
        raise ConstructionError("eps must lie in (0, 1/2]")
    _check_time(t)
    dx = TWO_PI / N
    # pointwise tail on channels (sin+, sin-, mcos+, mcos-, x)
    c = Circuit(5)
    ap, am, bp, bm, x = c.inputs()
    cs, sn = bm - bp, ap - am
    xi_t = AngleRecovery(eps / 8).apply(c, cs, sn)
    prof = BurgersProfile(t, eps)
    tail = c.compile([prof.apply(c, x - xi_t)])
    d_v = _dv_for(tail, 6)

    lifting = _pad_rows(affine(np.eye(2)), d_v)          # (u, x)
    K = 3
    W1 = np.zeros((d_v, d_v))
    W1[0, 0], W1[1, 0] = 1.0, -1.0                        # u+, u-
    W1[4, 1] = 1.0                                        # x (nonnegative)
    W1[5, 1] = 1.0 / dx                                   # relu(x/dx - 1)
    b1 = np.zeros((K, d_v), complex)
    b1[1, 5] = -1.0
    P1 = np.zeros((K, d_v, d_v), complex)
    for k in (-1, 1):
        shift = np.exp(1j * k * math.pi / 2)
        P1[k + 1, 2, 0], P1[k + 1, 3, 0] = shift, -shift  # u(x + pi/2), split by sign
    layer1 = FourierLayer(W1, P1, b1)
    # gate: relu(+-v - 2 d) with d = x/dx - relu(x/dx - 1), zero except at x = 0
    W2 = np.zeros((d_v, d_v))
    for row, (col, sgn) in enumerate(((0, 1), (0, -1), (2, 1), (2, -1))):
        src = (col, col + 1)
        W2[row, src[0]], W2[row, src[1]] = sgn, -sgn      # +-(v+ - v-)
        W2[row, 4] += -2.0 / dx
        W2[row, 5] += 2.0
    W2[4, 4] = 1.0
    layer2 = FourierLayer(W2)
    W3 = np.zeros((d_v, d_v))
    W3[4, 4] = 1.0
    P3 = np.zeros((K, d_v, d_v), complex)
    for row, (a, b, sgn) in enumerate(((0, 1, 1), (0, 1, -1), (2, 3, 1), (2, 3, -1))):
        P3[1, row, a], P3[1, row, b] = sgn * N, -sgn * N
    layer3 = FourierLayer(W3, P3)
    head = [layer1, layer2, layer3]

    layers, Q, q = _pointwise_layers(tail, d_v, 1)
    meta = {"construction": "burg_fno", "eps": eps, "t": t, "N": N, "regime": prof.regime}
    model = FNOModel(lifting, head + layers, Q, 1, q, meta=meta)
    Qp = np.zeros((2, d_v))
    Qp[0, 3], Qp[0, 2] = 1.0, -1.0
    Qp[1, 0], Qp[1, 1] = 1.0, -1.0
    phase = FNOModel(lifting, head, Qp, 1, meta=dict(meta, probe="phase"))
    return BurgFNOParts(model, phase, N)


def build_burg_fno(eps: float, t: float, N: int) -> FNOModel:
    return build_burg_fno_parts(eps, t, N).model


# ---------------------------------------------------------------------------
# Monte-Carlo errors

def _l1(pred, truth, dx):
    return dx * np.abs(pred - truth).sum(axis=-1)


def mc_errors(model, n_mc: int = 512, seed: int = 0, n_eval: int | None = None,
              chunk: int = 32) -> np.ndarray:
    """L1 errors on ``n_mc`` independent draws from the construction's measure."""
    kind = model.meta.get("construction")
    rngs = [sample_stream(seed, i) for i in range(n_mc)]
    errs = []
    if kind == "adv_sdon":
        m = model.m
        grid_in, grid_out = Grid(m), Grid(n_eval or 8192)
        P = np.array([[p.h, p.w, p.xi] for p in (sample_box(ADV_MEASURE, r) for r in rngs)])
        for s in range(0, n_mc, chunk):
            h, w, xi = (P[s:s + chunk, k:k + 1] for k in range(3))
            U = box_wave(grid_in.points, h, w, xi)
            truth = box_wave(grid_out.points - ADV_SHIFT, h, w, xi)
            pred = shift_deeponet_forward(model, U, grid_out.points, grid_in)
            errs.append(_l1(pred, truth, grid_out.dx))
    elif kind == "adv_fno":
        grid = Grid(model.meta["N"])
        P = np.array([[p.h, p.w, p.xi] for p in (sample_box(ADV_MEASURE, r) for r in rngs)])
        for s in range(0, n_mc, chunk):
            h, w, xi = (P[s:s + chunk, k:k + 1] for k in range(3))
            U = box_wave(grid.points, h, w, xi)
            truth = box_wave(grid.points - ADV_SHIFT, h, w, xi)
            pred = fno_forward(model, U, grid)[:, 0, :]
            errs.append(_l1(pred, truth, grid.dx))
    elif kind in ("burg_sdon", "burg_fno"):
        t = model.meta["t"]
        xis = np.array([r.uniform(0.0, TWO_PI) for r in rngs])
        grid = Grid(model.meta["N"]) if kind == "burg_fno" else Grid(n_eval or 1024)
        for s in range(0, n_mc, chunk):
            xi = xis[s:s + chunk]
            U = -np.sin(grid.points[None, :] - xi[:, None])
            truth = np.array([burgers_exact(v, t, grid).values for v in xi])
            if kind == "burg_fno":
                pred = fno_forward(model, U, grid)[:, 0, :]
            else:
                g3 = Grid(3)
                pred = shift_deeponet_forward(model, _sine_at(g3.points, xi), grid.points, g3)
            errs.append(_l1(pred, truth, grid.dx))
    else:
        raise ConstructionError(f"model has no construction tag: {kind!r}")
    return np.concatenate(errs)


def _sine_at(sensors, xi):
    return -np.sin(np.asarray(sensors)[None, :] - np.asarray(xi)[:, None])


# ---------------------------------------------------------------------------
# scaling reports

@dataclass
class ConstructionReport:
    budgets: list
    mean_err: list
    median_err: list
    sizes: list
    fit: dict | None = None
    size_fit: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["budget", "size", "mean_err", "median_err"])
        for row in zip(self.budgets, self.sizes, self.mean_err, self.median_err):
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps({"budgets": self.budgets, "sizes": self.sizes,
                           "mean_err": self.mean_err, "median_err": self.median_err,
                           "fit": self.fit, "size_fit": self.size_fit, "meta": self.meta})


def _linfit(x, y) -> dict:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    return {"slope": float(slope), "intercept": float(icpt), "residuals": resid.tolist()}


def scaling_report(builder, budgets, n_mc: int = 512, seed: int = 0, fit: str = "loglog",
                   n_eval: int | None = None) -> ConstructionReport:
    """Build one model per budget, measure Monte-Carlo L1 errors and fit rates.

    ``fit="loglog"`` regresses ``log err`` on ``log budget``; ``"semilog"``
    regresses ``log err`` on ``budget``.  The size fit regresses
    ``log size`` on ``log log(1/budget)`` for ``budget < 1`` and on
    ``log budget`` otherwise.
    """
    budgets = list(budgets)
    if not budgets:
        raise ValueError("budgets must be nonempty")
    means, medians, sizes = [], [], []
    for b in budgets:
        model = builder(b)
        err = mc_errors(model, n_mc, seed, n_eval)
        means.append(float(err.mean()))
        medians.append(float(np.median(err)))
        sizes.append(int(model.account()["size"]))
    report = ConstructionReport([float(b) if isinstance(b, float) else int(b) for b in budgets],
                                means, medians, sizes, meta={"n_mc": n_mc, "seed": seed})
    if len(budgets) < 2:
        report.meta["fit_skipped"] = "single budget"
        return report
    bx = np.asarray(budgets, float)
    report.fit = _linfit(np.log(bx) if fit == "loglog" else bx, np.log(means))
    report.fit["kind"] = fit
    sx = np.log(np.log(1.0 / bx)) if np.all(bx < 1) else np.log(bx)
    report.size_fit = _linfit(sx, np.log(sizes))
    return report
