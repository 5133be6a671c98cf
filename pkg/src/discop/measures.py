"""Input measures and dataset generation.

Every sample ``i`` draws from its own counter-based stream
``Philox(key=(seed, i))``, so a dataset does not depend on generation order
or on how samples are batched.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from . import __version__
from .exact_pde import (
    GAMMA, BoxWaveParams, EulerState1D, box_wave, burgers_exact, burgers_fvm_array,
    euler_fvm, shock_tube_state,
)
from .grid import TWO_PI, Grid, GridFunction


# ---------------------------------------------------------------------------
# measure specifications

@dataclass(frozen=True)
class BoxWaveMeasure:
    """Box waves with uniform height, width and center, transported at speed ``a``.

    Defaults are the unit-period advection benchmark.
    """

    h_range: tuple = (0.2, 0.8)
    w_range: tuple = (0.05, 0.3)
    xi_range: tuple = (0.0, 0.5)
    period: float = 1.0
    speed: float = 0.5
    t_final: float = 0.25
    kind: str = field(default="box", init=False)


@dataclass(frozen=True)
class ShiftedSineMeasure:
    """Burgers data ``-sin(x - xi)`` with uniform ``xi``, solved exactly."""

    xi_range: tuple = (0.0, TWO_PI)
    t_final: float = 1.5
    kind: str = field(default="sine", init=False)

    @property
    def period(self) -> float:
        return TWO_PI


@dataclass(frozen=True)
class PeriodicGRFMeasure:
    """Periodized squared-exponential Gaussian field, evolved by Burgers' FVM.

    Zero mean, unit marginal variance.  Outputs are cell averages of a
    ``refine``-times finer Godunov solve.
    """

    length_scale: float = 0.06
    period: float = 1.0
    t_final: float = 0.1
    refine: int = 4
    cfl: float = 0.45
    kind: str = field(default="grf", init=False)


@dataclass(frozen=True)
class ShockTubeMeasure:
    """Riemann data with affine dependence on ``z ~ U[0,1]^6``; output ``E(T)``."""

    t_final: float = 1.5
    domain: tuple = (-5.0, 5.0)
    cfl: float = 0.45
    kind: str = field(default="shocktube", init=False)

    @property
    def period(self) -> float:
        return self.domain[1] - self.domain[0]


MeasureSpec = Union[BoxWaveMeasure, ShiftedSineMeasure, PeriodicGRFMeasure, ShockTubeMeasure]
_KINDS = {"box": BoxWaveMeasure, "sine": ShiftedSineMeasure,
          "grf": PeriodicGRFMeasure, "shocktube": ShockTubeMeasure}


def measure_to_dict(spec: MeasureSpec) -> dict:
    """JSON-compatible dict (tuples become lists)."""
    return json.loads(json.dumps(asdict(spec)))


def measure_from_dict(d: dict) -> MeasureSpec:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown measure kind {kind!r}")
    cls = _KINDS[kind]
    known = {f for f in cls.__dataclass_fields__ if f != "kind"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys for {kind} measure: {sorted(unknown)}")
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    spec = cls(**d)
    validate_measure(spec)
    return spec


def validate_measure(spec: MeasureSpec):
    for name in ("h_range", "w_range", "xi_range"):
        r = getattr(spec, name, None)
        if r is not None and not (len(r) == 2 and r[0] <= r[1]):
            raise ValueError(f"{name} must be a nonempty interval, got {r}")
    if isinstance(spec, PeriodicGRFMeasure) and not spec.length_scale > 0:
        raise ValueError("length scale must be positive")


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


# ---------------------------------------------------------------------------
# samplers

def sample_box(spec: BoxWaveMeasure, rng: np.random.Generator) -> BoxWaveParams:
    h, w, xi = rng.uniform(0.0, 1.0, 3)
    lerp = lambda r, s: r[0] + (r[1] - r[0]) * s  # noqa: E731
    return BoxWaveParams(lerp(spec.h_range, h), lerp(spec.w_range, w), lerp(spec.xi_range, xi))


def periodized_kernel(x: np.ndarray, length_scale: float, period: float) -> np.ndarray:
    """``sum_m exp(-(x + m period)^2 / (2 l^2))``, normalized to 1 at ``x = 0``."""
    reach = int(math.ceil(10 * length_scale / period)) + 1
    m = np.arange(-reach, reach + 1)[:, None]
    k = lambda y: np.exp(-((y + m * period) ** 2) / (2 * length_scale ** 2)).sum(axis=0)  # noqa: E731
    return k(np.asarray(x, float)) / k(np.zeros(1))


def grf_eigenvalues(spec: PeriodicGRFMeasure, grid: Grid):
    """Eigenvalues of the circulant covariance matrix and the number clamped to 0."""
    c = periodized_kernel(grid.period * np.arange(grid.n) / grid.n, spec.length_scale, spec.period)
    lam = np.fft.fft(c).real
    neg = lam < 0
    return np.where(neg, 0.0, lam), int(neg.sum())


def sample_grf(spec: PeriodicGRFMeasure, rng: np.random.Generator, grid: Grid,
               eigenvalues: np.ndarray | None = None) -> GridFunction:
    """Spectral synthesis ``Re(ifft(sqrt(lam) (a + ib))) sqrt(n)``."""
    if grid.n & (grid.n - 1):
        raise ValueError("GRF sampling needs a power-of-two grid")
    lam = grf_eigenvalues(spec, grid)[0] if eigenvalues is None else eigenvalues
    z = rng.standard_normal(grid.n) + 1j * rng.standard_normal(grid.n)
    u = np.fft.ifft(np.sqrt(lam) * z).real * math.sqrt(grid.n)
    return GridFunction(grid, u)


def _G(z):
    return 2.0 * z - 1.0


def shocktube_from_z(z) -> tuple:
    """Map ``z in [0,1]^6`` to ``(left, right, x0)`` primitive Riemann data."""
    z = np.asarray(z, float)
    left = (0.75 + 0.45 * _G(z[0]), 0.5 + 0.5 * _G(z[2]), 2.5 + 1.6 * _G(z[3]))
    right = (0.4 + 0.3 * _G(z[1]), 0.0, 0.375 + 0.325 * _G(z[4]))
    return left, right, 0.5 * _G(z[5])


def sample_shocktube(spec: ShockTubeMeasure, rng: np.random.Generator, grid: Grid,
                     z=None) -> EulerState1D:
    if z is None:
        z = rng.uniform(0.0, 1.0, 6)
    left, right, x0 = shocktube_from_z(z)
    return shock_tube_state(grid, left, right, x0)


def measure_grid(spec: MeasureSpec, n: int) -> Grid:
    """Default sampling grid for a measure at resolution ``n``."""
    if isinstance(spec, ShockTubeMeasure):
        return Grid(n, spec.period, spec.domain[0]).cell_centered()
    if isinstance(spec, PeriodicGRFMeasure):
        return Grid(n, spec.period).cell_centered()
    return Grid(n, spec.period)


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    """Input/output samples on a common grid.

    ``inputs`` has shape (n_samples, n_channels, n), ``outputs`` (n_samples, n).
    """

    inputs: np.ndarray
    outputs: np.ndarray
    grid: Grid
    manifest: dict

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs differ in length")
        if self.inputs.ndim != 3 or self.inputs.shape[2] != self.grid.n:
            raise ValueError(f"inputs must have shape (N, C, {self.grid.n})")
        if self.outputs.shape[1:] != (self.grid.n,):
            raise ValueError(f"outputs must have shape (N, {self.grid.n})")

    def __len__(self):
        return len(self.outputs)

    def subset(self, idx) -> "Dataset":
        man = dict(self.manifest, subset=list(map(int, np.arange(len(self))[idx])))
        return Dataset(self.inputs[idx], self.outputs[idx], self.grid, man)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, "<f8").tobytes())
        h.update(np.ascontiguousarray(self.outputs, "<f8").tobytes())
        return h.hexdigest()


class SampleError(RuntimeError):
    pass


def generate_dataset(measure: MeasureSpec, n_samples: int, n: int, seed: int,
                     start: int = 0) -> Dataset:
    """Draw ``n_samples`` inputs (sample indices ``start, start+1, ...``) and solve.

    Pairings: box waves are advected exactly, shifted sines solved by
    characteristics, Gaussian fields by Godunov FVM, shock tubes by Rusanov FVM.
    """
    validate_measure(measure)
    grid = measure_grid(measure, n)
    idx = range(start, start + n_samples)
    rngs = [sample_stream(seed, i) for i in idx]
    extra: dict = {}
    if isinstance(measure, BoxWaveMeasure):
        params = np.array([list(vars(sample_box(measure, r)).values()) for r in rngs])
        params = params.reshape(-1, 3)
        h, w, xi = (params[:, k:k + 1] for k in range(3))
        x = grid.points
        inputs = box_wave(x, h, w, xi, grid.period)[:, None, :]
        shift = math.fmod(measure.speed * measure.t_final, grid.period)
        outputs = box_wave(x - shift, h, w, xi, grid.period)
        extra["parameters"] = {"h": h.ravel().tolist(), "w": w.ravel().tolist(),
                               "xi": xi.ravel().tolist()}
        solver = {"name": "exact transport"}
    elif isinstance(measure, ShiftedSineMeasure):
        lo, hi = measure.xi_range
        xi = np.array([r.uniform(lo, hi) for r in rngs])
        inputs = -np.sin(grid.points[None, :] - xi[:, None])[:, None, :]
        outputs = np.array([burgers_exact(v, measure.t_final, grid).values for v in xi])
        outputs = outputs.reshape(len(xi), grid.n)
        extra["parameters"] = {"xi": xi.tolist()}
        solver = {"name": "characteristics", "bisection_tol": 1e-12}
    elif isinstance(measure, PeriodicGRFMeasure):
        r = measure.refine
        fine = Grid(n * r, measure.period).cell_centered()
        lam, clamped = grf_eigenvalues(measure, fine)
        u0 = np.array([sample_grf(measure, g, fine, lam).values for g in rngs]).reshape(-1, fine.n)
        uT = burgers_fvm_array(u0, fine.dx, measure.t_final, measure.cfl)
        inputs = u0.reshape(-1, n, r).mean(axis=2)[:, None, :]
        outputs = uT.reshape(-1, n, r).mean(axis=2)
        extra["clamped_eigenvalues"] = clamped
        solver = {"name": "godunov", "cfl": measure.cfl, "fine_n": fine.n,
                  "average_down": r}
    elif isinstance(measure, ShockTubeMeasure):
        inputs = np.zeros((n_samples, 3, n))
        outputs = np.zeros((n_samples, n))
        zs, reached = [], []
        for k, (i, g) in enumerate(zip(idx, rngs)):
            z = g.uniform(0.0, 1.0, 6)
            state = sample_shocktube(measure, g, grid, z)
            try:
                out, info = euler_fvm(state, measure.t_final, measure.cfl, return_info=True)
            except Exception as exc:  # attach the sample index
                raise SampleError(f"sample {i}: {exc}") from exc
            inputs[k] = state.rho, state.m, state.E
            outputs[k] = out.E
            zs.append(z.tolist())
            if info["boundary_reached"]:
                reached.append(i)
        extra["parameters"] = {"z": zs}
        extra["boundary_reached"] = reached
        solver = {"name": "rusanov", "cfl": measure.cfl, "gamma": GAMMA,
                  "boundary": "transmissive"}
    else:
        raise TypeError(f"unsupported measure {measure!r}")
    manifest = {
        "measure": measure_to_dict(measure),
        "seed": int(seed),
        "start": int(start),
        "n_samples": int(n_samples),
        "grid": {"n": grid.n, "period": grid.period, "origin": grid.origin},
        "solver": solver,
        "rng": "numpy Philox, key=(seed, sample index)",
        "version": __version__,
        **extra,
    }
    channels = 3 if isinstance(measure, ShockTubeMeasure) else 1
    inputs = np.asarray(inputs, float).reshape(n_samples, channels, grid.n)
    outputs = np.asarray(outputs, float).reshape(n_samples, grid.n)
    return Dataset(inputs, outputs, grid, manifest)


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True)
