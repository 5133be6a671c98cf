"""Reference solution operators.

Exact transport of box waves, the entropy solution of Burgers' equation with
data ``-sin(x - xi)`` by characteristics, and first-order finite-volume
solvers for Burgers' equation (Godunov) and the 1D Euler equations (Rusanov).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import TWO_PI, Grid, GridFunction

GAMMA = 1.4
BISECTION_MAX_ITER = 200
BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class BoxWaveParams:
    h: float
    w: float
    xi: float


def box_wave(x: np.ndarray, h, w, xi, period: float = TWO_PI) -> np.ndarray:
    """``h * 1_{[-w/2, w/2]}(x - xi)`` extended periodically.

    Parameters may be arrays of shape (batch, 1) to produce a batch.
    """
    d = np.mod(x - xi + 0.5 * period, period) - 0.5 * period
    return h * (np.abs(d) <= 0.5 * w)


def advect_exact(params: BoxWaveParams, a: float, t: float, grid: Grid) -> GridFunction:
    """Sample the box wave transported with speed ``a`` for time ``t``."""
    shift = math.fmod(a * t, grid.period)
    vals = box_wave(grid.points - shift, params.h, params.w, params.xi, grid.period)
    return GridFunction(grid, vals)


# ---------------------------------------------------------------------------
# Burgers by characteristics

def _bisect(f, lo, hi, tol=BISECTION_TOL, max_iter=BISECTION_MAX_ITER):
    """Vectorized bisection for increasing ``f`` with ``f(lo) <= 0 <= f(hi)``."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.copy(), hi.copy()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        hit = fm == 0
        right = fm > 0
        hi = np.where(right | hit, mid, hi)
        lo = np.where(right & ~hit, lo, mid)
        if np.all(hi - lo <= tol * 1e-3):
            break
    return 0.5 * (lo + hi)


def burgers_xt(t: float) -> float:
    """Positive root of ``x = t sin x`` for ``t > 1``, zero otherwise."""
    if t <= 1.0:
        return 0.0
    # g(x) = x - t sin x is negative just right of 0 and positive at pi
    g = lambda x: x - t * np.sin(x)  # noqa: E731
    lo = min(1e-8, math.pi / 2)
    while g(lo) >= 0 and lo > 1e-300:
        lo *= 0.5
    return float(_bisect(g, lo, math.pi))


def psi(x0, t):
    """Characteristic map ``x0 - t sin x0``."""
    return x0 - t * np.sin(x0)


def psi_inverse(x, t: float):
    """Inverse of ``psi(., t)`` restricted to ``[x_t, 2pi - x_t]``.

    Accepts scalars or arrays with entries in ``[0, 2pi]``.
    """
    xt = burgers_xt(t)
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        return x.copy() if x.ndim else float(x)
    root = _bisect(lambda y: psi(y, t) - x, np.full_like(x, xt),
                   np.full_like(x, TWO_PI - xt))
    return root if x.ndim else float(root)


def psi_inverse_extended(x, t: float):
    """Inverse of ``psi(., t)`` on ``[x_c, 2pi - x_c]`` with ``cos x_c = 1/t``.

    This is the maximal monotone branch, valid for ``x`` in
    ``[psi(x_c), 2pi - psi(x_c)]`` which strictly contains ``[0, 2pi]`` when
    ``t > 1``.  Used for analytic continuation of the solution past the shock.
    """
    if t <= 1.0:
        raise ValueError("extended inverse needs t > 1")
    xc = math.acos(1.0 / t)
    x = np.asarray(x, dtype=float)
    root = _bisect(lambda y: psi(y, t) - x, np.full_like(x, xc),
                   np.full_like(x, TWO_PI - xc))
    return root if x.ndim else float(root)


def burgers_profile(y, t: float):
    """``U_t(y) = -sin(psi_t^{-1}(y))`` for ``y`` in ``[0, 2pi)``."""
    return -np.sin(psi_inverse(y, t))


def burgers_exact(xi: float, t: float, grid: Grid) -> GridFunction:
    """Entropy solution with data ``-sin(x - xi)``; the shock sits at ``xi``.

    At ``x == xi`` the right limit is returned.
    """
    y = np.mod(grid.points - xi, TWO_PI)
    y = np.where(y >= TWO_PI, 0.0, y)
    if t == 0.0:
        return GridFunction(grid, -np.sin(grid.points - xi))
    return GridFunction(grid, burgers_profile(y, t))


# ---------------------------------------------------------------------------
# finite volumes

def godunov_flux_burgers(ul: np.ndarray, ur: np.ndarray) -> np.ndarray:
    """Exact Godunov flux for ``f(u) = u^2 / 2`` (convex)."""
    return 0.5 * np.maximum(np.maximum(ul, 0.0) ** 2, np.minimum(ur, 0.0) ** 2)


def burgers_fvm_array(u0: np.ndarray, dx: float, t_final: float,
                      cfl: float = 0.45) -> np.ndarray:
    """Periodic first-order Godunov scheme on the last axis of ``u0``.

    Leading axes are independent samples, each with its own time step, so a
    batched solve is bit-identical to solving the rows one at a time.
    """
    if not 0.0 < cfl <= 1.0:
        raise ValueError(f"cfl must be in (0, 1], got {cfl}")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    u = np.array(u0, dtype=float, copy=True)
    t = np.zeros(u.shape[:-1] + (1,))
    while True:
        speed = np.max(np.abs(u), axis=-1, keepdims=True)
        active = (t < t_final) & (speed > 0)
        if not np.any(active):
            break
        dt = np.where(active, np.minimum(cfl * dx / np.where(active, speed, 1.0),
                                         t_final - t), 0.0)
        flux = godunov_flux_burgers(u, np.roll(u, -1, axis=-1))  # F_{j+1/2}
        u = u - dt / dx * (flux - np.roll(flux, 1, axis=-1))
        t = t + dt
    return u


def burgers_fvm(u0: GridFunction, t_final: float, cfl: float = 0.45) -> GridFunction:
    """Godunov finite-volume solution of ``u_t + (u^2/2)_x = 0`` (periodic)."""
    return GridFunction(u0.grid, burgers_fvm_array(u0.values, u0.grid.dx, t_final, cfl))


class PositivityLost(RuntimeError):
    pass


@dataclass(frozen=True)
class EulerState1D:
    grid: Grid
    rho: np.ndarray
    m: np.ndarray
    E: np.ndarray

    @classmethod
    def from_primitive(cls, grid: Grid, rho, u, p, gamma: float = GAMMA):
        rho = np.asarray(rho, float) * np.ones(grid.n)
        u = np.asarray(u, float) * np.ones(grid.n)
        p = np.asarray(p, float) * np.ones(grid.n)
        return cls(grid, rho, rho * u, p / (gamma - 1) + 0.5 * rho * u * u)

    @property
    def velocity(self) -> np.ndarray:
        return self.m / self.rho

    def pressure(self, gamma: float = GAMMA) -> np.ndarray:
        return (gamma - 1) * (self.E - 0.5 * self.m ** 2 / self.rho)

    def totals(self) -> np.ndarray:
        dx = self.grid.dx
        return dx * np.array([self.rho.sum(), self.m.sum(), self.E.sum()])


def _euler_flux(q: np.ndarray, gamma: float):
    rho, m, E = q
    u = m / rho
    p = (gamma - 1) * (E - 0.5 * m * u)
    return np.stack([m, m * u + p, (E + p) * u]), u, p


def euler_fvm(init: EulerState1D, t_final: float, cfl: float = 0.45,
              boundary: str = "transmissive", gamma: float = GAMMA,
              return_info: bool = False):
    """Rusanov (local Lax-Friedrichs) scheme for the 1D Euler equations.

    Parameters
    ----------
    init : EulerState1D
        Cell averages of density, momentum and total energy.
    t_final : float
    cfl : float
        Courant number, ``dt = cfl * dx / max(|u| + c)``.
    boundary : {"transmissive", "periodic"}
    return_info : bool
        Also return a dict with step count, final time and whether waves
        reached the outermost cells.

    Raises
    ------
    PositivityLost
        If density or pressure become nonpositive.
    """
    if boundary not in ("transmissive", "periodic"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if not 0.0 < cfl <= 1.0:
        raise ValueError(f"cfl must be in (0, 1], got {cfl}")
    dx = init.grid.dx
    q = np.stack([init.rho, init.m, init.E]).astype(float)
    q0_edges = q[:, [0, -1]].copy()
    _check_positive(q, 0.0, gamma)
    t, steps = 0.0, 0
    while t < t_final:
        if boundary == "periodic":
            ext = np.concatenate([q[:, -1:], q, q[:, :1]], axis=1)
        else:
            ext = np.concatenate([q[:, :1], q, q[:, -1:]], axis=1)
        f, u, p = _euler_flux(ext, gamma)
        c = np.sqrt(gamma * p / ext[0])
        a = np.abs(u) + c
        dt = min(cfl * dx / float(a.max()), t_final - t)
        amax = np.maximum(a[:-1], a[1:])
        flux = 0.5 * (f[:, :-1] + f[:, 1:]) - 0.5 * amax * (ext[:, 1:] - ext[:, :-1])
        q = q - dt / dx * (flux[:, 1:] - flux[:, :-1])
        t += dt
        steps += 1
        _check_positive(q, t, gamma)
    out = EulerState1D(init.grid, q[0], q[1], q[2])
    if not return_info:
        return out
    scale = np.maximum(np.abs(q0_edges), 1.0)
    reached = bool(np.any(np.abs(q[:, [0, -1]] - q0_edges) > 1e-8 * scale))
    return out, {"steps": steps, "time": t, "boundary_reached": reached}


def _check_positive(q, t, gamma):
    rho = q[0]
    p = (gamma - 1) * (q[2] - 0.5 * q[1] ** 2 / np.where(rho > 0, rho, 1.0))
    bad = np.flatnonzero((rho <= 0) | (p <= 0))
    if bad.size:
        j = int(bad[0])
        raise PositivityLost(
            f"positivity lost at cell {j}, t={t:.6g}: rho={rho[j]:.3g}, p={p[j]:.3g}")


def shock_tube_state(grid: Grid, left, right, x0: float, gamma: float = GAMMA) -> EulerState1D:
    """Riemann data ``left = (rho, u, p)`` for ``x < x0``, ``right`` otherwise."""
    x = grid.points
    sel = x < x0
    prim = [np.where(sel, l, r) for l, r in zip(left, right)]
    return EulerState1D.from_primitive(grid, *prim, gamma=gamma)


def run_shock_tube(left, right, x0: float, t_final: float, n: int,
                   domain=(-5.0, 5.0), cfl: float = 0.45):
    """Shock tube on ``domain`` with transmissive ends; cell-centered grid.

    Emits a warning and reports ``boundary_reached`` when waves touch the ends.
    """
    a, b = domain
    grid = Grid(n, b - a, a).cell_centered()
    state, info = euler_fvm(shock_tube_state(grid, left, right, x0), t_final, cfl,
                            return_info=True)
    if info["boundary_reached"]:
        warnings.warn("shock-tube waves reached the domain boundary", RuntimeWarning)
    return state, info
