"""Periodic grids, grid functions, quadrature and the 1/N-normalized DFT.

Convention used throughout the package::

    F_N f(k) = (1/N) sum_j f(x_j) exp(-i k 2 pi x_j / period)

so that ``f(x_j) = sum_k F_N f(k) exp(i k 2 pi x_j / period)``.  On the
standard domain ``period = 2 pi`` the phase reduces to ``exp(-i k x_j)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Grid:
    """Equidistant periodic grid ``x_j = origin + period * j / n``."""

    n: int
    period: float = TWO_PI
    origin: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid needs n >= 1, got {self.n}")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def dx(self) -> float:
        return self.period / self.n

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.period * np.arange(self.n) / self.n

    def cell_centered(self) -> "Grid":
        """Same cells, nodes moved to the cell midpoints."""
        return Grid(self.n, self.period, self.origin + 0.5 * self.dx)

    def refine(self, factor: int) -> "Grid":
        return Grid(self.n * factor, self.period, self.origin)


@dataclass(frozen=True)
class GridFunction:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise ValueError(
                f"expected {self.grid.n} values, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: Grid, f) -> "GridFunction":
        return cls(grid, f(grid.points))

    def _check(self, other: "GridFunction"):
        if other.grid != self.grid:
            raise ValueError("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


@dataclass(frozen=True)
class ComplexSpectrum:
    """All ``n`` DFT coefficients, stored in numpy FFT order.

    ``coefficients[k % n]`` holds mode ``k`` for
    ``k in {-(n//2), ..., ceil(n/2) - 1}``.
    """

    coefficients: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.coefficients)

    @property
    def wavenumbers(self) -> np.ndarray:
        n = self.n
        return np.fft.fftfreq(n, d=1.0 / n).astype(int)

    def coefficient(self, k: int) -> complex:
        n = self.n
        if not -(n // 2) <= k <= (n + 1) // 2 - 1:
            raise IndexError(f"mode {k} not resolved on {n} points")
        return complex(self.coefficients[k % n])


class NonRealReconstruction(ValueError):
    pass


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _fft_radix2(a: np.ndarray, sign: int) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey, unnormalized, ``exp(sign*2pi i jk/n)``."""
    n = len(a)
    levels = n.bit_length() - 1
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    out = np.asarray(a, dtype=complex)[rev].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(n // size, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return out


def _dft_direct(a: np.ndarray, sign: int) -> np.ndarray:
    n = len(a)
    j = np.arange(n)
    phase = np.exp(sign * 2j * np.pi * np.outer(j, j) / n)
    return phase @ np.asarray(a, dtype=complex)


def _transform(a: np.ndarray, sign: int) -> np.ndarray:
    if _is_power_of_two(len(a)):
        return _fft_radix2(a, sign)
    return _dft_direct(a, sign)


def dft(f: GridFunction) -> ComplexSpectrum:
    """Forward DFT with the 1/N normalization.

    A grid origin ``x_0 != 0`` contributes the phase ``exp(-i k 2pi x_0/period)``
    so that coefficients always refer to the absolute coordinate.
    """
    g = f.grid
    coeffs = _transform(f.values, -1) / g.n
    if g.origin != 0.0:
        k = np.fft.fftfreq(g.n, d=1.0 / g.n)
        coeffs = coeffs * np.exp(-2j * np.pi * k * g.origin / g.period)
    return ComplexSpectrum(coeffs)


def idft_complex(s: ComplexSpectrum, grid: Grid) -> np.ndarray:
    if s.n != grid.n:
        raise ValueError(f"spectrum has {s.n} modes, grid has {grid.n} points")
    coeffs = np.asarray(s.coefficients, dtype=complex)
    if grid.origin != 0.0:
        k = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
        coeffs = coeffs * np.exp(2j * np.pi * k * grid.origin / grid.period)
    return _transform(coeffs, +1)


def idft(s: ComplexSpectrum, grid: Grid, tol: float = 1e-10) -> GridFunction:
    """Inverse DFT; raises :class:`NonRealReconstruction` on complex output."""
    values = idft_complex(s, grid)
    scale = max(1.0, float(np.max(np.abs(values.real), initial=0.0)))
    if np.max(np.abs(values.imag), initial=0.0) > tol * scale:
        raise NonRealReconstruction("non-real reconstruction")
    return GridFunction(grid, values.real)


def norm(f: GridFunction, kind: Literal["L1", "L2", "Linf"] = "L1") -> float:
    """Left-endpoint rectangle rule norms."""
    v = np.abs(f.values)
    if kind == "L1":
        return float(f.grid.dx * v.sum())
    if kind == "L2":
        return float(math.sqrt(f.grid.dx * np.dot(v, v)))
    if kind == "Linf":
        return float(v.max(initial=0.0))
    raise ValueError(f"unknown norm {kind!r}")


class DegenerateReference(ValueError):
    pass


def relative_l1(pred: GridFunction, truth: GridFunction) -> float:
    if pred.grid != truth.grid:
        raise ValueError("pred and truth live on different grids")
    denom = norm(truth, "L1")
    if denom == 0.0:
        raise DegenerateReference("degenerate reference")
    return norm(pred - truth, "L1") / denom


def relative_l1_batch(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Row-wise relative L1 for arrays of shape (batch, n); grid spacing cancels."""
    denom = np.abs(truth).sum(axis=-1)
    if np.any(denom == 0.0):
        raise DegenerateReference("degenerate reference")
    return np.abs(pred - truth).sum(axis=-1) / denom


def fourier_truncate(values: np.ndarray, k_max: int) -> np.ndarray:
    """Keep modes |k| <= k_max along the last axis (real in, real out)."""
    n = values.shape[-1]
    spec = np.fft.rfft(values, axis=-1)
    spec[..., k_max + 1:] = 0.0
    return np.fft.irfft(spec, n=n, axis=-1)
