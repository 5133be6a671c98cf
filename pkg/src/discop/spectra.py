"""PCA spectra of pushforward measures and linear projection baselines.

The covariance operator is the uncentered second moment ``E[u (x) u]`` in the
discrete L2 inner product with weight ``dx``.  Its eigenvalues are those of
``(dx / M) U^T U`` for ``M`` samples stacked in ``U``; when ``M < n`` the
Gram matrix ``(dx / M) U U^T`` has the same nonzero spectrum.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import fourier_truncate, relative_l1_batch
from .measures import BoxWaveMeasure

DEFAULT_PS = (4, 8, 16, 32, 64)


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    tail_sums: dict
    method: str
    n_samples: int = 0
    meta: dict = field(default_factory=dict)

    def tail(self, p: int) -> float:
        return float(self.eigenvalues[p:].sum())

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["k", "lambda", "tail"])
        tails = np.concatenate([np.cumsum(self.eigenvalues[::-1])[::-1][1:], [0.0]])
        for k, (lam, t) in enumerate(zip(self.eigenvalues, tails), start=1):
            w.writerow([k, repr(float(lam)), repr(float(t))])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "n_samples": self.n_samples,
                           "eigenvalues": [float(v) for v in self.eigenvalues],
                           "tail_sums": {str(k): float(v) for k, v in self.tail_sums.items()},
                           "meta": self.meta})


def _finish(eigs, method, n_samples, ps, meta=None) -> SpectrumReport:
    eigs = np.sort(np.asarray(eigs, float))[::-1]
    if eigs.size and eigs.min() < -1e-12 * max(1.0, eigs.max()):
        raise ValueError("covariance has significantly negative eigenvalues")
    eigs = np.maximum(eigs, 0.0)
    tails = {int(p): float(eigs[p:].sum()) for p in ps}
    return SpectrumReport(eigs, tails, method, n_samples, dict(meta or {}))


def box_fourier_coefficient_sq(k, w, period: float):
    """``|psi_w(k)|^2`` for the centered box of width ``w`` (1/N-style normalization)."""
    k = np.asarray(k, float)
    safe = np.where(k == 0, 1.0, k)
    val = np.sin(math.pi * safe * w / period) ** 2 / (math.pi * safe) ** 2
    return np.where(k == 0, (w / period) ** 2, val)


def mean_h_squared(h_range) -> float:
    lo, hi = h_range
    if hi == lo:
        return lo * lo
    return (hi ** 3 - lo ** 3) / (3 * (hi - lo))


def box_measure_fourier_eigs(spec: BoxWaveMeasure, k_max: int, as_operator: bool = False,
                             n_quad: int = 64, ps=DEFAULT_PS) -> SpectrumReport:
    """Semi-analytic eigenvalues for box waves with uniform shift over the full period.

    ``lambda_k = E[h^2] E_w |psi_w(k)|^2`` for ``|k| <= k_max``; modes ``+-k``
    appear as a doubled pair (cos/sin basis).  With ``as_operator`` the values
    are multiplied by the period, giving eigenvalues of ``E[u (x) u]`` on L2.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    ks = np.arange(0, k_max + 1)
    lo, hi = spec.w_range
    if hi == lo:
        ew = box_fourier_coefficient_sq(ks, lo, spec.period)
    else:
        x, wts = np.polynomial.legendre.leggauss(n_quad)
        # split [lo, hi] so oscillations at large k stay resolved
        pieces = max(1, int(math.ceil(k_max * (hi - lo) / spec.period)))
        edges = np.linspace(lo, hi, pieces + 1)
        ew = np.zeros(len(ks))
        for a, b in zip(edges[:-1], edges[1:]):
            w = 0.5 * (a + b) + 0.5 * (b - a) * x
            ew += 0.5 * (b - a) * (wts[None, :] * box_fourier_coefficient_sq(
                ks[:, None], w[None, :], spec.period)).sum(axis=1)
        ew /= hi - lo
    lam = mean_h_squared(spec.h_range) * ew
    if as_operator:
        lam = lam * spec.period
    eigs = np.concatenate([lam[:1], np.repeat(lam[1:], 2)])
    return _finish(eigs, "fourier-diagonal", 0, ps,
                   {"k_max": k_max, "as_operator": as_operator,
                    "by_wavenumber": lam.tolist()})


def empirical_covariance_eigs(data, dx: float, p_max: int | None = None,
                              ps=DEFAULT_PS, route: str = "auto") -> SpectrumReport:
    """Eigenvalues of the sample second-moment operator.

    Parameters
    ----------
    data : array (M, n)
        Samples on a common grid.
    dx : float
        Grid spacing (quadrature weight).
    p_max : int, optional
        Keep only the leading ``p_max`` eigenvalues in the report (tails are
        computed from the full spectrum first).
    route : {"auto", "gram", "direct"}
    """
    U = np.asarray(data, float)
    if U.ndim != 2 or U.shape[0] < 2:
        raise ValueError("need at least 2 samples on a common grid")
    M, n = U.shape
    A = U * math.sqrt(dx / M)
    if route == "auto":
        route = "gram" if M < n else "direct"
    mat = A @ A.T if route == "gram" else A.T @ A
    eigs = np.linalg.eigvalsh(mat)
    rep = _finish(eigs, "sample-covariance", M, ps, {"route": route})
    rep.meta["trace"] = float(rep.eigenvalues.sum())
    if p_max is not None:
        rep.eigenvalues = rep.eigenvalues[:p_max]
    return rep


def fit_tail_exponent(report: SpectrumReport, ps=DEFAULT_PS):
    """Least-squares slope and constant of ``log tail(p) = log C + alpha log p``."""
    ps = np.asarray(ps, float)
    tails = np.array([report.tail_sums[int(p)] for p in ps])
    alpha, logc = np.polyfit(np.log(ps), np.log(tails), 1)
    return float(alpha), float(math.exp(logc))


def fourier_projection_error(data, k_max: int) -> float:
    """Median relative L1 error of keeping only modes ``|k| <= k_max``."""
    U = np.asarray(data, float)
    return float(np.median(relative_l1_batch(fourier_truncate(U, k_max), U)))


def circulant_defect(data, dx: float) -> float:
    """Off-diagonal energy of the covariance in the Fourier basis over its diagonal energy."""
    U = np.asarray(data, float)
    M, n = U.shape
    F = np.fft.fft(U, axis=1) / math.sqrt(n)
    C = (F.T @ F.conj()) * (dx / M)
    diag = np.sum(np.abs(np.diag(C)) ** 2)
    off = np.sum(np.abs(C) ** 2) - diag
    return float(off / diag)
