"""Compile analytic functions of one variable into ReLU networks.

Chebyshev strategy: the (clamped) input is split by a partition of unity into
``J`` cells; on each enlarged cell a Chebyshev truncation is evaluated by the
Clenshaw recurrence with approximate multiplications, and the pieces are
glued by multiplying with the partition functions.  ``J`` starts at 4 and
doubles until every local Chebyshev tail is below ``eps / 4``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C

from .blocks import clamp_c, multiply_c, partition_c
from .circuit import Circuit, Lin, const
from .mlp import MLP

MAX_DEGREE = 32
_PROBE_DEGREE = 96


class NonFiniteFunction(ValueError):
    pass


@dataclass
class ChebPiece:
    lo: float
    hi: float
    coeffs: np.ndarray
    mult_eps: float = 0.0
    mult_M: list = field(default_factory=list)

    def to_t(self, x):
        return (2 * np.asarray(x, float) - (self.lo + self.hi)) / (self.hi - self.lo)


@dataclass
class AnalyticApprox:
    """A compiled plan; ``apply`` emits it into a circuit."""

    domain: tuple
    eps: float
    strategy: str
    pieces: list = field(default_factory=list)
    J: int = 1
    overlap: float = 0.0
    glue_M: float = 2.0
    glue_eps: float = 0.0
    knots: np.ndarray | None = None
    values: np.ndarray | None = None
    budget: float = 1.0

    @property
    def degrees(self) -> list:
        return [len(p.coeffs) - 1 for p in self.pieces]

    def apply(self, c: Circuit, x: Lin) -> Lin:
        a, b = self.domain
        if self.strategy == "piecewise-linear":
            return _apply_pl(c, x, self.knots, self.values)
        xc = clamp_c(c, x, a, b)
        if self.J == 1:
            return _clenshaw_c(c, xc, self.pieces[0])
        weights = partition_c(c, xc, a, b, self.J, self.overlap, share=True)
        out = const(0.0)
        for lam, piece in zip(weights, self.pieces):
            out = out + multiply_c(c, lam, _clenshaw_c(c, xc, piece), self.glue_M, self.glue_eps)
        return out

    def polynomial(self, x) -> np.ndarray:
        """The underlying piecewise approximant without network errors."""
        x = np.clip(np.asarray(x, float), *self.domain)
        if self.strategy == "piecewise-linear":
            return np.interp(x, self.knots, self.values)
        if self.J == 1:
            return C.chebval(np.clip(self.pieces[0].to_t(x), -1, 1), self.pieces[0].coeffs)
        a, b = self.domain
        lam = _partition_numpy(x, a, b, self.J, self.overlap)
        return sum(l * C.chebval(np.clip(p.to_t(x), -1, 1), p.coeffs)
                   for l, p in zip(lam, self.pieces))


def _partition_numpy(x, a, b, J, eps):
    c = Circuit(1)
    lins = partition_c(c, c.input(0), a, b, J, eps)
    return c.evaluate(lins, np.asarray(x)[:, None]).T


def _apply_pl(c: Circuit, x: Lin, knots, values) -> Lin:
    slopes = np.diff(values) / np.diff(knots)
    out = float(values[0]) + float(slopes[0]) * (x - float(knots[0]))
    for k in range(1, len(slopes)):
        jump = float(slopes[k] - slopes[k - 1])
        if jump != 0.0:
            out = out + jump * c.relu(x - float(knots[k]))
    return out


def _clenshaw_bounds(coeffs: np.ndarray) -> list:
    """max_t |b_k(t)| over [-1, 1] for the Clenshaw sequence, k = 1..n."""
    t = np.linspace(-1, 1, 4001)
    n = len(coeffs) - 1
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    bounds = [0.0] * (n + 2)
    for k in range(n, 0, -1):
        b1, b2 = coeffs[k] + 2 * t * b1 - b2, b1
        bounds[k] = float(np.max(np.abs(b1)))
    return bounds


def _clenshaw_c(c: Circuit, xc: Lin, piece: ChebPiece) -> Lin:
    coeffs = piece.coeffs
    n = len(coeffs) - 1
    if n == 0:
        return const(float(coeffs[0]))
    t = (2 * xc - (piece.lo + piece.hi)) / (piece.hi - piece.lo)
    t = clamp_c(c, t, -1.0, 1.0)

    def times_t(bk: Lin, k: int) -> Lin:
        return multiply_c(c, t, bk, piece.mult_M[k], piece.mult_eps)

    b1, b2 = const(0.0), const(0.0)
    for k in range(n, 0, -1):
        b1, b2 = float(coeffs[k]) + 2 * times_t(b1, k + 1) - b2, b1
    return float(coeffs[0]) + times_t(b1, 1) - b2


def _check_finite(f, x):
    y = np.asarray(f(x), float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteFunction("non-finite function value in domain")
    return y


def _fit_piece(f, lo, hi, tail_tol):
    """Lowest-degree Chebyshev truncation on [lo, hi] with tail below tol."""
    g = lambda t: _check_finite(f, 0.5 * (lo + hi) + 0.5 * (hi - lo) * t)  # noqa: E731
    probe = C.chebinterpolate(g, _PROBE_DEGREE)
    tails = np.cumsum(np.abs(probe[::-1]))[::-1]  # tails[k] = sum_{j>=k} |c_j|
    for deg in range(0, MAX_DEGREE + 1):
        if tails[deg + 1] < tail_tol:
            return probe[:deg + 1].copy()
    return None


def _plan_chebyshev(f, a, b, eps, budget):
    J = 4
    while J <= 4096:
        dx = (b - a) / J
        ov = dx / 4
        pieces = []
        for j in range(J):
            lo = max(a, a + j * dx - ov)
            hi = min(b, a + (j + 1) * dx + ov)
            coeffs = _fit_piece(f, lo, hi, budget * eps / 4)
            if coeffs is None:
                break
            pieces.append(ChebPiece(lo, hi, coeffs))
        else:
            break
        J *= 2
    else:
        raise ValueError("Chebyshev subdivision did not converge")
    for p in pieces:
        n = len(p.coeffs) - 1
        p.mult_eps = budget * eps / (4 * (n + 1) ** 2)
        bounds = _clenshaw_bounds(p.coeffs)
        p.mult_M = [max(2.0, 1.25 * bk + 0.1) for bk in bounds]
    fmax = max(float(np.max(np.abs(C.chebval(np.linspace(-1, 1, 2001), p.coeffs))))
               for p in pieces)
    return AnalyticApprox((a, b), eps, "chebyshev", pieces, J, (b - a) / J / 4,
                          glue_M=max(2.0, 1.25 * fmax + 0.1), glue_eps=budget * eps / 8,
                          budget=budget)


def _plan_pl(f, a, b, eps):
    xs = np.linspace(a, b, 4001)
    ys = _check_finite(f, xs)
    d2 = np.max(np.abs(np.diff(ys, 2))) / (xs[1] - xs[0]) ** 2
    K = max(1, int(math.ceil((b - a) * math.sqrt(max(d2, 1e-300) / (8 * eps)))))
    while True:
        knots = np.linspace(a, b, K + 1)
        vals = _check_finite(f, knots)
        test = np.linspace(a, b, 1000)
        if np.max(np.abs(np.interp(test, knots, vals) - f(test))) <= 0.5 * eps:
            return AnalyticApprox((a, b), eps, "piecewise-linear", knots=knots, values=vals)
        K *= 2


def plan_analytic(f, domain, eps: float, strategy: str = "chebyshev") -> AnalyticApprox:
    """Build and verify an approximation plan with sup error <= eps on domain.

    Verification runs the compiled network on 1000 points; if it fails the
    internal error budget is halved and the plan rebuilt.
    """
    a, b = map(float, domain)
    if not a < b:
        raise ValueError("empty domain")
    if strategy == "piecewise-linear":
        _check_finite(f, np.linspace(a, b, 1001))
        return _plan_pl(f, a, b, eps)
    if strategy != "chebyshev":
        raise ValueError(f"unknown strategy {strategy!r}")
    _check_finite(f, np.linspace(a, b, 1001))
    test = np.linspace(a, b, 1000)
    ref = _check_finite(f, test)
    budget = 1.0
    for _ in range(8):
        plan = _plan_chebyshev(f, a, b, eps, budget)
        net = _compile_plan(plan)
        err = float(np.max(np.abs(net(test[:, None])[:, 0] - ref)))
        if err <= eps:
            plan.budget = budget
            return plan
        budget /= 4
    raise ValueError("could not reach requested accuracy")


def _compile_plan(plan: AnalyticApprox, meta=None) -> MLP:
    c = Circuit(1)
    return c.compile([plan.apply(c, c.input(0))], meta)


def compile_analytic(f, domain, eps: float, strategy: str = "chebyshev") -> MLP:
    """ReLU network ``g`` with ``sup |g - f| <= eps`` on a 1000-point grid of domain."""
    plan = plan_analytic(f, domain, eps, strategy)
    meta = {"block": "analytic", "strategy": strategy, "domain": list(plan.domain),
            "eps": eps, "J": plan.J, "degrees": plan.degrees, "budget": plan.budget}
    return _compile_plan(plan, meta)


class Divider:
    """``x / y`` for ``y in [a, b]`` and ``|x| <= num_bound`` (default ``b``).

    ``1/y`` is compiled to ``eps / (2 num_bound)`` and multiplied with an
    ``eps / 2`` accurate product.
    """

    def __init__(self, a: float, b: float, eps: float, num_bound: float | None = None):
        if not 0 < a <= b:
            raise ValueError("need 0 < a <= b")
        self.bound = float(b if num_bound is None else num_bound)
        self.recip = plan_analytic(lambda y: 1.0 / y, (a, b), eps / (2 * self.bound))
        self.M = max(2.0, 1.05 * max(self.bound, 1.0 / a) + 0.05)
        self.eps = eps

    def apply(self, c: Circuit, x: Lin, y: Lin) -> Lin:
        return multiply_c(c, x, self.recip.apply(c, y), self.M, self.eps / 2)


def build_divide(a: float, b: float, eps: float, num_bound: float | None = None) -> MLP:
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    d = Divider(a, b, eps, num_bound)
    c = Circuit(2)
    x, y = c.inputs()
    return c.compile([d.apply(c, x, y)], {"block": "divide", "a": a, "b": b, "eps": eps})
