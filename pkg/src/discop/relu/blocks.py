"""Elementary ReLU constructions.

Functions named ``*_c`` act on a :class:`Circuit` and return affine forms;
the ``build_*`` functions wrap them into stand-alone :class:`MLP` objects.
"""
from __future__ import annotations

from .circuit import Circuit, Lin
from .mlp import MLP


def ramp_c(c: Circuit, x: Lin, lo: float, hi: float) -> Lin:
    """0 for ``x <= lo``, 1 for ``x >= hi``, linear in between."""
    z = (x - lo) / (hi - lo)
    return c.relu(z) - c.relu(z - 1.0)


def clamp_c(c: Circuit, x: Lin, lo: float, hi: float) -> Lin:
    return lo + c.relu(x - lo) - c.relu(x - hi)


def step_c(c: Circuit, x: Lin, xi: float, h: float, delta: float) -> Lin:
    """``h * (relu((x-xi)/delta) - relu((x-xi)/delta - 1))``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return h * ramp_c(c, x, xi, xi + delta)


def indicator_c(c: Circuit, x: Lin, a: float, b: float, delta: float) -> Lin:
    return step_c(c, x, a, 1.0, delta) - step_c(c, x, b, 1.0, delta)


def partition_c(c: Circuit, x: Lin, a: float, b: float, J: int, eps: float,
                share: bool = False) -> list:
    """Partition of unity on ``[a, b]`` subordinate to ``J`` equal cells.

    Interior transitions are ramps over ``[x_j - eps, x_j + eps]``; the outer
    ramps sit on ``[a - eps, a]`` and ``[b, b + eps]`` so the sum is exactly
    one on the closed interval.  With ``share`` the ramp neurons common to
    neighbouring cells are reused (width ``2J + 2`` instead of ``4J``).
    """
    dx = (b - a) / J
    if not 0 < eps <= dx / 2 * (1 + 1e-12):
        raise ValueError(f"eps must lie in (0, {dx / 2}], got {eps}")
    knots = [a + j * dx for j in range(J + 1)]
    rise = [None] * (J + 1)
    rise[0] = (a - eps, a)
    rise[J] = (b, b + eps)
    for j in range(1, J):
        rise[j] = (knots[j] - eps, knots[j] + eps)
    out = []
    for j in range(J):
        up, down = rise[j], rise[j + 1]
        z_up = (x - up[0]) / (up[1] - up[0])
        z_dn = (x - down[0]) / (down[1] - down[0])
        f = not share
        out.append(c.relu(z_up, f) - c.relu(z_up - 1.0, f)
                   - c.relu(z_dn, f) + c.relu(z_dn - 1.0, f))
    return out


def sawtooth_levels(M: float, eps: float) -> int:
    """Smallest ``s`` with ``2^(-2s-2) (2M)^2 <= eps``."""
    s = 0
    while 2.0 ** (-2 * s - 2) * (2 * M) ** 2 > eps:
        s += 1
    return s


def square_c(c: Circuit, z: Lin, scale: float, s: int) -> Lin:
    """Approximate ``z^2`` for ``|z| <= scale`` by sawtooth composition.

    With ``v = z / scale`` the network returns ``scale^2 f_s(|v|)`` where
    ``f_s(v) = v - sum_{t<=s} g_t(v) / 4^t`` is the piecewise linear
    interpolant of ``v^2`` on ``2^s + 1`` nodes; error ``<= scale^2 4^(-s-1)``.
    """
    v = z / scale
    p, n = c.relu(v), c.relu(-v)
    if s == 0:
        return scale ** 2 * (p + n)
    hp, hn = c.relu(v - 0.5), c.relu(-v - 0.5)
    g = 2 * (p + n) - 4 * (hp + hn)  # hat function of |v|, valid for |v| <= 1
    r = (p + n) - g / 4
    for t in range(2, s + 1):
        a, hb = c.relu(g), c.relu(g - 0.5)
        r = c.relu(r)
        g = 2 * a - 4 * hb
        r = r - g / 4.0 ** t
    return scale ** 2 * r


def multiply_c(c: Circuit, x: Lin, y: Lin, M: float, eps: float, clamp: bool = True) -> Lin:
    """``xy = ((x+y)^2 - (x-y)^2) / 4`` with sawtooth squaring on ``[-2M, 2M]``.

    A zero factor gives zero up to rounding (both squares use the same
    scale).  Inputs are clipped to
    ``[-M, M]`` first unless ``clamp`` is False.
    """
    if not x.terms or not y.terms:
        return x.const * y if not x.terms else y.const * x
    if clamp:
        x, y = clamp_c(c, x, -M, M), clamp_c(c, y, -M, M)
    s = sawtooth_levels(M, eps)
    return 0.25 * (square_c(c, x + y, 2 * M, s) - square_c(c, x - y, 2 * M, s))


def max_c(c: Circuit, a: Lin, b: Lin) -> Lin:
    """``max(a, b) = relu(a - b) + b``."""
    return c.relu(a - b) + b


def maxpool_c(c: Circuit, xs: list) -> Lin:
    xs = list(xs)
    while len(xs) > 1:
        nxt = [max_c(c, xs[i], xs[i + 1]) for i in range(0, len(xs) - 1, 2)]
        if len(xs) % 2:
            nxt.append(xs[-1])
        xs = nxt
    return xs[0]


def blend_c(c: Circuit, w: Lin, a: Lin, b: Lin, M: float, eps: float) -> Lin:
    """``w a + (1 - w) b`` for ``w in [0, 1]`` as ``b + w (a - b)``."""
    return b + multiply_c(c, w, a - b, M, eps)


# ---------------------------------------------------------------------------
# stand-alone networks

def _single(fn, n_in: int = 1, meta=None) -> MLP:
    c = Circuit(n_in)
    out = fn(c, *c.inputs())
    outs = out if isinstance(out, list) else [out]
    return c.compile(outs, meta)


def build_step(xi: float, h: float, delta: float) -> MLP:
    return _single(lambda c, x: step_c(c, x, xi, h, delta),
                   meta={"block": "step", "xi": xi, "h": h, "delta": delta})


def build_indicator(a: float, b: float, delta: float) -> MLP:
    if not a < b:
        raise ValueError("need a < b")
    if delta > (b - a) / 2:
        raise ValueError("delta must not exceed (b - a)/2")
    return _single(lambda c, x: indicator_c(c, x, a, b, delta),
                   meta={"block": "indicator", "a": a, "b": b, "delta": delta})


def build_partition(a: float, b: float, J: int, eps: float) -> MLP:
    return _single(lambda c, x: partition_c(c, x, a, b, J, eps),
                   meta={"block": "partition", "a": a, "b": b, "J": J, "eps": eps})


def build_multiply(M: float, eps: float) -> MLP:
    if M < 2 or not 0 < eps <= 0.5:
        raise ValueError("need M >= 2 and eps in (0, 1/2]")
    return _single(lambda c, x, y: multiply_c(c, x, y, M, eps), 2,
                   meta={"block": "multiply", "M": M, "eps": eps,
                         "levels": sawtooth_levels(M, eps)})


def build_maxpool(k: int) -> MLP:
    if k < 1:
        raise ValueError("need k >= 1")
    return _single(lambda c, *xs: maxpool_c(c, list(xs)), k, meta={"block": "maxpool", "k": k})
