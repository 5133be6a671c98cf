"""Exact Riemann solver for the 1D Euler equations (ideal gas), test oracle.

Standard two-shock/two-rarefaction pressure function with Newton iteration
for the star pressure, then self-similar sampling.
"""
import math

import numpy as np


def _f(p, rho, pk, ck, g):
    if p > pk:
        a = 2 / ((g + 1) * rho)
        b = (g - 1) / (g + 1) * pk
        q = math.sqrt(a / (p + b))
        return (p - pk) * q, q * (1 - 0.5 * (p - pk) / (p + b))
    r = p / pk
    return (2 * ck / (g - 1)) * (r ** ((g - 1) / (2 * g)) - 1), r ** (-(g + 1) / (2 * g)) / (rho * ck)


def star_state(left, right, g=1.4):
    rl, ul, pl = left
    rr, ur, pr = right
    cl, cr = math.sqrt(g * pl / rl), math.sqrt(g * pr / rr)
    p = max(1e-8, 0.5 * (pl + pr))
    for _ in range(100):
        fl, dl = _f(p, rl, pl, cl, g)
        fr, dr = _f(p, rr, pr, cr, g)
        dp = (fl + fr + ur - ul) / (dl + dr)
        pn = max(1e-12, p - dp)
        if abs(pn - p) < 1e-14 * (pn + p):
            p = pn
            break
        p = pn
    fl, _ = _f(p, rl, pl, cl, g)
    fr, _ = _f(p, rr, pr, cr, g)
    return p, 0.5 * (ul + ur) + 0.5 * (fr - fl)


def sample(left, right, s, g=1.4):
    """Primitive (rho, u, p) at similarity coordinate s = (x - x0)/t."""
    ps, us = star_state(left, right, g)
    if s <= us:
        rho, u, p = left
        sign = 1
    else:
        rho, u, p = right
        sign = -1
    c = math.sqrt(g * p / rho)
    # mirror the right side onto the left-wave formulas
    ss, uu, uss = sign * s, sign * u, sign * us
    if ps > p:  # shock
        rs = rho * ((ps / p + (g - 1) / (g + 1)) / ((g - 1) / (g + 1) * ps / p + 1))
        sh = uu - c * math.sqrt((g + 1) / (2 * g) * ps / p + (g - 1) / (2 * g))
        if ss < sh:
            return rho, u, p
        return rs, us, ps
    rs = rho * (ps / p) ** (1 / g)
    cs = c * (ps / p) ** ((g - 1) / (2 * g))
    head, tail = uu - c, uss - cs
    if ss < head:
        return rho, u, p
    if ss > tail:
        return rs, us, ps
    uf = 2 / (g + 1) * (c + (g - 1) / 2 * uu + ss)
    cf = 2 / (g + 1) * (c + (g - 1) / 2 * (uu - ss))
    rf = rho * (cf / c) ** (2 / (g - 1))
    pf = p * (cf / c) ** (2 * g / (g - 1))
    return rf, sign * uf, pf


def solution(left, right, x, x0, t, g=1.4):
    out = np.array([sample(left, right, (xi - x0) / t, g) for xi in np.asarray(x)])
    return out[:, 0], out[:, 1], out[:, 2]
