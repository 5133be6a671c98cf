"""Recover an angle from its cosine and sine with a ReLU network.

Four local inverses cover the circle: ``arcsin(s)`` near 0 / 2pi (with a
ramp on ``s`` deciding the ``+2pi`` branch), ``arccos(c)`` for ``s > 0``,
``pi - arcsin(s)`` for ``c < 0`` and ``2pi - arccos(c)`` for ``s < 0``.
They are blended with weights ``p = clip((s - c)/delta + 1/2)`` and
``q = clip((s + c)/delta + 1/2)``; in every blending zone both branches are
valid, so the blend is exact up to the branch approximation errors.
"""
from __future__ import annotations

import math

import numpy as np

from .analytic import plan_analytic
from .blocks import blend_c, clamp_c, ramp_c
from .circuit import Circuit, Lin
from .mlp import MLP

BRANCH_DOMAIN = 0.85
BLEND_WIDTH = 0.2
_M = 10.0


class AngleRecovery:
    """Plan for ``(cos xi, sin xi) -> xi`` accurate to ``eps`` on ``[0, 2pi - eps]``."""

    def __init__(self, eps: float):
        if not 0 < eps <= 0.5:
            raise ValueError("eps must lie in (0, 1/2]")
        self.eps = eps
        dom = (-BRANCH_DOMAIN, BRANCH_DOMAIN)
        self.asin = plan_analytic(np.arcsin, dom, eps / 4)
        self.acos = plan_analytic(np.arccos, dom, eps / 4)
        self.blend_eps = eps / 8
        # s below -0.9 sin(eps) selects the 2pi branch
        self.s_cut = 0.9 * math.sin(eps)

    def apply(self, c: Circuit, cs: Lin, sn: Lin) -> Lin:
        a1 = self.asin.apply(c, sn)
        ac = self.acos.apply(c, cs)
        r = ramp_c(c, sn, -self.s_cut, 0.0)
        right = a1 + 2 * math.pi * (1.0 - r)
        top = ac
        left = math.pi - a1
        bottom = 2 * math.pi - ac
        p = ramp_c(c, sn - cs, -BLEND_WIDTH / 2, BLEND_WIDTH / 2)
        q = ramp_c(c, sn + cs, -BLEND_WIDTH / 2, BLEND_WIDTH / 2)
        upper = blend_c(c, p, top, right, _M, self.blend_eps)
        lower = blend_c(c, p, left, bottom, _M, self.blend_eps)
        out = blend_c(c, q, upper, lower, _M, self.blend_eps)
        return clamp_c(c, out, 0.0, 2 * math.pi)


def build_angle_recovery(eps: float) -> MLP:
    rec = AngleRecovery(eps)
    c = Circuit(2)
    cs, sn = c.inputs()
    return c.compile([rec.apply(c, cs, sn)], {"block": "angle", "eps": eps})
