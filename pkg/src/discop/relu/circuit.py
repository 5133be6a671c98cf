"""ReLU circuits: build networks as graphs, then layer them into an MLP.

A :class:`Lin` is an affine form over circuit inputs and relu neurons.
``Circuit.relu(lin)`` creates a neuron.  ``compile`` assigns each neuron the
layer ``1 + max(layer of its sources)`` and inserts identity carries for
values consumed more than one layer later: ``relu(v)`` for neurons (which are
nonnegative) and ``relu(x) - relu(-x)`` for inputs.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np
import scipy.sparse as sp

from .mlp import MLP, Layer


class Lin:
    """Affine form ``const + sum_s coef_s * source_s``.

    Sources are inputs (ids ``-1, -2, ...``) or neurons (ids ``0, 1, ...``).
    """

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms or {})
        self.const = float(const)

    def __add__(self, other):
        if isinstance(other, Lin):
            t = dict(self.terms)
            for k, v in other.terms.items():
                t[k] = t.get(k, 0.0) + v
            return Lin(t, self.const + other.const)
        return Lin(self.terms, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Lin({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        c = float(c)
        return Lin({k: c * v for k, v in self.terms.items()}, c * self.const)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))


def const(c: float) -> Lin:
    return Lin({}, c)


class Circuit:
    def __init__(self, n_inputs: int):
        self.n_inputs = n_inputs
        self.pre: list[Lin] = []
        self.level: list[int] = []
        self._cache: dict = {}

    def input(self, i: int) -> Lin:
        if not 0 <= i < self.n_inputs:
            raise IndexError(i)
        return Lin({-(i + 1): 1.0})

    def inputs(self) -> list:
        return [self.input(i) for i in range(self.n_inputs)]

    def source_level(self, s: int) -> int:
        return 0 if s < 0 else self.level[s]

    def lin_level(self, lin: Lin) -> int:
        return max((self.source_level(s) for s, c in lin.terms.items() if c != 0.0), default=0)

    def relu(self, lin: Lin, fresh: bool = False) -> Lin:
        """New neuron ``relu(lin)``; identical neurons are shared unless ``fresh``."""
        terms = {s: c for s, c in lin.terms.items() if c != 0.0}
        if not terms:
            return const(max(lin.const, 0.0))
        # relu of a positive multiple of a neuron is the same neuron
        if len(terms) == 1 and lin.const == 0.0:
            (s, c), = terms.items()
            if s >= 0 and c > 0:
                return Lin({s: c})
        key = (tuple(sorted(terms.items())), lin.const)
        if key in self._cache and not fresh:
            return Lin({self._cache[key]: 1.0})
        idx = len(self.pre)
        self.pre.append(Lin(terms, lin.const))
        self.level.append(1 + max(self.source_level(s) for s in terms))
        self._cache[key] = idx
        return Lin({idx: 1.0})

    def relu_many(self, lins) -> list:
        return [self.relu(l) for l in lins]

    # ------------------------------------------------------------------
    def evaluate(self, outputs, x: np.ndarray) -> np.ndarray:
        """Direct graph evaluation (reference for ``compile``)."""
        x = np.atleast_2d(np.asarray(x, float))
        vals = {}

        def value(lin):
            out = np.full(x.shape[0], lin.const)
            for s, c in lin.terms.items():
                out = out + c * (x[:, -s - 1] if s < 0 else vals[s])
            return out

        for idx in sorted(self._needed(outputs)):
            vals[idx] = np.maximum(value(self.pre[idx]), 0.0)
        return np.stack([value(o) for o in outputs], axis=1)

    def _needed(self, outputs) -> set:
        need, stack = set(), [s for o in outputs for s in o.terms if s >= 0]
        while stack:
            s = stack.pop()
            if s in need:
                continue
            need.add(s)
            stack.extend(t for t in self.pre[s].terms if t >= 0)
        return need

    def compile(self, outputs, meta: dict | None = None) -> MLP:
        outputs = list(outputs)
        need = self._needed(outputs)
        depth = max((self.level[s] for s in need), default=0)
        last = defaultdict(int)  # last layer at which a source must be available
        for s in need:
            for t in self.pre[s].terms:
                last[t] = max(last[t], self.level[s] - 1)
        for o in outputs:
            for t in o.terms:
                last[t] = max(last[t], depth)
        by_level = defaultdict(list)
        for s in need:
            by_level[self.level[s]].append(s)
        rep = {-(i + 1): [(i, 1.0)] for i in range(self.n_inputs)}
        layers = []
        prev_dim = self.n_inputs
        for k in range(1, depth + 1):
            rows, cols, data, bias = [], [], [], []
            new_rep = {}

            def add_neuron(lin_terms, b):
                r = len(bias)
                for s, c in lin_terms:
                    for j, w in rep[s]:
                        rows.append(r)
                        cols.append(j)
                        data.append(c * w)
                bias.append(b)
                return r

            for s in sorted(by_level[k]):
                lin = self.pre[s]
                new_rep[s] = [(add_neuron(lin.terms.items(), lin.const), 1.0)]
            for s, lk in last.items():
                if self.source_level(s) < k <= lk:
                    if s >= 0:
                        new_rep[s] = [(add_neuron([(s, 1.0)], 0.0), 1.0)]
                    else:
                        p = add_neuron([(s, 1.0)], 0.0)
                        m = add_neuron([(s, -1.0)], 0.0)
                        new_rep[s] = [(p, 1.0), (m, -1.0)]
            W = sp.coo_matrix((data, (rows, cols)), shape=(len(bias), prev_dim)).tocsr()
            layers.append(Layer(W, np.array(bias), True))
            rep, prev_dim = new_rep, len(bias)
        rows, cols, data, bias = [], [], [], []
        for r, o in enumerate(outputs):
            for s, c in o.terms.items():
                for j, w in rep[s]:
                    rows.append(r)
                    cols.append(j)
                    data.append(c * w)
            bias.append(o.const)
        W = sp.coo_matrix((data, (rows, cols)), shape=(len(outputs), prev_dim)).tocsr()
        layers.append(Layer(W, np.array(bias), False))
        return MLP(layers, dict(meta or {}))
