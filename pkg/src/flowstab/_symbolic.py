"""Derivative tensors of catalog perturbations, generated once with sympy.

Each catalog perturbation is a closed-form expression, so its partial
derivatives are produced symbolically (only the sorted multi-indices, since
the tensors are symmetric), compiled with ``lambdify`` and expanded back into
dense tensors on evaluation.
"""
from functools import lru_cache
from itertools import combinations_with_replacement, product

import numpy as np
import sympy as sp

from . import _kernels as K


def _expressions(kind, n, coupled, power, m):
    xs = sp.symbols(f"x0:{n}", real=True)
    gamma = sp.Symbol("gamma", real=True)
    s = sum(x * x for x in xs)
    if kind == K.ZERO:
        comps = [sp.Integer(0)] * n
    elif kind == K.COMPONENT_POWER:
        comps = []
        for i, x in enumerate(xs):
            sc = s if coupled else x * x
            comps.append(gamma * x ** (2 + m[i]) / sp.sqrt(1 + sc))
    else:
        if kind == K.BOUNDED:
            h = gamma * s / (1 + s) ** sp.Rational(3, 2)
        elif kind == K.LINEAR_GROWTH:
            h = gamma * s / (1 + s)
        else:
            h = gamma * s ** (power // 2)
        comps = [h * xs[(i + 1) % n if coupled else i] for i in range(n)]
    return xs, gamma, comps


@lru_cache(maxsize=64)
def _compiled(kind, n, coupled, power, m, order):
    xs, gamma, comps = _expressions(kind, n, coupled, power, m)
    # derivs[l][(i, sorted multi-index)]
    exprs = []
    layout = []
    for i in range(n):
        level = {(): comps[i]}
        exprs.append(comps[i])
        layout.append((i, ()))
        for l in range(1, order + 1):
            nxt = {}
            for idx in combinations_with_replacement(range(n), l):
                parent = level[idx[:-1]]
                nxt[idx] = sp.diff(parent, xs[idx[-1]]) if parent != 0 else sp.Integer(0)
                exprs.append(nxt[idx])
                layout.append((i, idx))
            level = nxt
    fn = sp.lambdify((xs, gamma), exprs, modules="numpy", cse=True)
    position = {key: p for p, key in enumerate(layout)}
    gathers = []
    for l in range(order + 1):
        full = list(product(range(n), repeat=l))
        table = np.empty((n, len(full)), dtype=np.int64)
        for i in range(n):
            for c, idx in enumerate(full):
                table[i, c] = position[(i, tuple(sorted(idx)))]
        gathers.append(table)
    return fn, gathers


def perturbation_jets(kind, n, coupled, power, m, gamma, X, order):
    """Derivative tensors of a catalog perturbation at the rows of ``X``.

    Returns a list whose entry ``l`` has shape ``(N, n) + (n,) * l``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if kind == K.ZERO:
        return [np.zeros((N, n) + (n,) * l) for l in range(order + 1)]
    fn, gathers = _compiled(int(kind), int(n), bool(coupled), int(power), tuple(int(v) for v in m),
                            int(order))
    cols = [X[:, j] for j in range(n)]
    flat = fn(cols, float(gamma))
    values = np.empty((len(flat), N))
    for p, v in enumerate(flat):
        values[p] = np.broadcast_to(v, (N,))
    jets = []
    for l, table in enumerate(gathers):
        tens = values[table]  # (n, n**l, N)
        tens = np.moveaxis(tens, -1, 0).reshape((N, n) + (n,) * l)
        jets.append(tens)
    return jets
