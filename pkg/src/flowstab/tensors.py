"""Small helpers for symmetric derivative tensors.

An order-``l`` derivative of a map ``R^n -> R^n`` is stored as an array of
shape ``(n,) + (n,) * l``; the first axis is the output component and the
remaining ``l`` axes are the (symmetric) differentiation indices.
"""
from itertools import permutations
from math import factorial

import numpy as np


def unfold(T):
    """Reshape an order-``l`` tensor to its ``n x n**l`` matrix unfolding."""
    T = np.asarray(T)
    return T.reshape(T.shape[0], -1)


def tensor_norm(T):
    """Norm used throughout: Euclidean for vectors, spectral norm of the unfolding otherwise.

    For order 1 this is the operator 2-norm.  For higher orders it bounds the
    multilinear operator norm from above, since
    ``|T(v, ..., v)| <= |unfold(T)| |v|**l``.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        return float(np.linalg.norm(T))
    M = unfold(T)
    if M.shape[0] == 1 or M.shape[1] == 1:
        return float(np.linalg.norm(M))
    return float(np.linalg.norm(M, 2))


def symmetrize(T):
    """Average over all permutations of the differentiation axes."""
    T = np.asarray(T, dtype=float)
    l = T.ndim - 1
    if l <= 1:
        return T.copy()
    acc = np.zeros_like(T)
    for perm in permutations(range(1, l + 1)):
        acc += np.transpose(T, (0,) + perm)
    return acc / factorial(l)


def symmetry_residual(T):
    """Max-abs difference between a tensor and its symmetrisation."""
    T = np.asarray(T, dtype=float)
    if T.ndim <= 2:
        return 0.0
    return float(np.max(np.abs(T - symmetrize(T))))


def batch_tensor_norm(T, order):
    """:func:`tensor_norm` over leading batch axes of an array ``(..., n) + (n,) * order``."""
    T = np.asarray(T, dtype=float)
    if order == 0:
        return np.linalg.norm(T, axis=-1)
    lead = T.shape[:T.ndim - order - 1]
    n = T.shape[len(lead)]
    M = T.reshape(lead + (n, -1))
    if n == 1 or M.shape[-1] == 1:
        return np.linalg.norm(M.reshape(lead + (-1,)), axis=-1)
    return np.linalg.norm(M, 2, axis=(-2, -1))
