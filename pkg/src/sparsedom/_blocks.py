"""Block reshaping helpers for arrays of shape (N,)*n with N a power of two.

A "level" of an array is its partition into aligned blocks of side b. Most
vectorised tree computations in the package reduce to: cut into blocks,
reduce each block, broadcast the result back.
"""
from __future__ import annotations

import numpy as np


def to_blocks(a: np.ndarray, b: int) -> np.ndarray:
    """Return an array of shape (num_blocks, b**n); rows follow row-major block order."""
    n = a.ndim
    N = a.shape[0]
    m = N // b
    shaped = a.reshape(sum(((m, b) for _ in range(n)), ()))
    # (m, b, m, b, ...) -> (m, m, ..., b, b, ...)
    order = tuple(range(0, 2 * n, 2)) + tuple(range(1, 2 * n, 2))
    return shaped.transpose(order).reshape(m**n, b**n)


def from_blocks(rows: np.ndarray, n: int, b: int) -> np.ndarray:
    """Inverse of :func:`to_blocks`."""
    nb = rows.shape[0]
    m = 1
    while m**n < nb:
        m *= 2
    shaped = rows.reshape((m,) * n + (b,) * n)
    order = []
    for axis in range(n):
        order += [axis, n + axis]
    return shaped.transpose(order).reshape((m * b,) * n)


def block_reduce(a: np.ndarray, b: int, how: str = "sum") -> np.ndarray:
    """Reduce each aligned block of side b; result has shape (N/b,)*n."""
    if b == 1:
        return a.copy()
    n = a.ndim
    m = a.shape[0] // b
    shaped = a.reshape(sum(((m, b) for _ in range(n)), ()))
    axes = tuple(range(1, 2 * n, 2))
    if how == "sum":
        return shaped.sum(axis=axes)
    if how == "max":
        return shaped.max(axis=axes)
    if how == "min":
        return shaped.min(axis=axes)
    raise ValueError(f"unknown reduction {how!r}")


def upsample(a: np.ndarray, b: int) -> np.ndarray:
    """Repeat every entry into a block of side b."""
    if b == 1:
        return a
    n = a.ndim
    m = a.shape[0]
    expanded = a.reshape(sum(((m, 1) for _ in range(n)), ()))
    target = sum(((m, b) for _ in range(n)), ())
    return np.broadcast_to(expanded, target).reshape((m * b,) * n)
