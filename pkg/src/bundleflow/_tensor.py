"""Batched small-tensor helpers.

``np.einsum`` with three or more operands falls back to a naive nested loop,
and ``np.linalg.inv`` on stacks of 2x2 blocks is slow; both dominate the flow
right-hand side.  ``contract`` splits a multi-operand einsum into pairwise
calls (left to right, dropping indices as soon as they are no longer needed),
``inv`` uses the adjugate formula for blocks up to 3x3.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import permutations
from math import prod

import numpy as np

__all__ = ["contract", "inv", "det"]


@lru_cache(maxsize=None)
def _plan(spec: str, shapes: tuple):
    """Cheapest left-deep pairwise order (operand count is small, so brute force)."""
    inputs, output = spec.split("->")
    terms = [t.replace("...", "") for t in inputs.split(",")]
    out = output.replace("...", "")
    size = {}
    for term, shape in zip(terms, shapes):
        for c, d in zip(term, shape[len(shape) - len(term):]):
            size[c] = d
    best = None
    for order in permutations(range(len(terms))):
        current = terms[order[0]]
        cost = 0
        steps = []
        for pos in range(1, len(order)):
            nxt = terms[order[pos]]
            rest = [terms[o] for o in order[pos + 1:]]
            later = set(out).union(*rest)
            result = "".join(c for c in dict.fromkeys(current + nxt) if c in later)
            cost += prod(size[c] for c in set(current + nxt))
            steps.append((order[pos], f"...{current},...{nxt}->...{result}"))
            current = result
        if best is None or cost < best[0]:
            best = (cost, order[0], steps, current)
    _, first, steps, current = best
    final = f"...{current}->...{out}" if current != out else None
    return first, steps, final


def contract(spec: str, *ops):
    """``np.einsum`` for ellipsis specs, evaluated pairwise."""
    if len(ops) <= 2:
        return np.einsum(spec, *ops)
    first, steps, final = _plan(spec, tuple(np.shape(o) for o in ops))
    acc = ops[first]
    for idx, step in steps:
        acc = np.einsum(step, acc, ops[idx])
    return np.einsum(final, acc) if final else acc


def det(a):
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if n == 0:
        return np.ones(a.shape[:-2])
    if n == 1:
        return a[..., 0, 0].copy()
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return np.linalg.det(a)


def inv(a):
    """Inverse of a stack of square blocks (adjugate formula up to 3x3)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if n == 0:
        return np.zeros_like(a)
    if n == 1:
        if np.any(a == 0):
            raise np.linalg.LinAlgError("singular matrix")
        return 1.0 / a
    if n == 2:
        d = det(a)
        if np.any(d == 0):
            raise np.linalg.LinAlgError("singular matrix")
        out = np.empty_like(a)
        out[..., 0, 0] = a[..., 1, 1]
        out[..., 1, 1] = a[..., 0, 0]
        out[..., 0, 1] = -a[..., 0, 1]
        out[..., 1, 0] = -a[..., 1, 0]
        return out / d[..., None, None]
    return np.linalg.inv(a)
