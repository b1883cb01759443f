"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, index, step: float = 1e-3, points: int = 5) -> float:
    """Central difference of scalar ``fn()`` w.r.t. ``t.data[index]``.

    ``points=5`` uses the fourth-order stencil, which is exact for the cubic
    terms of Q=3 layers; ``points=3`` is the classic two-sided difference.
    """
    if points not in (3, 5):
        raise ValueError("points must be 3 or 5")
    orig = t.data[index].copy()

    def at(offset):
        t.data[index] = orig + offset
        return fn().item()

    try:
        d1 = at(step) - at(-step)
        if points == 3:
            return d1 / (2 * step)
        d2 = at(2 * step) - at(-2 * step)
        return (8 * d1 - d2) / (12 * step)
    finally:
        t.data[index] = orig


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-3,
    max_probes: int | None = None,
    floor: float = 1e-3,
    seed: int = 0,
    points: int = 5,
) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``fn`` rebuilds a scalar from ``inputs`` on every call. The relative
    error denominator is ``max(|analytic|, |numeric|, floor)``. With
    ``max_probes`` only that many randomly chosen entries per input are
    probed.
    """
    for t in inputs:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = np.arange(t.data.size)
        if max_probes is not None and t.data.size > max_probes:
            flat = rng.choice(flat, size=max_probes, replace=False)
        for i in flat:
            index = np.unravel_index(i, t.data.shape)
            n = numeric_grad(fn, t, index, step, points)
            err = abs(a[index] - n) / max(abs(a[index]), abs(n), floor)
            worst = max(worst, err)
        t.grad = None
    return worst
