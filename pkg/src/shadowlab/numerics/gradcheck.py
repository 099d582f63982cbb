"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError, backward, no_grad


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Compare the tape gradient of ``f`` at ``x`` against central differences.

    Args:
        f: callable mapping ``x`` to a scalar Tensor. Must be deterministic;
           it is re-evaluated 2 * x.size times with perturbed inputs.
        x: tensor to differentiate with respect to (requires_grad is forced on).
        h: central-difference step.

    Returns:
        Maximum elementwise relative error
        |g_tape - g_num| / max(1e-8, |g_tape| + |g_num|).
    """
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise ShapeError(f"grad_check requires a scalar objective, got shape {out.shape}")
    backward(out)
    if x.grad is None:
        raise RuntimeError("objective does not depend on x: no gradient was produced")
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(x).item()
            flat[i] = orig - h
            lo = f(x).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
