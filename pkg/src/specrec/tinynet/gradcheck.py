"""Central finite-difference checks for hand-written gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||)`` over the sampled coordinates."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(
    f: Callable[[], float],
    x: np.ndarray,
    coords,
    step: float = 1e-6,
) -> np.ndarray:
    """Central differences of scalar ``f()`` at the flat indices ``coords`` of ``x`` (mutated in place, then restored)."""
    flat = x.reshape(-1)
    out = np.empty(len(coords))
    for k, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = f()
        flat[idx] = orig - step
        fm = f()
        flat[idx] = orig
        out[k] = (fp - fm) / (2 * step)
    return out


def sample_coords(size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if size <= n:
        return np.arange(size)
    return np.sort(rng.choice(size, size=n, replace=False))


def check_primitive(forward, backward, inputs, rng=None, n_coords=100, step=1e-6) -> dict[int, float]:
    """Check ``backward`` of a forward/backward pair against finite differences.

    The scalar probe is ``sum(forward(*inputs)[0] * g)`` for a random ``g``.
    Returns the relative error for every input index.
    """
    rng = rng or np.random.default_rng(0)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    y, cache = forward(*inputs)
    g = rng.standard_normal(np.shape(y))
    grads = backward(g, cache)

    def probe():
        return float(np.sum(forward(*inputs)[0] * g))

    errors = {}
    for i, (x, gx) in enumerate(zip(inputs, grads)):
        coords = sample_coords(x.size, n_coords, rng)
        num = numeric_grad(probe, x, coords, step)
        errors[i] = rel_error(np.asarray(gx).reshape(-1)[coords], num)
    return errors
