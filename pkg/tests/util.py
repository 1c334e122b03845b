"""Shared test helpers: finite-difference oracle and error measures."""

import numpy as np


def central_difference(f, arrays, step=1e-5):
    """Gradient of the scalar ``f()`` w.r.t. each array, by central differences.

    Perturbs entries in place and restores them; independent of any
    analytic gradient code.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + step
            f_plus = f()
            arr[ix] = orig - step
            f_minus = f()
            arr[ix] = orig
            g[ix] = (f_plus - f_minus) / (2.0 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-10):
    """Largest elementwise relative error between two gradient lists."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
