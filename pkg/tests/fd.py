"""Independent gradient oracle: central finite differences on flat params."""

import numpy as np


def fd_gradient(fn, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d fn / d params by central differences, perturbing params in place."""
    g = np.zeros_like(params, dtype=np.float64)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        fp = fn()
        params[i] = old - h
        fm = fn()
        params[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))
