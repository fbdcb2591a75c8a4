"""Shared test utilities: in-place finite differences over model parameters."""

import numpy as np


def fd_grad_inplace(loss_fn, arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. ``arr``.

    ``arr`` is mutated element-by-element and restored; ``loss_fn`` must
    read it afresh on every call (true for model parameters, whose Tensor
    objects hold the same underlying buffer).
    """
    g = np.zeros_like(arr)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = loss_fn()
        flat[i] = keep - eps
        lo = loss_fn()
        flat[i] = keep
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-6)
