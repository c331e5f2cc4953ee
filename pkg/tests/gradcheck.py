"""Central finite differences for dicts of float64 tensors."""

import numpy as np


def numeric_grads(loss_fn, tensors, step=1e-6):
    """``loss_fn(tensors) -> float``; perturbs each entry in place and restores it."""
    out = {}
    for name, arr in tensors.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn(tensors)
            flat[k] = orig - step
            down = loss_fn(tensors)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_error(analytic, numeric):
    """Norm-wise relative error; 0 when both are exactly zero."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
