import numpy as np


def relative_error(analytic, numeric, floor=1e-6):
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(fn, array, h=1e-5):
    """
    Central-difference gradient of the scalar function fn() w.r.t. array.

    array is perturbed in place and restored after every evaluation, so fn must
    read it on each call.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]

        flat[i] = old + h
        right = float(fn())

        flat[i] = old - h
        left = float(fn())

        flat[i] = old
        gflat[i] = (right - left) / (2.0 * h)

    return grad
