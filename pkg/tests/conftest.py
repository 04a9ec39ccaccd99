import numpy as np


def rel_err(a, b, floor=1e-4):
    """Elementwise |a - b| / max(|a|, |b|, floor); the floor keeps FD noise on
    near-zero gradients (rounding error ~ 1e-16 * |loss| / h) from dominating."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f, p, h=1e-6):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. array ``p``
    (mutated in place and restored)."""
    out = np.zeros_like(p)
    for i in range(p.size):
        old = p.flat[i]
        p.flat[i] = old + h
        up = f()
        p.flat[i] = old - h
        down = f()
        p.flat[i] = old
        out.flat[i] = (up - down) / (2 * h)
    return out
