"""Kolmogorov-Arnold layers with cubic B-spline edge functions.

Each edge carries ``phi(x) = mu * swish(x) + omega * sum_i d_i B_i(x)``; a
layer output is the sum of its incoming edges. The spline lives on a fixed
uniform grid and inputs outside the grid are clamped to its ends.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, StateError
from .numeric import gaussian_fill


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def swish(x):
    return x * sigmoid(x)


def swish_grad(x):
    s = sigmoid(x)
    return s + x * s * (1.0 - s)


@dataclass
class BSplineBasis:
    order: int = 3
    grid_size: int = 5
    lo: float = -1.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 0 or self.grid_size < 1 or not self.hi > self.lo:
            raise ValueError(f"invalid basis: order={self.order} grid={self.grid_size} [{self.lo}, {self.hi}]")
        h = (self.hi - self.lo) / self.grid_size
        self.knots = self.lo + h * np.arange(-self.order, self.grid_size + self.order + 1)

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    def _levels(self, x):
        """Cox-de Boor from degree 0 up to ``order``; returns the last two levels."""
        t = self.knots
        x = np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)
        h = (self.hi - self.lo) / self.grid_size
        # degree 0 via the interval index; x == hi belongs to the last interval
        idx = np.minimum(np.floor((x - self.lo) / h).astype(np.int64), self.grid_size - 1) + self.order
        B = np.zeros(x.shape + (len(t) - 1,))
        np.put_along_axis(B, idx[..., None], 1.0, axis=-1)
        prev = B
        xe = x[..., None]
        for p in range(1, self.order + 1):
            n = len(t) - 1 - p
            left = (xe - t[:n]) / (t[p:p + n] - t[:n])
            right = (t[p + 1:p + 1 + n] - xe) / (t[p + 1:p + 1 + n] - t[1:1 + n])
            prev, B = B, left * B[..., :n] + right * B[..., 1:n + 1]
        return prev, B

    def eval(self, x) -> np.ndarray:
        """Basis values at ``x`` (clamped), shape ``x.shape + (n_basis,)``."""
        return self._levels(x)[1]

    def eval_with_derivative(self, x):
        prev, B = self._levels(x)
        p = self.order
        if p == 0:
            return B, np.zeros_like(B)
        t = self.knots
        n = self.n_basis
        a = p / (t[p:p + n] - t[:n])
        b = p / (t[p + 1:p + 1 + n] - t[1:1 + n])
        return B, a * prev[..., :n] - b * prev[..., 1:n + 1]


def bspline_eval(basis: BSplineBasis, x: float) -> np.ndarray:
    return basis.eval(float(x))


@dataclass
class KanEdge:
    d: np.ndarray
    mu: float
    omega_w: float


def phi_eval(edge: KanEdge, basis: BSplineBasis, x: float) -> float:
    return float(edge.mu * swish(x) + edge.omega_w * np.dot(edge.d, basis.eval(x)))


class KanLayer:
    """``n_in -> n_out`` layer; parameters are stored as stacked arrays
    ``d (n_out, n_in, n_basis)``, ``mu (n_out, n_in)``, ``omega_w (n_out, n_in)``."""

    def __init__(self, n_in: int, n_out: int, basis: BSplineBasis | None = None, rng=None, name: str = "kan"):
        self.n_in, self.n_out = n_in, n_out
        self.basis = basis or BSplineBasis()
        self.name = name
        nb = self.basis.n_basis
        if rng is None:
            d = np.zeros((n_out, n_in, nb))
            mu = np.zeros((n_out, n_in))
        else:
            d = gaussian_fill(rng, (n_out, n_in, nb), 0.0, 0.1)
            mu = gaussian_fill(rng, (n_out, n_in), 0.0, 1.0 / np.sqrt(n_in))
        self.params = {"d": d, "mu": mu, "omega_w": np.ones((n_out, n_in))}
        self.grads = {k: np.zeros_like(p) for k, p in self.params.items()}
        self._cache = None

    def edge(self, j: int, i: int) -> KanEdge:
        p = self.params
        return KanEdge(p["d"][j, i].copy(), float(p["mu"][j, i]), float(p["omega_w"][j, i]))

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None] if single else x
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise DimensionError(f"{self.name}: expected {self.n_in} inputs, got shape {x.shape}")
        p = self.params
        Bv, dB = self.basis.eval_with_derivative(X)
        sw = swish(X)
        coef = (p["omega_w"][..., None] * p["d"]).reshape(self.n_out, -1)
        out = sw @ p["mu"].T + Bv.reshape(len(X), -1) @ coef.T
        self._cache = (X, Bv, dB, sw, single)
        return out[0] if single else out

    def backward(self, dout) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        X, Bv, dB, sw, single = self._cache
        dout = np.asarray(dout, dtype=np.float64)
        D = dout[None] if single else dout
        p = self.params
        nb = self.basis.n_basis
        self.grads["mu"] += D.T @ sw
        G = (D.T @ Bv.reshape(len(X), -1)).reshape(self.n_out, self.n_in, nb)
        self.grads["d"] += p["omega_w"][..., None] * G
        self.grads["omega_w"] += (p["d"] * G).sum(axis=-1)

        dx = swish_grad(X) * (D @ p["mu"])
        C = np.einsum("bo,oik->bik", D, p["omega_w"][..., None] * p["d"])
        inside = (X >= self.basis.lo) & (X <= self.basis.hi)
        dx += (C * dB).sum(axis=-1) * inside
        return dx[0] if single else dx

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0


class KanNetwork:
    """Composition of KAN layers ``widths[0] -> widths[1] -> ... -> widths[-1]``."""

    def __init__(self, widths, basis: BSplineBasis | None = None, rng=None):
        basis = basis or BSplineBasis()
        self.layers = [KanLayer(a, b, basis, rng, f"kan.layer{i}")
                       for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def kan_forward(layer, x) -> np.ndarray:
    return layer.forward(x)


def kan_backward(layer, upstream_grad) -> np.ndarray:
    return layer.backward(upstream_grad)
