"""Weight-normalized dilated causal convolutions and residual blocks.

Activations are laid out channels-last, ``(batch, length, channels)``, so a
convolution is one matrix product over an im2col view. Tap ``i`` of a kernel
reads the input ``i * dilation`` positions in the past, i.e.
``y[t] = sum_i w[i] . x[t - i*d] + q``.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, StateError
from .numeric import gaussian_fill


def causal_pad(x: np.ndarray, kernel: int, dilation: int) -> np.ndarray:
    """Prepend ``(kernel - 1) * dilation`` zeros along the time axis.

    Accepts ``(L,)``, ``(ch, L)`` style inputs via ``axis=-1`` when 1-D/2-D,
    and the batched channels-last ``(B, L, C)`` layout used internally.
    """
    if kernel < 1 or dilation < 1:
        raise ValueError("kernel and dilation must be >= 1")
    pad = (kernel - 1) * dilation
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        widths = [(0, 0), (pad, 0), (0, 0)]
    else:
        widths = [(0, 0)] * (x.ndim - 1) + [(pad, 0)]
    return np.pad(x, widths)


class ConvLayer:
    """Causal 1-D convolution with weight norm ``w = g * v / ||v||`` (norm per
    output channel)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, dilation: int = 1, rng=None, name: str = "conv"):
        self.in_ch, self.out_ch, self.kernel, self.dilation = in_ch, out_ch, kernel, dilation
        self.name = name
        if rng is None:
            v = np.zeros((out_ch, in_ch, kernel))
            v[:, :, 0] = 1.0
        else:
            v = gaussian_fill(rng, (out_ch, in_ch, kernel), 0.0, 1.0 / np.sqrt(in_ch * kernel))
        self.params = {
            "v": v,
            "g": np.sqrt((v**2).sum(axis=(1, 2))),
            "q": np.zeros(out_ch),
        }
        self.grads = {k: np.zeros_like(p) for k, p in self.params.items()}
        self._cache = None

    def effective_weight(self) -> np.ndarray:
        v, g = self.params["v"], self.params["g"]
        norm = np.sqrt((v**2).sum(axis=(1, 2)))
        return g[:, None, None] * v / norm[:, None, None]

    def _wmat(self, w):
        # rows ordered (tap, in_ch) to match the im2col column order
        return w.transpose(2, 1, 0).reshape(self.kernel * self.in_ch, self.out_ch)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_ch:
            raise DimensionError(f"{self.name}: expected (B, L, {self.in_ch}), got {x.shape}")
        B, L, _ = x.shape
        k, d = self.kernel, self.dilation
        if k == 1:
            cols = x.reshape(B * L, self.in_ch)
        else:
            xp = causal_pad(x, k, d)
            pad = (k - 1) * d
            cols = np.concatenate([xp[:, pad - i * d: pad - i * d + L, :] for i in range(k)], axis=2)
            cols = cols.reshape(B * L, k * self.in_ch)
        w = self.effective_weight()
        y = cols @ self._wmat(w) + self.params["q"]
        self._cache = (cols, w, x.shape)
        return y.reshape(B, L, self.out_ch)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        cols, w, (B, L, C) = self._cache
        k, d = self.kernel, self.dilation
        dy2 = dy.reshape(B * L, self.out_ch)
        dwmat = cols.T @ dy2
        dw = dwmat.reshape(k, C, self.out_ch).transpose(2, 1, 0)
        self.grads["q"] += dy2.sum(axis=0)

        v, g = self.params["v"], self.params["g"]
        norm = np.sqrt((v**2).sum(axis=(1, 2)))
        vhat = v / norm[:, None, None]
        proj = (dw * vhat).sum(axis=(1, 2))
        self.grads["g"] += proj
        self.grads["v"] += (g / norm)[:, None, None] * (dw - proj[:, None, None] * vhat)

        dcols = (dy2 @ self._wmat(w).T).reshape(B, L, k, C)
        if k == 1:
            return dcols[:, :, 0, :]
        pad = (k - 1) * d
        dxp = np.zeros((B, L + pad, C))
        for i in range(k):
            dxp[:, pad - i * d: pad - i * d + L, :] += dcols[:, :, i, :]
        return dxp[:, pad:, :]

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0


class Dropout:
    """Inverted dropout; the mask drawn in forward is reused by backward."""

    def __init__(self, rate: float):
        self.rate = rate
        self._mask = None

    def forward(self, x, training: bool, rng):
        if not training or self.rate <= 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape, dtype=np.float32) < keep) * (1.0 / keep)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class ResidualBlock:
    def __init__(self, in_ch: int, out_ch: int, kernel: int, dilation: int, dropout: float, rng, name="block"):
        self.conv1 = ConvLayer(in_ch, out_ch, kernel, dilation, rng, f"{name}.conv1")
        self.conv2 = ConvLayer(out_ch, out_ch, kernel, dilation, rng, f"{name}.conv2")
        self.downsample = ConvLayer(in_ch, out_ch, 1, 1, rng, f"{name}.downsample") if in_ch != out_ch else None
        self.drop1, self.drop2 = Dropout(dropout), Dropout(dropout)
        self.name = name
        self._relu = None

    @property
    def layers(self):
        return [c for c in (self.conv1, self.conv2, self.downsample) if c is not None]

    def forward(self, x, training: bool = False, rng=None):
        a1 = self.conv1.forward(x)
        r1 = a1 > 0
        h = self.drop1.forward(a1 * r1, training, rng)
        a2 = self.conv2.forward(h)
        r2 = a2 > 0
        h = self.drop2.forward(a2 * r2, training, rng)
        skip = x if self.downsample is None else self.downsample.forward(x)
        self._relu = (r1, r2)
        return h + skip

    def backward(self, dy):
        if self._relu is None:
            raise StateError(f"{self.name}: backward called before forward")
        r1, r2 = self._relu
        da2 = self.drop2.backward(dy) * r2
        dh = self.conv2.backward(da2)
        da1 = self.drop1.backward(dh) * r1
        dx = self.conv1.backward(da1)
        dx = dx + (dy if self.downsample is None else self.downsample.backward(dy))
        return dx


class TcnStack:
    """Residual blocks with dilations 1, 2, 4, ... followed by a 1x1 head that
    collapses the channels to one, so the output has the input's length."""

    def __init__(self, hidden=(32, 64, 128), kernel: int = 3, dropout: float = 0.5, rng=None, in_ch: int = 1):
        self.blocks = []
        ch = in_ch
        for i, width in enumerate(hidden):
            self.blocks.append(ResidualBlock(ch, width, kernel, 2**i, dropout, rng, f"tcn.block{i}"))
            ch = width
        self.head = ConvLayer(ch, 1, 1, 1, rng, "tcn.head")
        self.kernel = kernel

    @property
    def layers(self):
        return [l for b in self.blocks for l in b.layers] + [self.head]

    def receptive_field(self) -> int:
        return 1 + 2 * (self.kernel - 1) * sum(2**i for i in range(len(self.blocks)))

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        """``x``: (B, L) serial samples, or one (L,) sample. Returns the same shape."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = (x[None] if single else x)[:, :, None]
        for block in self.blocks:
            h = block.forward(h, training, rng)
        out = self.head.forward(h)[:, :, 0]
        return out[0] if single else out

    def backward(self, dy) -> np.ndarray:
        dy = np.asarray(dy, dtype=np.float64)
        single = dy.ndim == 1
        g = self.head.backward((dy[None] if single else dy)[:, :, None])
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g[0, :, 0] if single else g[:, :, 0]


def dilated_conv_forward(layer: ConvLayer, x) -> np.ndarray:
    """Single-sample convolution on a ``(in_ch, L)`` sequence -> ``(out_ch, L)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != layer.in_ch:
        raise DimensionError(f"expected ({layer.in_ch}, L), got {x.shape}")
    return layer.forward(x.T[None])[0].T


def block_forward(block: ResidualBlock, x, training: bool = False, rng=None) -> np.ndarray:
    """Single-sample residual block on a ``(ch, L)`` sequence."""
    x = np.asarray(x, dtype=np.float64)
    return block.forward(x.T[None], training, rng)[0].T


def tcn_forward(stack: TcnStack, sample, training: bool = False, rng=None) -> np.ndarray:
    return stack.forward(sample, training, rng)


def tcn_backward(stack: TcnStack, upstream_grad) -> np.ndarray:
    """Accumulate parameter gradients into each layer's ``grads``; return the
    gradient with respect to the input."""
    return stack.backward(upstream_grad)
