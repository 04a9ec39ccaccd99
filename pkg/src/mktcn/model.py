"""The full classifier: TCN feature extractor, fixed input affine, and a KAN
(or, for ablation, a dense) classification head."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, StateError
from .kan import BSplineBasis, KanNetwork
from .numeric import gaussian_fill, make_rng, softmax
from .tcn import TcnStack


@dataclass
class ModelConfig:
    n_features: int
    n_classes: int = 3
    hidden: tuple = (32, 64, 128)
    kernel: int = 3
    dropout: float = 0.5
    grid_size: int = 5
    spline_order: int = 3
    kan_hidden: tuple = ()
    head: str = "kan"
    normalize_head_input: bool = True
    affine_width: float = 3.0  # spread = width * std, so +-width sigma maps to the grid ends

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.kan_hidden = tuple(int(h) for h in self.kan_hidden)
        if self.head not in ("kan", "dense"):
            raise ParameterError(f"unknown head {self.head!r}")
        if self.n_features < 1 or self.n_classes < 2:
            raise ParameterError("need n_features >= 1 and n_classes >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["kan_hidden"] = list(self.kan_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


class DenseHead:
    def __init__(self, n_in: int, n_out: int, rng=None):
        w = gaussian_fill(rng, (n_out, n_in), 0.0, 1.0 / np.sqrt(n_in)) if rng is not None else np.zeros((n_out, n_in))
        self.name = "dense"
        self.params = {"w": w, "b": np.zeros(n_out)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.layers = [self]
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dy):
        if self._x is None:
            raise StateError("dense head: backward called before forward")
        self.grads["w"] += dy.T @ self._x
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["w"]


class MktcnModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = make_rng(seed)
        self.tcn = TcnStack(config.hidden, config.kernel, config.dropout, rng)
        n = config.n_features
        if config.head == "kan":
            basis = BSplineBasis(config.spline_order, config.grid_size)
            self.head = KanNetwork((n, *config.kan_hidden, config.n_classes), basis, rng)
        else:
            self.head = DenseHead(n, config.n_classes, rng)
        # not trained; fitted once from training data (see fit_input_affine)
        self.center = np.zeros(n)
        self.spread = np.ones(n)
        self._cache = None

    # parameter bookkeeping -------------------------------------------------
    @property
    def layers(self):
        return self.tcn.layers + list(self.head.layers)

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": p for l in self.layers for k, p in l.params.items()}

    def named_gradients(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": g for l in self.layers for k, g in l.grads.items()}

    def zero_grad(self):
        for g in self.named_gradients().values():
            g[...] = 0.0

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def buffers(self) -> dict[str, np.ndarray]:
        return {"affine.center": self.center, "affine.spread": self.spread}

    # computation -----------------------------------------------------------
    def features(self, x, training=False, rng=None):
        return self.tcn.forward(x, training, rng)

    def fit_input_affine(self, x_train, max_samples: int = 4096, batch: int = 256):
        """Center/scale the head input per position from TCN outputs on the
        first ``max_samples`` training samples."""
        if not self.config.normalize_head_input:
            return
        x_train = np.asarray(x_train)[:max_samples]
        feats = np.concatenate([self.features(x_train[i:i + batch]) for i in range(0, len(x_train), batch)])
        self.center = feats.mean(axis=0)
        std = feats.std(axis=0)
        self.spread = self.config.affine_width * np.maximum(std, 1e-6 + 1e-3 * std.mean())

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        """Class scores (logits) for a batch ``(B, n_features)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.n_features:
            raise DimensionError(f"expected samples of length {self.config.n_features}, got shape {x.shape}")
        h = self.features(x, training, rng)
        z = (h - self.center) / self.spread
        self._cache = True
        return self.head.forward(z)

    def backward(self, dlogits) -> np.ndarray:
        if self._cache is None:
            raise StateError("model: backward called before forward")
        dz = self.head.backward(np.asarray(dlogits, dtype=np.float64))
        return self.tcn.backward(dz / self.spread)

    def predict_proba(self, x, batch: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        out = [softmax(self.forward(x[i:i + batch])) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))
