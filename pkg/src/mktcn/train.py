"""Cross-entropy training with Adam, prediction, and the checkpoint format."""
from __future__ import annotations

import json
import logging
import struct
import time
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DegenerateDataError, NumericError, ParameterError
from .metrics import macro_f1
from .model import MktcnModel, ModelConfig, config_hash
from .numeric import make_rng, softmax
from .preprocess import TRAIN, VAL, SerialDataset

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    batch_size: int = 64
    dropout: float = 0.5
    kernel: int = 3
    lr: float = 0.001
    epochs: int = 10
    hidden: tuple = (32, 64, 128)
    grid_size: int = 5
    seed: int = 0
    class_weights: tuple | None = None
    head: str = "kan"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["class_weights"] = None if self.class_weights is None else list(self.class_weights)
        return d

    def model_config(self, n_features: int, n_classes: int) -> ModelConfig:
        return ModelConfig(n_features=n_features, n_classes=n_classes, hidden=self.hidden,
                           kernel=self.kernel, dropout=self.dropout, grid_size=self.grid_size,
                           head=self.head)


@dataclass
class TrainState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_val_macro_f1: float = float("-inf")
    best_epoch: int = -1
    loss_history: list = field(default_factory=list)
    log: list = field(default_factory=list)  # per-epoch dicts


# loss ---------------------------------------------------------------------

def cross_entropy(probs, label: int, weight: float = 1.0) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < len(probs):
        raise ParameterError(f"label {label} outside [0, {len(probs)})")
    return float(-weight * np.log(max(probs[label], PROB_FLOOR)))


def softmax_cross_entropy(logits, labels, class_weights=None):
    """Mean (optionally weighted) loss over a batch and its gradient with
    respect to the logits, ``w * (p - onehot) / B``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ParameterError(f"labels outside [0, {c})")
    p = softmax(logits)
    w = np.ones(B) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
    picked = np.maximum(p[np.arange(B), labels], PROB_FLOOR)
    loss = float(np.sum(-w * np.log(picked)) / B)
    grad = p.copy()
    grad[np.arange(B), labels] -= 1.0
    grad *= (w / B)[:, None]
    return loss, grad


# optimizer ----------------------------------------------------------------

def adam_step(params: dict, grads: dict, state: TrainState, lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r} at step {state.step}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ParameterError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# training -----------------------------------------------------------------

def predict(model: MktcnModel, samples, batch: int = 512):
    """Probabilities and argmax classes with dropout off."""
    probs = model.predict_proba(samples, batch)
    return probs, np.argmax(probs, axis=1)


def _snapshot(model: MktcnModel) -> dict:
    return {k: v.copy() for k, v in model.named_parameters().items()}


def _restore(model: MktcnModel, snap: dict) -> None:
    for k, v in model.named_parameters().items():
        v[...] = snap[k]


def train_model(dataset: SerialDataset, config: TrainConfig, n_classes: int | None = None,
                progress=None) -> tuple[MktcnModel, TrainState]:
    """Train on the ``train`` split, select the epoch with the best
    validation macro-F1 and return that model."""
    if dataset.split is None:
        raise ParameterError("dataset must be split before training")
    x_tr, y_tr = dataset.subset(TRAIN)
    x_va, y_va = dataset.subset(VAL)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise DegenerateDataError("train and validation splits must be non-empty")
    if len(np.unique(y_tr)) < 2:
        raise DegenerateDataError("training data contains a single class")
    c = n_classes or int(dataset.labels.max()) + 1
    model = MktcnModel(config.model_config(dataset.n_features, c), seed=config.seed)
    model.fit_input_affine(x_tr)
    state = TrainState()
    params = model.named_parameters()
    grads = model.named_gradients()
    shuffle_rng = make_rng(config.seed + 1)
    drop_rng = make_rng(config.seed + 2)
    best = None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(x_tr))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            model.zero_grad()
            logits = model.forward(x_tr[idx], training=True, rng=drop_rng)
            loss, dlogits = softmax_cross_entropy(logits, y_tr[idx], config.class_weights)
            model.backward(dlogits)
            adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            total += loss * len(idx)
            seen += len(idx)
        _, pred = predict(model, x_va)
        f1 = macro_f1(y_va, pred, c)
        state.loss_history.append(total / seen)
        entry = {"epoch": epoch + 1, "train_loss": total / seen, "val_macro_f1": f1,
                 "wall_ms": round(1000 * (time.perf_counter() - t0), 1)}
        state.log.append(entry)
        log.info("epoch %d loss %.5f val macro-F1 %.4f", epoch + 1, entry["train_loss"], f1)
        if progress is not None:
            progress(entry)
        if f1 > state.best_val_macro_f1:
            state.best_val_macro_f1 = f1
            state.best_epoch = epoch + 1
            best = _snapshot(model)

    if best is not None:
        _restore(model, best)
    return model, state


# checkpoint ---------------------------------------------------------------

MAGIC = b"MKTCNCKP"
VERSION = 1


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(model: MktcnModel, state: TrainState | None, path, meta: dict | None = None,
                    hash_parts: dict | None = None) -> str:
    """Write a versioned little-endian checkpoint; returns its config hash.

    Layout: magic, u32 version, 64-byte hex config hash, u32 + JSON metadata,
    u32 section count, named float64 sections, then a CRC32 of everything
    before it.
    """
    meta = dict(meta or {})
    meta["model_config"] = model.config.to_dict()
    chash = config_hash(model.config.to_dict(), hash_parts or {})
    arrays = dict(model.named_parameters())
    arrays.update(model.buffers())
    if state is not None:
        meta["train_state"] = {"step": state.step, "best_val_macro_f1": state.best_val_macro_f1,
                               "best_epoch": state.best_epoch, "loss_history": state.loss_history}
        for k in sorted(state.m):
            arrays[f"adam.m.{k}"] = state.m[k]
            arrays[f"adam.v.{k}"] = state.v[k]
    mblob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<I", VERSION)
    body += chash.encode("ascii")
    body += struct.pack("<I", len(mblob)) + mblob
    body += struct.pack("<I", len(arrays))
    for name in arrays:
        body += _pack_array(name, arrays[name])
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    try:
        Path(path).write_bytes(bytes(body))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return chash


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[str, dict, dict]:
    """Raw contents: ``(config_hash, metadata, arrays)``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    if len(buf) < 4 or zlib.crc32(buf[:-4]) & 0xFFFFFFFF != struct.unpack("<I", buf[-4:])[0]:
        raise CheckpointError(f"{path} is truncated or corrupt (checksum mismatch)")
    chash = r.take(64).decode("ascii")
    (mlen,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt metadata in {path}") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return chash, meta, arrays


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[MktcnModel, TrainState, dict]:
    chash, meta, arrays = read_checkpoint(path)
    if expected_hash is not None and expected_hash != chash:
        warnings.warn(f"checkpoint config hash {chash[:12]} differs from evaluation config {expected_hash[:12]}",
                      stacklevel=2)
    try:
        config = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError("checkpoint lacks a usable model configuration") from exc
    model = MktcnModel(config, seed=0)
    for name, p in model.named_parameters().items():
        if name not in arrays or arrays[name].shape != p.shape:
            raise CheckpointError(f"parameter {name} missing or mis-shaped in checkpoint")
        p[...] = arrays[name]
    model.center = arrays["affine.center"].copy()
    model.spread = arrays["affine.spread"].copy()
    state = TrainState()
    ts = meta.get("train_state")
    if ts:
        state.step = ts["step"]
        state.best_val_macro_f1 = ts["best_val_macro_f1"]
        state.best_epoch = ts["best_epoch"]
        state.loss_history = list(ts["loss_history"])
        for name in model.named_parameters():
            if f"adam.m.{name}" in arrays:
                state.m[name] = arrays[f"adam.m.{name}"].copy()
                state.v[name] = arrays[f"adam.v.{name}"].copy()
    meta["config_hash"] = chash
    return model, state, meta
