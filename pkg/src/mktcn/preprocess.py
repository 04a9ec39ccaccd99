"""Standardization, PCA, sliding windows and the train/val/test split."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InsufficientDataError, ParameterError, StratificationError
from .numeric import make_rng

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class PcaModel:
    mean: np.ndarray  # (n,)
    scale: np.ndarray  # (n,)
    components: np.ndarray  # (m, n), orthonormal rows
    explained_ratio: np.ndarray  # (m,)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "components": self.components.tolist(),
            "explained_ratio": self.explained_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        n = len(d["mean"])
        return cls(
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["scale"], dtype=np.float64),
            np.asarray(d["components"], dtype=np.float64).reshape(-1, n),
            np.asarray(d["explained_ratio"], dtype=np.float64),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "PcaModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _channels(frame_or_array) -> np.ndarray:
    x = getattr(frame_or_array, "channels", frame_or_array)
    return np.asarray(x, dtype=np.float64)


def fit_pca(frame, train_mask=None, target_ratio: float = 0.95, standardize: bool = True) -> PcaModel:
    """Fit a PCA on the training rows, keeping the fewest components whose
    cumulative explained variance reaches ``target_ratio``.

    Components come out sorted by decreasing eigenvalue, with each row's
    largest-magnitude entry made positive. Channels with zero variance are
    dropped (zero loading) with a warning.
    """
    x = _channels(frame)
    if train_mask is None:
        train_mask = np.ones(len(x), dtype=bool)
    rows = x[np.asarray(train_mask, dtype=bool)]
    if len(rows) < 2:
        raise InsufficientDataError(f"PCA needs at least 2 training rows, got {len(rows)}")
    if not 0.0 < target_ratio <= 1.0:
        raise ParameterError(f"target_ratio must be in (0, 1], got {target_ratio}")
    n = x.shape[1]
    mean = rows.mean(axis=0)
    std = rows.std(axis=0, ddof=1)
    live = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    if not live.all():
        log.warning("dropping zero-variance channels %s", np.flatnonzero(~live).tolist())
    if not live.any():
        raise InsufficientDataError("every channel has zero variance")
    scale = np.where(live & standardize, std, 1.0)
    z = (rows[:, live] - mean[live]) / scale[live]
    cov = z.T @ z / (len(z) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    rank = min(len(rows) - 1, int(live.sum()))
    if len(rows) <= n:
        log.warning("only %d rows for %d channels: covariance is rank deficient", len(rows), n)
    evals, evecs = evals[:rank], evecs[:, :rank]
    ratio = evals / evals.sum()
    cum = np.cumsum(ratio)
    # tolerance guards the exact-equality case (e.g. target 1.0)
    m = int(np.searchsorted(cum, target_ratio - 1e-12) + 1)
    m = min(m, rank)

    comps = np.zeros((m, n))
    comps[:, live] = evecs[:, :m].T
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, scale, comps, ratio[:m].copy())


def transform(pca: PcaModel, frame) -> np.ndarray:
    x = _channels(frame)
    if x.ndim != 2 or x.shape[1] != len(pca.mean):
        raise DimensionError(f"expected {len(pca.mean)} channels, got shape {x.shape}")
    return ((x - pca.mean) / pca.scale) @ pca.components.T


def inverse_transform(pca: PcaModel, reduced) -> np.ndarray:
    return np.asarray(reduced) @ pca.components * pca.scale + pca.mean


@dataclass
class SerialDataset:
    """Flattened windows: ``x[j]`` is window j laid out time-major (oldest
    row first), so element ``tau * m + f`` is feature f at offset tau."""

    x: np.ndarray  # (n_samples, omega * m)
    labels: np.ndarray  # (n_samples,)
    source_index: np.ndarray  # row index of each window's latest timestamp
    omega: int
    stride: int
    m: int
    split: np.ndarray | None = None  # TRAIN / VAL / TEST per sample
    source_timestamp: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.omega * self.m

    def subset(self, which: int | str):
        if self.split is None:
            raise ParameterError("dataset has not been split")
        code = SPLIT_NAMES.index(which) if isinstance(which, str) else which
        sel = self.split == code
        return self.x[sel], self.labels[sel]

    def unflatten(self, j: int) -> np.ndarray:
        return self.x[j].reshape(self.omega, self.m)


def window_count(T: int, omega: int, stride: int) -> int:
    return (T - omega) // stride + 1


def window_labels(labels, omega: int, stride: int) -> np.ndarray:
    labels = np.asarray(labels)
    n = window_count(len(labels), omega, stride)
    return labels[omega - 1 + stride * np.arange(n)]


def windowize(reduced, labels, omega: int, stride: int = 1, timestamps=None) -> SerialDataset:
    reduced = np.asarray(reduced, dtype=np.float64)
    if reduced.ndim == 1:
        reduced = reduced[:, None]
    T, m = reduced.shape
    if omega < 1 or stride < 1:
        raise ParameterError(f"window length and stride must be >= 1 (got {omega}, {stride})")
    if T < omega:
        raise InsufficientDataError(f"series of length {T} is shorter than the window {omega}")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != T:
        raise DimensionError(f"{len(labels)} labels for {T} rows")
    win = np.lib.stride_tricks.sliding_window_view(reduced, omega, axis=0)[::stride]
    # sliding_window_view puts the window axis last: (n, m, omega)
    x = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(len(win), omega * m)
    last = omega - 1 + stride * np.arange(len(win))
    ts = None if timestamps is None else np.asarray(timestamps)[last]
    return SerialDataset(x, labels[last], last, omega, stride, m, source_timestamp=ts)


def split_indices(n: int, labels, ratios=(0.7, 0.2, 0.1), seed: int = 0, max_tries: int = 100) -> np.ndarray:
    """Random train/val/test assignment. Retries with derived seeds until every
    class present overall is present in the training part."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = np.asarray(labels)
    n_train = int(round(n * ratios[0]))
    n_val = min(int(round(n * ratios[1])), n - n_train)
    classes = set(np.unique(labels).tolist())
    for attempt in range(max_tries):
        perm = make_rng(seed + attempt).permutation(n)
        split = np.full(n, TEST, dtype=np.int64)
        split[perm[:n_train]] = TRAIN
        split[perm[n_train:n_train + n_val]] = VAL
        if set(np.unique(labels[split == TRAIN]).tolist()) == classes:
            return split
    raise StratificationError(f"a class stayed out of the training split after {max_tries} seeds")


def split(dataset: SerialDataset, ratios=(0.7, 0.2, 0.1), seed: int = 0) -> SerialDataset:
    dataset.split = split_indices(len(dataset), dataset.labels, ratios, seed)
    return dataset


def prepare(frame, omega: int = 50, stride: int = 1, ratios=(0.7, 0.2, 0.1), seed: int = 0,
            target_ratio: float = 0.95, standardize: bool = True) -> tuple[SerialDataset, PcaModel]:
    """Frame to split serial dataset.

    The split is drawn on window indices first (it only needs labels), then
    the PCA is fitted on the rows that close a training window so nothing
    from validation or test windows leaks into the statistics.
    """
    T = len(frame)
    if T < omega:
        raise InsufficientDataError(f"series of length {T} is shorter than the window {omega}")
    wl = window_labels(frame.labels, omega, stride)
    assign = split_indices(len(wl), wl, ratios, seed)
    last = omega - 1 + stride * np.arange(len(wl))
    mask = np.zeros(T, dtype=bool)
    mask[last[assign == TRAIN]] = True
    pca = fit_pca(frame, mask, target_ratio, standardize)
    ds = windowize(transform(pca, frame), frame.labels, omega, stride, frame.timestamps)
    ds.split = assign
    return ds, pca
