"""Synthetic SCADA telemetry for a multi-station gas pipeline.

The generator is deliberately simple: every channel is a station-specific
baseline modulated by a shared daily/weekly load cycle, plus AR(1) sensor
noise. A leak event perturbs the downstream pressure and flow readings in two
phases. In the precursor phase, pressures ramp down to half the eventual drop
and an extra fluctuation component doubles the noise variance. In the leak
phase, pressures sit at the full drop and the two flow meters diverge.

Labels: 0 normal, 1 abnormal (leak in progress), 2 doubtful (the ``N`` steps
before an onset).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError, ParameterError
from .numeric import make_rng

log = logging.getLogger(__name__)

NORMAL, ABNORMAL, DOUBTFUL = 0, 1, 2
CLASS_NAMES = ("normal", "abnormal", "doubtful")

# Ratio of abnormal samples in the reference field dataset (364613:12244).
ABNORMAL_RATIO = 12244 / (364613 + 12244)
STEPS_PER_DAY = 86400 // 20


@dataclass
class TimeSeriesFrame:
    timestamps: np.ndarray  # integer seconds, shape (T,)
    channels: np.ndarray  # float64, shape (T, n)
    labels: np.ndarray  # int, shape (T,)
    channel_names: list[str]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.float64).reshape(len(self.timestamps), len(self.channel_names))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.timestamps):
            raise ParameterError("labels and timestamps differ in length")

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesFrame):
            return NotImplemented
        return (
            list(self.channel_names) == list(other.channel_names)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.labels, other.labels)
            and self.channels.shape == other.channels.shape
            and np.array_equal(self.channels, other.channels)
        )

    def with_labels(self, labels) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamps.copy(), self.channels.copy(), labels, list(self.channel_names))


@dataclass
class PipelineConfig:
    """Parameters of one synthetic pipeline run.

    ``horizon_n`` is the number of steps labeled doubtful before each onset.
    ``precursor_steps`` is how long the physical precursor actually lasts; it
    defaults to ``horizon_n`` but can be fixed independently so that the
    labeling horizon can be swept over a single signal.
    """

    n_stations: int = 4
    sample_interval: int = 20
    total_steps: int = 40_000
    leak_events: Sequence[tuple[int, float]] = ()
    horizon_n: int = 200
    leak_duration: int = 216
    precursor_steps: int | None = None
    noise_std: float | Sequence[float] = 0.15
    baseline_drop: float = 1.5
    flow_divergence: float = 0.6
    ar_coef: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.leak_events = [(int(o), float(s)) for o, s in self.leak_events]
        if self.n_stations < 2:
            raise ConfigurationError("need at least two stations")
        if self.total_steps < 0 or self.horizon_n < 0 or self.leak_duration < 1:
            raise ConfigurationError("step counts must be non-negative and leak_duration >= 1")
        onsets = [o for o, _ in self.leak_events]
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ConfigurationError(f"leak onsets must be strictly increasing: {onsets}")
        for onset, sev in self.leak_events:
            if not 0.0 <= sev <= 1.0:
                raise ConfigurationError(f"severity {sev} outside [0, 1]")
            if onset - self.precursor_len < 0 or onset - self.horizon_n < 0:
                raise ConfigurationError(f"onset {onset} leaves no room for the precursor window")
            if onset >= self.total_steps:
                raise ConfigurationError(f"onset {onset} beyond total_steps {self.total_steps}")
        for (o1, _), (o2, _) in zip(self.leak_events, self.leak_events[1:]):
            if o2 - self.precursor_len < o1 + self.leak_duration:
                raise ConfigurationError(
                    f"precursor window of onset {o2} overlaps the event starting at {o1}"
                )

    @property
    def precursor_len(self) -> int:
        return self.horizon_n if self.precursor_steps is None else int(self.precursor_steps)

    @property
    def n_channels(self) -> int:
        return 4 * (self.n_stations - 1) + 2


def channel_layout(n_stations: int) -> list[tuple[str, int, str]]:
    """(kind, station, side) for every channel, in column order.

    Temperature and pressure at each station inlet and outlet, except that
    the first station has only an outlet and the last only an inlet; flow
    meters sit at the first outlet and the last inlet.
    """
    layout = []
    for st in range(1, n_stations + 1):
        sides = (["in"] if st > 1 else []) + (["out"] if st < n_stations else [])
        for side in sides:
            layout.append(("T", st, side))
            layout.append(("P", st, side))
    layout.append(("F", 1, "out"))
    layout.append(("F", n_stations, "in"))
    return layout


def channel_names(n_stations: int) -> list[str]:
    return [f"{kind}{st}_{side}" for kind, st, side in channel_layout(n_stations)]


def default_leak_events(total_steps: int, n_events: int, horizon_n: int, leak_duration: int,
                        seed: int) -> list[tuple[int, float]]:
    """Evenly spread onsets with a little jitter; severities in [0.6, 1]."""
    if n_events <= 0:
        return []
    rng = make_rng(seed + 7919)
    slot = total_steps / n_events
    events = []
    for i in range(n_events):
        lo = int(i * slot) + horizon_n + 50
        hi = int((i + 1) * slot) - leak_duration - 50
        if hi <= lo:
            raise ConfigurationError(
                f"{n_events} events of {horizon_n}+{leak_duration} steps do not fit in {total_steps} steps"
            )
        centre = (lo + hi) // 2
        jitter = int(rng.integers(-(hi - lo) // 4, (hi - lo) // 4 + 1))
        events.append((centre + jitter, float(rng.uniform(0.6, 1.0))))
    return events


def leak_duration_for_ratio(total_steps: int, n_events: int, ratio: float = ABNORMAL_RATIO) -> int:
    return max(1, round(ratio * total_steps / max(n_events, 1)))


def ngpod_like_config(total_steps: int = 40_000, n_events: int = 6, horizon_n: int = 200,
                      seed: int = 0, precursor_steps: int | None = None) -> PipelineConfig:
    """Desk-scale preset keeping the field dataset's ~3.3% abnormal share."""
    duration = leak_duration_for_ratio(total_steps, n_events)
    room = max(horizon_n, precursor_steps or 0)
    events = default_leak_events(total_steps, n_events, room, duration, seed)
    return PipelineConfig(total_steps=total_steps, leak_events=events, horizon_n=horizon_n,
                          leak_duration=duration, precursor_steps=precursor_steps, seed=seed)


def assign_labels(total_steps: int, onsets: Sequence[int], ends: Sequence[int], horizon_n: int) -> np.ndarray:
    """Label a timeline from leak segments [onset, end).

    Doubtful windows are cut short where they would reach back into the
    previous leak segment.
    """
    labels = np.zeros(total_steps, dtype=np.int64)
    prev_end = 0
    for onset, end in zip(onsets, ends):
        start = max(onset - horizon_n, prev_end, 0)
        labels[start:onset] = DOUBTFUL
        labels[onset:min(end, total_steps)] = ABNORMAL
        prev_end = end
    return labels


def leak_segments(labels) -> tuple[list[int], list[int]]:
    """Onsets and (exclusive) ends of the contiguous abnormal runs."""
    ab = np.asarray(labels) == ABNORMAL
    edges = np.diff(np.concatenate([[0], ab.astype(np.int8), [0]]))
    return list(np.flatnonzero(edges == 1)), list(np.flatnonzero(edges == -1))


def relabel(labels, horizon_n: int) -> np.ndarray:
    """Recompute doubtful labels for a new horizon, keeping the abnormal runs."""
    onsets, ends = leak_segments(labels)
    return assign_labels(len(labels), onsets, ends, horizon_n)


def _ar1(rng, n_steps: int, n_ch: int, coef: float, std: np.ndarray) -> np.ndarray:
    innov = rng.standard_normal((n_steps, n_ch)) * math.sqrt(1.0 - coef**2)
    state = rng.standard_normal(n_ch)
    if n_steps == 0:
        return np.empty((0, n_ch))
    out, _ = lfilter([1.0], [1.0, -coef], innov, axis=0, zi=(coef * state)[None, :])
    return out * std


def generate_pipeline(config: PipelineConfig) -> TimeSeriesFrame:
    rng = make_rng(config.seed)
    T = config.total_steps
    layout = channel_layout(config.n_stations)
    n_ch = len(layout)
    t = np.arange(T, dtype=np.float64)

    phase = rng.uniform(0, 2 * np.pi, size=2)
    load = 0.7 * np.sin(2 * np.pi * t / STEPS_PER_DAY + phase[0]) + 0.3 * np.sin(
        2 * np.pi * t / (7 * STEPS_PER_DAY) + phase[1])
    heat = np.sin(2 * np.pi * t / STEPS_PER_DAY + phase[0] - 1.0)

    base = np.empty(n_ch)
    gain = np.empty(n_ch)
    factor = np.empty((T, n_ch))
    # leak sits in the middle segment; everything past it is downstream
    leak_station = (config.n_stations + 1) // 2
    downstream = np.zeros(n_ch, dtype=bool)
    for j, (kind, st, side) in enumerate(layout):
        pos = 2 * (st - 1) + (1 if side == "out" else 0)
        if kind == "P":
            base[j], gain[j], factor[:, j] = 6.0 - 0.25 * pos, 0.5, load
            downstream[j] = pos > 2 * (leak_station - 1) + 1
        elif kind == "T":
            base[j], gain[j], factor[:, j] = 15.0 - 0.4 * pos, 1.5, heat
        else:
            base[j], gain[j], factor[:, j] = 100.0, 6.0, load
    signal = base + gain * factor

    noise_std = np.broadcast_to(np.asarray(config.noise_std, dtype=np.float64), (n_ch,)) * gain
    noise = _ar1(rng, T, n_ch, config.ar_coef, noise_std)
    # extra fluctuation source, drawn unconditionally so severity 0 is a no-op
    burst = rng.standard_normal((T, n_ch)) * noise_std

    flow_in = next(j for j, (k, st, _) in enumerate(layout) if k == "F" and st == config.n_stations)
    flow_out = next(j for j, (k, st, _) in enumerate(layout) if k == "F" and st == 1)
    p_gain = gain[downstream]

    x = signal + noise
    onsets, ends = [], []
    P = config.precursor_len
    for onset, sev in config.leak_events:
        end = min(onset + config.leak_duration, T)
        onsets.append(onset)
        ends.append(end)
        drop = sev * config.baseline_drop
        pre = slice(onset - P, onset)
        if P > 0:
            ramp = (np.arange(1, P + 1) / P)[:, None]
            x[pre, downstream] -= 0.5 * drop * p_gain * ramp
            x[pre, :] += math.sqrt(sev) * burst[pre, :] * _fluct_mask(downstream, flow_in, flow_out)
        x[onset:end, downstream] -= drop * p_gain
        div = sev * config.flow_divergence * gain[flow_in]
        x[onset:end, flow_in] -= div
        x[onset:end, flow_out] += 0.5 * div

    labels = assign_labels(T, onsets, ends, config.horizon_n)
    timestamps = np.arange(T, dtype=np.int64) * config.sample_interval
    return TimeSeriesFrame(timestamps, x, labels, channel_names(config.n_stations))


def _fluct_mask(downstream, flow_in, flow_out):
    mask = downstream.astype(np.float64)
    mask[flow_in] = mask[flow_out] = 1.0
    return mask


def generate_multiclass(seed: int, n_classes: int, samples_per_class: Sequence[int], length: int,
                        noise_std: float = 0.1, sample_interval: int = 1) -> TimeSeriesFrame:
    """Segments of class-specific oscillations, shuffled into one timeline.

    Class ``k`` oscillates at a distinct frequency and amplitude on two
    channels (fundamental and second harmonic). Each segment is ``length``
    steps long with a constant label.
    """
    if not samples_per_class:
        raise ParameterError("samples_per_class is empty")
    if n_classes < 2:
        raise ParameterError("need at least two classes")
    if len(samples_per_class) != n_classes:
        raise ParameterError(f"{len(samples_per_class)} segment counts for {n_classes} classes")
    if length < 1:
        raise ParameterError("segment length must be >= 1")
    rng = make_rng(seed)
    order = np.concatenate([np.full(int(n), k) for k, n in enumerate(samples_per_class)]).astype(np.int64)
    order = order[rng.permutation(len(order))]
    tau = np.arange(length, dtype=np.float64)
    chunks, labels = [], []
    for k in order:
        freq = 0.02 + 0.03 * k
        amp = 1.0 + 0.15 * k
        ph = rng.uniform(0, 2 * np.pi)
        seg = np.stack([amp * np.sin(2 * np.pi * freq * tau + ph),
                        0.5 * amp * np.sin(4 * np.pi * freq * tau + 2 * ph)], axis=1)
        seg += noise_std * rng.standard_normal(seg.shape)
        chunks.append(seg)
        labels.append(np.full(length, k))
    x = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    y = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    ts = np.arange(len(y), dtype=np.int64) * sample_interval
    return TimeSeriesFrame(ts, x, y, ["vib_drive", "vib_fan"])


def write_csv(frame: TimeSeriesFrame, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *frame.channel_names, "label"])
            for ts, row, lab in zip(frame.timestamps, frame.channels, frame.labels):
                w.writerow([int(ts), *(repr(float(v)) for v in row), int(lab)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> TimeSeriesFrame:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParameterError(f"{path} is empty (header row required)")
    header = rows[0]
    if len(header) < 2 or header[0] != "t" or header[-1] != "label":
        raise ParameterError(f"{path}: header must be t,<channels...>,label")
    names = header[1:-1]
    body = rows[1:]
    ts = np.array([int(r[0]) for r in body], dtype=np.int64)
    x = np.array([[float(v) for v in r[1:-1]] for r in body], dtype=np.float64).reshape(len(body), len(names))
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return TimeSeriesFrame(ts, x, y, names)
