"""Model-ready sample construction from labeled series.

Base windows are 60 minutes with a 60-minute stride, matching the
labeling grid. Each base window is decimated from 60 rows to L = 24 by
uniform index selection (endpoints kept, no interpolation) before being
fed to a model, and channels are ordered (PV, OP).

Detection samples pair each window's decimated values with that window's
own label. Early-prediction samples concatenate D consecutive decimated
windows as input and label them 1 when any of the K following windows is
labeled stiction; pairs step one base window at a time and every input
strictly precedes its lookahead span.

Datasets are split 60:20:20 into contiguous chronological blocks and
z-scored per channel with statistics fitted on the training block only.
The on-disk form is a small binary container (magic ``SGW1``,
little-endian float64) plus a human-readable sidecar manifest.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import (
    EmptyInput,
    IoFailure,
    LabelMisalignment,
    SeriesTooShort,
)
from .labeling import LabeledWindow
from .seriesio import UniformSeries

MAGIC = b"SGW1"

MODE_DETECT = "detect"
MODE_PREDICT = "predict"


@dataclass(frozen=True)
class WindowSpec:
    base_minutes: int = 60
    stride_minutes: int = 60
    model_len_l: int = 24
    detect_windows_d: int = 1
    lookahead_windows_k: int = 1

    def __post_init__(self) -> None:
        if self.base_minutes != self.stride_minutes:
            raise ValueError("base and stride must match the labeling grid")
        if not 2 <= self.model_len_l <= self.base_minutes:
            raise ValueError("model_len_l must lie in [2, base_minutes]")
        if not 1 <= self.detect_windows_d <= 4:
            raise ValueError("detect_windows_d must lie in 1..4")
        if not 1 <= self.lookahead_windows_k <= 4:
            raise ValueError("lookahead_windows_k must lie in 1..4")


@dataclass
class Sample:
    """One model input: (rows, 2) array ordered (PV, OP), plus its label."""

    input: np.ndarray
    label: int
    origin: int  # first minute of the detect span


@dataclass
class WindowDataset:
    """Ordered, normalized samples with chronological split indices.

    ``inputs`` is (N, rows, 2) after per-channel z-scoring with training
    statistics; ``origins[i]`` is the first minute of sample i's detect
    span relative to the source series t0.
    """

    inputs: np.ndarray
    labels: np.ndarray
    origins: np.ndarray
    train_end: int
    val_end: int
    norm_mean: np.ndarray
    norm_std: np.ndarray
    spec: WindowSpec
    mode: str
    t0: datetime

    def __len__(self) -> int:
        return len(self.inputs)

    def sample(self, i: int) -> Sample:
        return Sample(input=self.inputs[i], label=int(self.labels[i]), origin=int(self.origins[i]))

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[: self.train_end], self.labels[: self.train_end]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.train_end : self.val_end], self.labels[self.train_end : self.val_end]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.val_end :], self.labels[self.val_end :]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (inputs, labels, origins) for train/val/test/all."""
        bounds = {
            "train": (0, self.train_end),
            "val": (self.train_end, self.val_end),
            "test": (self.val_end, len(self)),
            "all": (0, len(self)),
        }
        if name not in bounds:
            raise KeyError(f"unknown split {name!r}")
        lo, hi = bounds[name]
        return self.inputs[lo:hi], self.labels[lo:hi], self.origins[lo:hi]


def decimate_indices(window_len: int, l: int) -> np.ndarray:
    """Uniformly spaced selection indices round(i*(W-1)/(l-1)), endpoints kept."""
    if l < 2 or l > window_len:
        raise ValueError(f"cannot decimate {window_len} rows to {l}")
    i = np.arange(l, dtype=np.float64)
    return np.floor(i * (window_len - 1) / (l - 1) + 0.5).astype(np.int64)


def decimate_window(window: np.ndarray, l: int) -> np.ndarray:
    """Select l rows from a (W, C) window by uniform index selection."""
    window = np.asarray(window)
    return window[decimate_indices(window.shape[0], l)]


def _window_matrix(series: UniformSeries, start: int, length: int) -> np.ndarray:
    """Stack one (length, 2) window in (PV, OP) channel order."""
    return np.column_stack(
        (series.pv[start : start + length], series.op[start : start + length])
    )


def _check_alignment(
    series: UniformSeries, labels: list[LabeledWindow], spec: WindowSpec
) -> int:
    n_windows = len(series) // spec.base_minutes
    if len(labels) != n_windows:
        raise LabelMisalignment(
            f"{len(labels)} labels for {n_windows} windows of {spec.base_minutes} min"
        )
    for i, lw in enumerate(labels):
        if lw.window_index != i or lw.start_minute != i * spec.stride_minutes:
            raise LabelMisalignment(
                f"label {i} starts at minute {lw.start_minute}, "
                f"expected {i * spec.stride_minutes}"
            )
    return n_windows


def segment_detection_samples(
    series: UniformSeries, labels: list[LabeledWindow], spec: WindowSpec = WindowSpec()
) -> list[Sample]:
    """One sample per labeled window: decimated window values, window label."""
    n_windows = _check_alignment(series, labels, spec)
    if n_windows < 1:
        raise SeriesTooShort("series shorter than one base window")
    idx = decimate_indices(spec.base_minutes, spec.model_len_l)
    samples = []
    for i in range(n_windows):
        start = i * spec.base_minutes
        window = _window_matrix(series, start, spec.base_minutes)[idx]
        samples.append(Sample(input=window, label=int(labels[i].label), origin=start))
    return samples


def pair_detect_lookahead(
    series: UniformSeries, labels: list[LabeledWindow], spec: WindowSpec
) -> list[Sample]:
    """Early-prediction pairs: D decimated input windows, any-of-next-K label.

    Positions step one base window at a time. A sample's input covers
    windows i..i+D-1 and its label is 1 iff any window in i+D..i+D+K-1
    is labeled stiction; positions whose lookahead would run past the end
    of the series are dropped.
    """
    n_windows = _check_alignment(series, labels, spec)
    d, k = spec.detect_windows_d, spec.lookahead_windows_k
    n_positions = n_windows - d - k + 1
    if n_positions < 1:
        raise SeriesTooShort(
            f"need at least {d + k} windows for D={d}, K={k}; have {n_windows}"
        )
    idx = decimate_indices(spec.base_minutes, spec.model_len_l)
    label_arr = np.array([lw.label for lw in labels], dtype=np.uint8)
    samples = []
    for i in range(n_positions):
        parts = [
            _window_matrix(series, (i + j) * spec.base_minutes, spec.base_minutes)[idx]
            for j in range(d)
        ]
        lookahead = label_arr[i + d : i + d + k]
        samples.append(
            Sample(
                input=np.vstack(parts),
                label=int(lookahead.any()),
                origin=i * spec.base_minutes,
            )
        )
    return samples


def split_normalize(
    samples: list[Sample],
    spec: WindowSpec = WindowSpec(),
    mode: str = MODE_DETECT,
    t0: datetime | None = None,
    ratios: tuple[float, float] = (0.6, 0.2),
) -> WindowDataset:
    """Chronological 60:20:20 split with train-fitted per-channel z-scoring.

    Normalization statistics come only from the training block; a
    zero-variance channel is shifted but left unscaled.
    """
    if len(samples) < 5:
        raise SeriesTooShort(f"need at least 5 samples to split, have {len(samples)}")
    inputs = np.stack([s.input for s in samples]).astype(np.float64)
    labels = np.array([s.label for s in samples], dtype=np.uint8)
    origins = np.array([s.origin for s in samples], dtype=np.int64)

    n = len(samples)
    train_end = int(np.floor(n * ratios[0]))
    val_end = int(np.floor(n * (ratios[0] + ratios[1])))
    train_end = max(1, train_end)
    val_end = max(train_end + 1, val_end)

    mean = inputs[:train_end].mean(axis=(0, 1))
    std = inputs[:train_end].std(axis=(0, 1))
    safe_std = np.where(std > 0, std, 1.0)
    normalized = (inputs - mean) / safe_std

    return WindowDataset(
        inputs=normalized,
        labels=labels,
        origins=origins,
        train_end=train_end,
        val_end=val_end,
        norm_mean=mean,
        norm_std=std,
        spec=spec,
        mode=mode,
        t0=t0 if t0 is not None else datetime(1970, 1, 1),
    )


def build_dataset(
    series: UniformSeries,
    labels: list[LabeledWindow],
    spec: WindowSpec = WindowSpec(),
    mode: str = MODE_DETECT,
) -> WindowDataset:
    """Segment (detect) or pair (predict) and split in one call."""
    if mode == MODE_DETECT:
        samples = segment_detection_samples(series, labels, spec)
    elif mode == MODE_PREDICT:
        samples = pair_detect_lookahead(series, labels, spec)
    else:
        raise ValueError(f"unknown dataset mode {mode!r}")
    return split_normalize(samples, spec=spec, mode=mode, t0=series.t0)


def save_dataset(ds: WindowDataset, path) -> None:
    """Write the SGW1 container and its sidecar manifest."""
    header = {
        "format_version": 1,
        "mode": ds.mode,
        "base_minutes": ds.spec.base_minutes,
        "stride_minutes": ds.spec.stride_minutes,
        "model_len_l": ds.spec.model_len_l,
        "detect_windows_d": ds.spec.detect_windows_d,
        "lookahead_windows_k": ds.spec.lookahead_windows_k,
        "n_samples": len(ds),
        "rows": int(ds.inputs.shape[1]),
        "cols": int(ds.inputs.shape[2]),
        "train_end": ds.train_end,
        "val_end": ds.val_end,
        "t0": ds.t0.isoformat(timespec="minutes"),
        "norm_mean": [float(v) for v in ds.norm_mean],
        "norm_std": [float(v) for v in ds.norm_std],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(ds.inputs.astype("<f8").tobytes())
            fh.write(ds.labels.astype(np.uint8).tobytes())
            fh.write(ds.origins.astype("<i8").tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    _write_manifest(header, str(path) + ".manifest.txt")


def _write_manifest(header: dict, path: str) -> None:
    lines = [f"{key} = {header[key]}" for key in sorted(header)]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_dataset(path) -> WindowDataset:
    """Read an SGW1 container back into a WindowDataset."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(data) < 8 or data[:4] != MAGIC:
        raise IoFailure(f"{path}: not an SGW1 dataset container")
    (header_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    n = header["n_samples"]
    rows, cols = header["rows"], header["cols"]
    offset = 8 + header_len
    inputs_bytes = n * rows * cols * 8
    inputs = np.frombuffer(data, dtype="<f8", count=n * rows * cols, offset=offset)
    inputs = inputs.reshape(n, rows, cols).copy()
    offset += inputs_bytes
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset).copy()
    offset += n
    origins = np.frombuffer(data, dtype="<i8", count=n, offset=offset).copy()

    spec = WindowSpec(
        base_minutes=header["base_minutes"],
        stride_minutes=header["stride_minutes"],
        model_len_l=header["model_len_l"],
        detect_windows_d=header["detect_windows_d"],
        lookahead_windows_k=header["lookahead_windows_k"],
    )
    return WindowDataset(
        inputs=inputs,
        labels=labels,
        origins=origins,
        train_end=header["train_end"],
        val_end=header["val_end"],
        norm_mean=np.array(header["norm_mean"]),
        norm_std=np.array(header["norm_std"]),
        spec=spec,
        mode=header["mode"],
        t0=datetime.fromisoformat(header["t0"]),
    )
