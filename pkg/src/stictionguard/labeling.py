"""Automatic stiction labeling from OP/PV series.

Two independent labelers over non-overlapping 60-minute windows:

* Slope ratio: fit a least-squares line to OP and to PV inside each
  window, take the ratio of slopes R = m_op / m_pv, and average R over
  the trailing n windows into the stiction index beta. A window is
  labeled stiction exactly when beta > 0. The default n = 24 is the
  configuration that produced stable, contiguous labeling on plant data.

* Hotelling T2: summarize each window by six statistics (mean, std, OLS
  slope of each signal), measure each window's squared Mahalanobis
  distance from the global feature mean under the ridged inverse
  covariance, and label windows whose score exceeds a percentile of the
  score distribution.

Both labelers are causal given their inputs; the slope-ratio beta is a
trailing mean so no label ever uses future windows. The first n - 1
windows average over however much history exists and are flagged warmup.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import (
    EmptyInput,
    InsufficientHistory,
    IoFailure,
    LengthMismatch,
    SeriesTooShort,
    SingularCovariance,
)
from .seriesio import MINUTE, UniformSeries, _parse_timestamp

METHOD_SLOPE_RATIO = "slope_ratio"
METHOD_T2 = "hotelling_t2"
METHOD_GROUND_TRUTH = "ground_truth"


@dataclass(frozen=True)
class SlopeRatioConfig:
    window_minutes: int = 60
    n_consecutive: int = 24
    pv_slope_epsilon: float = 1e-9

    def __post_init__(self) -> None:
        if self.window_minutes < 2:
            raise ValueError("regression windows need at least 2 points")
        if self.n_consecutive < 1:
            raise ValueError("n_consecutive must be at least 1")
        if self.pv_slope_epsilon <= 0:
            raise ValueError("pv_slope_epsilon must be positive")


@dataclass
class WindowRegression:
    """Per-window line fits for both signals and their slope ratio."""

    m_pv: float
    b_pv: float
    m_op: float
    b_op: float
    r: float


@dataclass(frozen=True)
class T2Config:
    window_minutes: int = 60
    percentile_p: float = 90.0
    ridge_lambda: float | None = None  # None = 1e-6 * trace(cov) / dim

    def __post_init__(self) -> None:
        if not 0.0 < self.percentile_p < 100.0:
            raise ValueError("percentile_p must lie strictly inside (0, 100)")
        if self.window_minutes < 2:
            raise ValueError("windows need at least 2 points")


@dataclass
class LabeledWindow:
    """One window's binary stiction verdict with its score and provenance."""

    window_index: int
    start_minute: int
    label: int
    score: float
    method: str
    warmup: bool = False


def ols_slope(y: np.ndarray) -> tuple[float, float]:
    """Least-squares line fit of y against sample indices 0..len-1.

    Closed form via centered sums: slope = sum(tc*yc) / sum(tc*tc).
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n < 2:
        raise SeriesTooShort("slope fit needs at least 2 points")
    t = np.arange(n, dtype=np.float64)
    t_mean = t.mean()
    y_mean = y.mean()
    tc = t - t_mean
    slope = float((tc * (y - y_mean)).sum() / (tc * tc).sum())
    intercept = float(y_mean - slope * t_mean)
    return slope, intercept


def _window_count(n_samples: int, window: int) -> int:
    return n_samples // window


def slope_ratio_windows(
    series: UniformSeries, cfg: SlopeRatioConfig = SlopeRatioConfig()
) -> list[WindowRegression]:
    """Fit OP and PV lines in consecutive non-overlapping windows.

    Each window carries both fits and the ratio R = m_op / m_pv, with
    R = 0 when |m_pv| falls below the epsilon guard (a flat PV carries no
    slope-ratio evidence). A trailing partial window is discarded.
    """
    w = cfg.window_minutes
    count = _window_count(len(series), w)
    if count < 1:
        raise SeriesTooShort(
            f"series of {len(series)} samples has no full {w}-minute window"
        )
    out: list[WindowRegression] = []
    for i in range(count):
        sl = slice(i * w, (i + 1) * w)
        m_pv, b_pv = ols_slope(series.pv[sl])
        m_op, b_op = ols_slope(series.op[sl])
        r = m_op / m_pv if abs(m_pv) >= cfg.pv_slope_epsilon else 0.0
        out.append(WindowRegression(m_pv=m_pv, b_pv=b_pv, m_op=m_op, b_op=b_op, r=r))
    return out


def stiction_index_beta(
    regressions: list[WindowRegression], n: int, i: int
) -> float:
    """Trailing mean of the slope ratio over windows i-n+1 .. i."""
    if i < n - 1:
        raise InsufficientHistory(f"window {i} has fewer than {n} predecessors")
    if i >= len(regressions):
        raise InsufficientHistory(f"window {i} outside regression list")
    return float(np.mean([reg.r for reg in regressions[i - n + 1 : i + 1]]))


def slope_ratio_labels(
    series: UniformSeries, cfg: SlopeRatioConfig = SlopeRatioConfig()
) -> list[LabeledWindow]:
    """Label every window by the sign of its trailing-mean slope ratio.

    Window i is stiction iff beta_i > 0 (beta = 0 counts as healthy).
    Windows with fewer than n predecessors average what exists and are
    flagged warmup.
    """
    count = _window_count(len(series), cfg.window_minutes)
    if count < cfg.n_consecutive:
        raise SeriesTooShort(
            f"need at least {cfg.n_consecutive} windows "
            f"({cfg.n_consecutive * cfg.window_minutes} minutes), have {count}"
        )
    regressions = slope_ratio_windows(series, cfg)
    ratios = np.array([reg.r for reg in regressions])
    labels: list[LabeledWindow] = []
    for i in range(count):
        lo = max(0, i - cfg.n_consecutive + 1)
        beta = float(ratios[lo : i + 1].mean())
        labels.append(
            LabeledWindow(
                window_index=i,
                start_minute=i * cfg.window_minutes,
                label=int(beta > 0),
                score=beta,
                method=METHOD_SLOPE_RATIO,
                warmup=i < cfg.n_consecutive - 1,
            )
        )
    return labels


def t2_features(op_window: np.ndarray, pv_window: np.ndarray) -> np.ndarray:
    """Six-statistic summary (mean, population std, OLS slope per signal)."""
    op_window = np.asarray(op_window, dtype=np.float64)
    pv_window = np.asarray(pv_window, dtype=np.float64)
    if op_window.size != pv_window.size:
        raise LengthMismatch("OP and PV windows differ in length")
    slope_op, _ = ols_slope(op_window)
    slope_pv, _ = ols_slope(pv_window)
    return np.array(
        [
            op_window.mean(),
            op_window.std(),
            slope_op,
            pv_window.mean(),
            pv_window.std(),
            slope_pv,
        ]
    )


def t2_feature_windows(
    series: UniformSeries, cfg: T2Config = T2Config()
) -> np.ndarray:
    """Stack t2_features for every full non-overlapping window."""
    w = cfg.window_minutes
    count = _window_count(len(series), w)
    if count < 1:
        raise SeriesTooShort("series has no full window")
    rows = [
        t2_features(series.op[i * w : (i + 1) * w], series.pv[i * w : (i + 1) * w])
        for i in range(count)
    ]
    return np.vstack(rows)


@dataclass
class T2Stats:
    """Fitted center and inverse covariance for Hotelling scoring."""

    mu: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    ridge: float

    def score(self, x: np.ndarray) -> float:
        d = np.asarray(x, dtype=np.float64) - self.mu
        return float(d @ self.cov_inv @ d)


def fit_t2(features: np.ndarray, cfg: T2Config = T2Config()) -> T2Stats:
    """Fit the T2 center and ridged inverse covariance.

    The ridge defaults to 1e-6 * trace(sample covariance) / dim, which
    keeps near-constant feature sets invertible without noticeably
    distorting well-conditioned ones.
    """
    features = np.asarray(features, dtype=np.float64)
    n, dim = features.shape
    if n <= dim:
        raise SeriesTooShort(
            f"need more windows ({n}) than feature dimensions ({dim})"
        )
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    ridge = (
        cfg.ridge_lambda
        if cfg.ridge_lambda is not None
        else 1e-6 * float(np.trace(cov)) / dim
    )
    ridged = cov + ridge * np.eye(dim)
    try:
        cov_inv = np.linalg.inv(ridged)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(
            f"covariance singular even with ridge {ridge:g}"
        ) from exc
    if not np.isfinite(cov_inv).all():
        raise SingularCovariance(f"covariance inverse overflowed at ridge {ridge:g}")
    return T2Stats(mu=mu, cov=ridged, cov_inv=cov_inv, ridge=ridge)


def hotelling_t2(features: np.ndarray, cfg: T2Config = T2Config()) -> np.ndarray:
    """Hotelling T2 score of every window against the global statistics."""
    stats = fit_t2(features, cfg)
    diffs = np.asarray(features, dtype=np.float64) - stats.mu
    scores = np.einsum("ij,jk,ik->i", diffs, stats.cov_inv, diffs)
    return np.maximum(scores, 0.0)


def t2_threshold_labels(
    scores: np.ndarray,
    cfg: T2Config = T2Config(),
    window_minutes: int | None = None,
) -> list[LabeledWindow]:
    """Label windows whose score strictly exceeds the p-th percentile.

    The threshold uses linear interpolation between closest order
    statistics (numpy's default percentile method).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInput("no scores to threshold")
    w = window_minutes if window_minutes is not None else cfg.window_minutes
    threshold = float(np.percentile(scores, cfg.percentile_p))
    return [
        LabeledWindow(
            window_index=i,
            start_minute=i * w,
            label=int(score > threshold),
            score=float(score),
            method=METHOD_T2,
        )
        for i, score in enumerate(scores)
    ]


def t2_labels(series: UniformSeries, cfg: T2Config = T2Config()) -> list[LabeledWindow]:
    """Full T2 pipeline: features, scores, percentile threshold."""
    features = t2_feature_windows(series, cfg)
    scores = hotelling_t2(features, cfg)
    return t2_threshold_labels(scores, cfg)


def ground_truth_labels(
    truth: np.ndarray, window_minutes: int = 60
) -> list[LabeledWindow]:
    """Collapse per-minute simulator flags to per-window labels.

    A window counts as stiction when any of its minutes is flagged; the
    score is the flagged fraction.
    """
    truth = np.asarray(truth, dtype=bool)
    count = _window_count(truth.size, window_minutes)
    if count < 1:
        raise SeriesTooShort("ground truth shorter than one window")
    out: list[LabeledWindow] = []
    for i in range(count):
        chunk = truth[i * window_minutes : (i + 1) * window_minutes]
        frac = float(chunk.mean())
        out.append(
            LabeledWindow(
                window_index=i,
                start_minute=i * window_minutes,
                label=int(chunk.any()),
                score=frac,
                method=METHOD_GROUND_TRUTH,
            )
        )
    return out


def write_labels(labels: list[LabeledWindow], t0: datetime, path_or_file) -> None:
    """Write the label table ``window_index,start_timestamp,score,label,method,warmup``."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_index", "start_timestamp", "score", "label", "method", "warmup"]
        )
        for lw in labels:
            ts = t0 + lw.start_minute * MINUTE
            writer.writerow(
                [
                    lw.window_index,
                    ts.isoformat(timespec="minutes"),
                    repr(float(lw.score)),
                    lw.label,
                    lw.method,
                    int(lw.warmup),
                ]
            )
    finally:
        if own:
            fh.close()


def read_labels(path_or_file, t0: datetime | None = None) -> list[LabeledWindow]:
    """Read a label table back into LabeledWindow records.

    Start minutes are computed relative to ``t0`` when given (pass the
    series' own t0 so labels line up with sample indices); otherwise the
    table is self-anchored, inferring the window stride from consecutive
    rows so that start_minute = window_index * stride.
    """
    own = isinstance(path_or_file, (str, os.PathLike))
    try:
        fh = open(path_or_file, "r", newline="") if own else path_or_file
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["window_index", "start_timestamp", "score", "label", "method", "warmup"]
        if header is None or [h.strip() for h in header] != expected:
            raise EmptyInput(f"unexpected label header: {header}")
        rows = [row for row in reader if row]
    finally:
        if own:
            fh.close()
    if not rows:
        raise EmptyInput("label table has no rows")

    stamps = [_parse_timestamp(row[1]) for row in rows]
    if t0 is None:
        if len(rows) >= 2 and int(rows[1][0]) != int(rows[0][0]):
            stride = (stamps[1] - stamps[0]) / (int(rows[1][0]) - int(rows[0][0]))
        else:
            stride = 60 * MINUTE
        t0 = stamps[0] - int(rows[0][0]) * stride

    return [
        LabeledWindow(
            window_index=int(row[0]),
            start_minute=int((ts - t0) / MINUTE),
            label=int(row[3]),
            score=float(row[2]),
            method=row[4],
            warmup=bool(int(row[5])),
        )
        for row, ts in zip(rows, stamps)
    ]
