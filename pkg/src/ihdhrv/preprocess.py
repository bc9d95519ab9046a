"""Segmentation, artifact gating and 2 Hz resampling of RR series."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

from .rr_io import BeatAnnotation, RRSeries

SEGMENT_S = 300.0
FS_HZ = 2.0


class RejectionReason(Enum):
    LONG_RUN = "LongRun"
    TOTAL_ABNORMAL = "TotalAbnormal"
    TOO_FEW_NORMALS = "TooFewNormals"


@dataclass(frozen=True)
class GateConfig:
    """Acceptance thresholds. Both duration gates are strict (``<``)."""

    max_run_s: float = 10.0
    max_abnormal_fraction: float = 0.20
    min_normal_beats: int = 4

    def __post_init__(self):
        if self.max_run_s <= 0:
            raise ValueError("max_run_s must be positive")
        if not 0 < self.max_abnormal_fraction <= 1:
            raise ValueError("max_abnormal_fraction must lie in (0, 1]")
        if self.min_normal_beats < 4:
            raise ValueError("a cubic spline needs min_normal_beats >= 4")


@dataclass(frozen=True, eq=False)
class Segment:
    subject_id: str
    index: int
    start_s: float
    length_s: float
    onsets_s: np.ndarray
    rr_ms: np.ndarray
    annotations: np.ndarray
    accepted: bool = False
    rejection_reason: RejectionReason | None = None

    def __post_init__(self):
        if self.accepted and self.rejection_reason is not None:
            raise ValueError("an accepted segment cannot carry a rejection reason")

    @property
    def normal_mask(self) -> np.ndarray:
        return self.annotations == BeatAnnotation.NORMAL.value

    @property
    def normal_rr(self) -> np.ndarray:
        return self.rr_ms[self.normal_mask]

    def with_gate(self, accepted: bool, reason: RejectionReason | None) -> "Segment":
        return Segment(self.subject_id, self.index, self.start_s, self.length_s,
                       self.onsets_s, self.rr_ms, self.annotations, accepted, reason)


@dataclass(frozen=True, eq=False)
class Tachogram:
    samples: np.ndarray
    fs_hz: float = FS_HZ

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1 or len(x) < 2:
            raise ValueError("tachogram needs a 1-D array of at least 2 samples")
        if not np.all(np.isfinite(x)) or np.any(x <= 0):
            raise ValueError("tachogram samples must be finite and > 0")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def n(self) -> int:
        return len(self.samples)


def segment_series(series: RRSeries, seg_len_s: float = SEGMENT_S) -> list[Segment]:
    """Cut ``series`` into consecutive windows; a beat belongs to the window of its onset.

    The trailing partial window is dropped. Segments come back ungated
    (``accepted=False`` with no reason) until :func:`gate` is applied.
    """
    if len(series) == 0:
        raise ValueError("series is empty")
    if seg_len_s <= 0:
        raise ValueError("seg_len_s must be positive")
    onsets = series.onsets_s
    n_windows = int(np.floor(series.duration_s / seg_len_s + 1e-12))
    starts = np.arange(n_windows) * seg_len_s
    if n_windows == 0:
        return []
    bounds = np.searchsorted(onsets, np.append(starts, n_windows * seg_len_s), side="left")
    out = []
    for k in range(n_windows):
        lo, hi = bounds[k], bounds[k + 1]
        out.append(Segment(series.subject_id, k, float(starts[k]), float(seg_len_s),
                           onsets[lo:hi], series.rr_ms[lo:hi], series.annotations[lo:hi]))
    return out


def accept_segment(seg: Segment, gate: GateConfig = GateConfig()) -> tuple[bool, RejectionReason | None]:
    """Apply the ectopy/artifact rules, reporting the first one that fails.

    Durations are the summed ``rr_ms`` of non-Normal beats; a run is a maximal
    stretch of consecutive non-Normal beats regardless of E/A mix.
    """
    abnormal = ~seg.normal_mask
    dur_ms = np.where(abnormal, seg.rr_ms, 0.0)

    longest = 0.0
    run = 0.0
    for is_bad, d in zip(abnormal, dur_ms):
        run = run + d if is_bad else 0.0
        longest = max(longest, run)

    if longest >= gate.max_run_s * 1000.0:
        return False, RejectionReason.LONG_RUN
    if dur_ms.sum() >= gate.max_abnormal_fraction * seg.length_s * 1000.0:
        return False, RejectionReason.TOTAL_ABNORMAL
    if int(np.count_nonzero(~abnormal)) < gate.min_normal_beats:
        return False, RejectionReason.TOO_FEW_NORMALS
    return True, None


def gate(segments, gate_config: GateConfig = GateConfig()) -> list[Segment]:
    return [s.with_gate(*accept_segment(s, gate_config)) for s in segments]


def resample_segment(seg: Segment, fs_hz: float = FS_HZ) -> Tachogram:
    """Natural cubic spline through the Normal beats, sampled on an even grid.

    Knots are ``(onset, rr_ms)`` of Normal beats. Grid points outside the knot
    span take the value of the nearest knot.
    """
    if not seg.accepted:
        raise ValueError(f"segment {seg.index} of {seg.subject_id!r} was not accepted")
    mask = seg.normal_mask
    t, y = seg.onsets_s[mask], seg.rr_ms[mask]
    if len(t) < 2:
        raise ValueError("need at least two Normal beats to resample")
    n = int(round(seg.length_s * fs_hz))
    grid = seg.start_s + np.arange(n) / fs_hz
    spline = CubicSpline(t, y, bc_type="natural", extrapolate=False)
    out = spline(np.clip(grid, t[0], t[-1]))
    out[grid <= t[0]] = y[0]
    out[grid >= t[-1]] = y[-1]
    return Tachogram(out, fs_hz)


def preprocess_series(series: RRSeries, seg_len_s: float = SEGMENT_S,
                      gate_config: GateConfig = GateConfig(), fs_hz: float = FS_HZ):
    """Segment and gate ``series``; return ``(segments, [(segment, tachogram), ...])``."""
    segments = gate(segment_series(series, seg_len_s), gate_config)
    accepted = [(s, resample_segment(s, fs_hz)) for s in segments if s.accepted]
    return segments, accepted
