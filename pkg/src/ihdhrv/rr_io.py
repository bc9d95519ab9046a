"""Annotated RR-interval files, subject metadata, and synthetic generators.

RR files are UTF-8 CSV with the header ``rr_ms,annotation`` and one beat per
row; annotations are ``N`` (normal), ``E`` (ectopic) or ``A`` (artifact).
Subject metadata files use ``subject_id,label,age_years,sex,lvef_percent``.

Every generator draws from ``numpy.random.Generator(PCG64(seed))`` so output
is bitwise reproducible across platforms for a given seed.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .feature_ids import FEATURE_IDS, HRV_FEATURES

RR_HEADER = ("rr_ms", "annotation")
META_HEADER = ("subject_id", "label", "age_years", "sex", "lvef_percent")


class BeatAnnotation(Enum):
    NORMAL = "N"
    ECTOPIC = "E"
    ARTIFACT = "A"


class Label(Enum):
    IHD = "IHD"
    NORMAL = "Normal"


class Sex(Enum):
    M = "M"
    F = "F"


class RRFormatError(ValueError):
    """Malformed RR or metadata file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class RRSeries:
    """Ordered beats of one subject.

    ``rr_ms`` holds the intervals in milliseconds and ``annotations`` the
    matching one-letter codes. Beat ``n`` starts at the sum of the intervals
    before it, so the first beat has onset 0.
    """

    subject_id: str
    rr_ms: np.ndarray
    annotations: np.ndarray

    def __post_init__(self):
        rr = np.array(self.rr_ms, dtype=np.float64)
        ann = np.array([a.value if isinstance(a, BeatAnnotation) else a
                        for a in self.annotations], dtype="<U1")
        if rr.ndim != 1 or rr.shape != ann.shape:
            raise ValueError("rr_ms and annotations must be 1-D and equally long")
        if not np.all(np.isfinite(rr)) or np.any(rr <= 0):
            raise ValueError("every rr_ms must be finite and > 0")
        valid = {a.value for a in BeatAnnotation}
        bad = set(ann.tolist()) - valid
        if bad:
            raise ValueError(f"unknown annotation codes {sorted(bad)}")
        rr.setflags(write=False)
        ann.setflags(write=False)
        object.__setattr__(self, "rr_ms", rr)
        object.__setattr__(self, "annotations", ann)

    def __len__(self) -> int:
        return len(self.rr_ms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RRSeries):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and np.array_equal(self.rr_ms, other.rr_ms)
                and np.array_equal(self.annotations, other.annotations))

    @property
    def beats(self) -> list[tuple[float, BeatAnnotation]]:
        return [(float(r), BeatAnnotation(a)) for r, a in zip(self.rr_ms, self.annotations)]

    @property
    def onsets_s(self) -> np.ndarray:
        """Onset time of each beat in seconds."""
        edges = np.concatenate(([0.0], np.cumsum(self.rr_ms)[:-1]))
        return edges / 1000.0

    @property
    def duration_s(self) -> float:
        return float(np.sum(self.rr_ms)) / 1000.0

    @property
    def normal_mask(self) -> np.ndarray:
        return self.annotations == BeatAnnotation.NORMAL.value


@dataclass(frozen=True)
class SubjectMeta:
    subject_id: str
    label: Label
    age_years: int
    sex: Sex
    lvef_percent: float

    def __post_init__(self):
        if not self.subject_id:
            raise ValueError("subject_id must be non-empty")
        if self.age_years < 0:
            raise ValueError("age_years must be non-negative")
        if not 0.0 <= self.lvef_percent <= 100.0:
            raise ValueError(f"lvef_percent {self.lvef_percent} outside [0, 100]")


def _text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return bytes(data).decode("utf-8-sig")
    return data


def _rows(text: str, header: tuple, source):
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise RRFormatError("empty file, header missing", 1, source) from None
    if tuple(c.strip() for c in first) != header:
        raise RRFormatError(f"expected header {','.join(header)!r}, got {','.join(first)!r}",
                            1, source)
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise RRFormatError(f"expected {len(header)} fields, got {len(row)}",
                                reader.line_num, source)
        yield reader.line_num, [c.strip() for c in row]


def parse_rr_file(data, subject_id: str = "", source: str | None = None) -> RRSeries:
    """Parse an RR CSV (bytes or str) into an :class:`RRSeries`."""
    rr, ann = [], []
    codes = {a.value for a in BeatAnnotation}
    for line, (value, code) in _rows(_text(data), RR_HEADER, source):
        try:
            x = float(value)
        except ValueError:
            raise RRFormatError(f"non-numeric rr_ms {value!r}", line, source) from None
        if not math.isfinite(x):
            raise RRFormatError(f"non-finite rr_ms {value!r}", line, source)
        if x <= 0:
            raise RRFormatError(f"non-positive interval {value!r}", line, source)
        if code not in codes:
            raise RRFormatError(f"unknown annotation {code!r}", line, source)
        rr.append(x)
        ann.append(code)
    if not rr:
        raise RRFormatError("file holds no beats", None, source)
    return RRSeries(subject_id, np.array(rr), np.array(ann, dtype="<U1"))


def _fmt(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_rr_file(series: RRSeries) -> bytes:
    lines = [",".join(RR_HEADER)]
    lines += [f"{_fmt(r)},{a}" for r, a in zip(series.rr_ms, series.annotations)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_subject_meta(data, source: str | None = None) -> list[SubjectMeta]:
    out: list[SubjectMeta] = []
    seen: set[str] = set()
    for line, (sid, label, age, sex, lvef) in _rows(_text(data), META_HEADER, source):
        if not sid:
            raise RRFormatError("empty subject_id", line, source)
        if sid in seen:
            raise RRFormatError(f"duplicate subject_id {sid!r}", line, source)
        try:
            lab = Label(label)
        except ValueError:
            raise RRFormatError(f"unknown label {label!r}", line, source) from None
        try:
            sx = Sex(sex)
        except ValueError:
            raise RRFormatError(f"unknown sex {sex!r}", line, source) from None
        try:
            age_i = int(age)
        except ValueError:
            raise RRFormatError(f"age_years {age!r} is not an integer", line, source) from None
        if age_i < 0:
            raise RRFormatError(f"negative age_years {age!r}", line, source)
        try:
            lvef_f = float(lvef)
        except ValueError:
            raise RRFormatError(f"non-numeric lvef_percent {lvef!r}", line, source) from None
        if not 0.0 <= lvef_f <= 100.0:
            raise RRFormatError(f"lvef_percent {lvef!r} outside [0, 100]", line, source)
        seen.add(sid)
        out.append(SubjectMeta(sid, lab, age_i, sx, lvef_f))
    return out


def format_subject_meta(subjects) -> bytes:
    lines = [",".join(META_HEADER)]
    for s in subjects:
        lines.append(f"{s.subject_id},{s.label.value},{s.age_years},{s.sex.value},"
                     f"{_fmt(s.lvef_percent)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def gen_constant_rr(rr_ms: float, duration_s: float, subject_id: str = "synthetic") -> RRSeries:
    """Identical Normal beats whose total duration first reaches ``duration_s``."""
    if rr_ms <= 0 or duration_s <= 0:
        raise ValueError("rr_ms and duration_s must be positive")
    n = max(1, math.ceil(duration_s * 1000.0 / rr_ms))
    if (n - 1) * rr_ms >= duration_s * 1000.0:
        n -= 1
    return RRSeries(subject_id, np.full(n, float(rr_ms)), np.full(n, "N", dtype="<U1"))


def gen_modulated_rr(base_ms: float, mod_amp_ms: float, mod_freq_hz: float,
                     duration_s: float, seed: int = 0, noise_ms: float = 0.0,
                     subject_id: str = "synthetic") -> RRSeries:
    """Sinusoidally modulated Normal beats.

    Beat ``n`` has ``base_ms + mod_amp_ms * sin(2*pi*mod_freq_hz*t_n)`` where
    ``t_n`` is its onset in seconds. ``noise_ms`` adds seeded Gaussian jitter
    (zero by default, in which case ``seed`` has no effect).
    """
    if not base_ms > mod_amp_ms >= 0:
        raise ValueError("require base_ms > mod_amp_ms >= 0")
    if not 0 < mod_freq_hz < 1:
        raise ValueError("require 0 < mod_freq_hz < 1")
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if noise_ms < 0 or base_ms - mod_amp_ms - 6.0 * noise_ms <= 0:
        raise ValueError("noise_ms must be >= 0 and small enough to keep intervals positive")
    rng = rng_from_seed(seed) if noise_ms > 0 else None
    total_ms = duration_s * 1000.0
    t = 0.0
    rr = []
    while t < total_ms:
        x = base_ms + mod_amp_ms * math.sin(2.0 * math.pi * mod_freq_hz * t / 1000.0)
        if rng is not None:
            x += noise_ms * rng.standard_normal()
        rr.append(x)
        t += x
    return RRSeries(subject_id, np.array(rr), np.full(len(rr), "N", dtype="<U1"))


def gen_powerlaw_series(beta_target: float, n: int, seed: int) -> np.ndarray:
    """Zero-mean, unit-variance series with spectrum proportional to f**-beta_target.

    White Gaussian noise is shaped in the frequency domain by ``f**(-beta/2)``.
    """
    if n < 64:
        raise ValueError("n must be >= 64")
    white = rng_from_seed(seed).standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n)
    spec[0] = 0.0
    spec[1:] *= f[1:] ** (-beta_target / 2.0)
    x = np.fft.irfft(spec, n)
    x -= x.mean()
    return x / x.std()


# (center, scale) per feature; realism is not a goal, only plausible magnitudes
_COHORT_PROFILE = {
    "meanRR": (850.0, 100.0),
    "SDNN": (60.0, 15.0),
    "RMSSD": (30.0, 10.0),
    "NN50": (40.0, 15.0),
    "pNN50": (0.12, 0.04),
    "LF": (600.0, 150.0),
    "HF": (300.0, 80.0),
    "LFn": (0.30, 0.06),
    "HFn": (0.15, 0.04),
    "LF_HF": (2.5, 0.6),
    "SD1": (21.0, 7.0),
    "SD2": (80.0, 20.0),
    "SD1_SD2": (0.25, 0.06),
    "FD": (1.6, 0.08),
    "beta": (-1.2, 0.25),
    "age": (60.0, 12.0),
    "lvef": (55.0, 7.0),
    "sex": (0.0, 1.0),
}

DEFAULT_SIGNAL_FEATURES = ("SDNN", "pNN50", "beta", "SD2")


def gen_two_class_cohort(n_per_class: int, separation: float, seed: int,
                         signal_features=DEFAULT_SIGNAL_FEATURES):
    """Two Gaussian clouds, IHD shifted by ``separation`` SDs on ``signal_features``.

    Returns ``(subjects, feature_vectors)``; the vectors are dicts over all 18
    feature ids and agree with the metadata on age, sex and lvef.
    """
    if n_per_class < 4:
        raise ValueError("n_per_class must be >= 4")
    signal = set(signal_features)
    unknown = signal - set(FEATURE_IDS)
    if unknown:
        raise ValueError(f"unknown signal features {sorted(unknown)}")
    rng = rng_from_seed(seed)
    n = 2 * n_per_class
    z = rng.standard_normal((n, len(FEATURE_IDS)))
    width = len(str(n))
    subjects, vectors = [], []
    for i in range(n):
        label = Label.IHD if i < n_per_class else Label.NORMAL
        shift = separation if label is Label.IHD else 0.0
        fv = {}
        for j, name in enumerate(FEATURE_IDS):
            center, scale = _COHORT_PROFILE[name]
            zz = z[i, j] + (shift if name in signal else 0.0)
            fv[name] = center + scale * zz
        age = max(0, int(round(fv["age"])))
        sex = Sex.M if fv["sex"] > 0 else Sex.F
        lvef = min(100.0, max(0.0, fv["lvef"]))
        fv["age"], fv["sex"], fv["lvef"] = float(age), 1.0 if sex is Sex.M else 0.0, lvef
        sid = f"s{i + 1:0{width}d}"
        subjects.append(SubjectMeta(sid, label, age, sex, lvef))
        vectors.append(fv)
    return subjects, vectors


def hrv_part(fv: dict) -> dict:
    return {k: fv[k] for k in HRV_FEATURES}
