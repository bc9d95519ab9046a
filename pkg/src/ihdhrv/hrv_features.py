"""Time-domain, spectral and non-linear HRV parameters.

Every variance-type statistic uses the population divisor. Ratios whose
denominator is zero, and fits with too few points, come back as ``None``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .feature_ids import HRV_FEATURES
from .preprocess import Tachogram
from .rr_io import RRFormatError

LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)
DEFAULT_KMAX = 16

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class TimeDomainFeatures:
    mean_rr: float
    sdnn: float
    rmssd: float
    nn50: int
    pnn50: float


@dataclass(frozen=True, eq=False)
class PSDEstimate:
    freqs_hz: np.ndarray
    density: np.ndarray
    df: float

    @property
    def nyquist(self) -> float:
        return float(self.freqs_hz[-1])


@dataclass(frozen=True)
class SpectralFeatures:
    lf: float
    hf: float
    lf_n: float | None
    hf_n: float | None
    lf_hf: float | None
    beta: float | None


@dataclass(frozen=True)
class FeatureConfig:
    lf_band: tuple = LF_BAND
    hf_band: tuple = HF_BAND
    beta_fit_lo_hz: float | None = None     # None -> one frequency bin
    beta_fit_hi_hz: float = HF_BAND[1]
    kmax: int = DEFAULT_KMAX


def time_domain(nn) -> TimeDomainFeatures:
    nn = np.asarray(nn, dtype=np.float64)
    if nn.size < 2:
        raise ValueError("time-domain features need at least 2 intervals")
    d = np.diff(nn)
    nn50 = int(np.count_nonzero(np.abs(d) > 50.0))
    return TimeDomainFeatures(
        mean_rr=float(nn.mean()),
        sdnn=float(nn.std()),
        rmssd=float(np.sqrt(np.mean(d * d))),
        nn50=nn50,
        pnn50=nn50 / nn.size,
    )


def periodogram(tach: Tachogram) -> PSDEstimate:
    """One-sided rectangular-window periodogram of the mean-removed tachogram.

    Scaled so that the density summed over the non-DC bins times ``df``
    equals the population variance of the input; the DC bin is zeroed.
    """
    x = tach.samples - tach.samples.mean()
    n = x.size
    spec = np.fft.rfft(x)
    power = (spec.real ** 2 + spec.imag ** 2) / (n * n)
    # fold the negative frequencies in; Nyquist exists only for even n
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    power[0] = 0.0
    df = tach.fs_hz / n
    freqs = np.arange(power.size) * df
    return PSDEstimate(freqs, power / df, df)


def _closes_upper(psd: PSDEstimate, hi_hz: float) -> bool:
    return math.isclose(hi_hz, HF_BAND[1]) or hi_hz >= psd.nyquist - _EDGE_TOL


def band_power(psd: PSDEstimate, lo_hz: float, hi_hz: float,
               include_upper: bool | None = None) -> float:
    """Integrated power over ``[lo_hz, hi_hz)``, never counting DC.

    The upper edge is included for the HF limit (0.40 Hz) and at Nyquist
    unless ``include_upper`` says otherwise.
    """
    if not 0.0 <= lo_hz < hi_hz:
        raise ValueError(f"invalid band [{lo_hz}, {hi_hz}]")
    if hi_hz > psd.nyquist + _EDGE_TOL:
        raise ValueError(f"band edge {hi_hz} Hz above Nyquist {psd.nyquist} Hz")
    if include_upper is None:
        include_upper = _closes_upper(psd, hi_hz)
    f = psd.freqs_hz
    sel = f >= lo_hz - _EDGE_TOL
    sel &= (f <= hi_hz + _EDGE_TOL) if include_upper else (f < hi_hz - _EDGE_TOL)
    sel[0] = False
    return float(np.sum(psd.density[sel]) * psd.df)


def total_power(psd: PSDEstimate) -> float:
    return float(np.sum(psd.density[1:]) * psd.df)


def loglog_slope(freqs, density) -> float | None:
    """OLS slope of ln(density) on ln(freq) over positive pairs; None if < 3 points."""
    freqs = np.asarray(freqs, dtype=np.float64)
    density = np.asarray(density, dtype=np.float64)
    ok = (freqs > 0) & (density > 0)
    if np.count_nonzero(ok) < 3:
        return None
    lx, ly = np.log(freqs[ok]), np.log(density[ok])
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def spectral_features(psd: PSDEstimate, fit_lo_hz: float | None = None,
                      fit_hi_hz: float = HF_BAND[1], lf_band=LF_BAND,
                      hf_band=HF_BAND) -> SpectralFeatures:
    if fit_lo_hz is None:
        fit_lo_hz = psd.df
    lf = band_power(psd, *lf_band)
    hf = band_power(psd, *hf_band, include_upper=True)
    tot = total_power(psd)
    f = psd.freqs_hz
    fit = (f >= fit_lo_hz - _EDGE_TOL) & (f <= fit_hi_hz + _EDGE_TOL)
    return SpectralFeatures(
        lf=lf,
        hf=hf,
        lf_n=lf / tot if tot > 0 else None,
        hf_n=hf / tot if tot > 0 else None,
        lf_hf=lf / hf if hf > 0 else None,
        beta=loglog_slope(f[fit], psd.density[fit]),
    )


def poincare(nn) -> tuple[float, float, float | None]:
    """SD1, SD2 and their ratio from the successive-pair scatter."""
    nn = np.asarray(nn, dtype=np.float64)
    if nn.size < 3:
        raise ValueError("Poincare features need at least 3 intervals")
    x, y = nn[:-1], nn[1:]
    sd1 = float(np.std((x - y) / math.sqrt(2.0)))
    sd2 = float(np.std((x + y) / math.sqrt(2.0)))
    return sd1, sd2, (sd1 / sd2 if sd2 > 0 else None)


def higuchi_curve_lengths(x, kmax: int = DEFAULT_KMAX) -> np.ndarray:
    """Mean normalized curve length L(k) for k = 1..kmax."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    out = np.empty(kmax)
    for k in range(1, kmax + 1):
        lengths = np.empty(k)
        for m in range(1, k + 1):
            # 1-based x(m), x(m+k), ... -> 0-based slice
            sub = x[m - 1::k]
            count = sub.size - 1        # floor((n - m) / k)
            lengths[m - 1] = np.abs(np.diff(sub)).sum() * (n - 1) / (count * k) / k
        out[k - 1] = lengths.mean()
    return out


def higuchi_fd(x, kmax: int = DEFAULT_KMAX) -> float | None:
    """Higuchi fractal dimension; None when the series has no variation."""
    x = np.asarray(x, dtype=np.float64)
    if kmax < 2:
        raise ValueError("kmax must be >= 2")
    if x.size < 4 * kmax:
        raise ValueError(f"series of {x.size} samples too short for kmax={kmax}")
    if np.all(np.diff(x) == 0):
        return None
    lk = higuchi_curve_lengths(x, kmax)
    if np.any(lk <= 0):
        return None
    lx = np.log(1.0 / np.arange(1, kmax + 1))
    ly = np.log(lk)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def segment_features(seg, tach: Tachogram, config: FeatureConfig = FeatureConfig()) -> dict:
    """All 15 HRV parameters for one accepted segment, keyed by feature id."""
    nn = seg.normal_rr
    td = time_domain(nn)
    sd1, sd2, ratio = poincare(nn)
    sf = spectral_features(periodogram(tach), config.beta_fit_lo_hz, config.beta_fit_hi_hz,
                           config.lf_band, config.hf_band)
    return {
        "meanRR": td.mean_rr,
        "SDNN": td.sdnn,
        "RMSSD": td.rmssd,
        "NN50": float(td.nn50),
        "pNN50": td.pnn50,
        "LF": sf.lf,
        "HF": sf.hf,
        "LFn": sf.lf_n,
        "HFn": sf.hf_n,
        "LF_HF": sf.lf_hf,
        "SD1": sd1,
        "SD2": sd2,
        "SD1_SD2": ratio,
        "FD": higuchi_fd(tach.samples, config.kmax),
        "beta": sf.beta,
    }


def aggregate_24h(fragments) -> dict:
    """Per-parameter mean over the segments where the parameter is defined."""
    fragments = list(fragments)
    if not fragments:
        raise ValueError("no accepted segments to aggregate")
    out = {}
    for name in HRV_FEATURES:
        vals = [f[name] for f in fragments if f.get(name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
    return out


FEATURE_TABLE_HEADER = ("subject_id",) + HRV_FEATURES


def format_feature_table(rows) -> bytes:
    """CSV with one row per ``(subject_id, features)``; undefined values are empty cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_TABLE_HEADER)
    for sid, feats in rows:
        w.writerow([sid] + ["" if feats.get(k) is None else repr(float(feats[k]))
                            for k in HRV_FEATURES])
    return buf.getvalue().encode("utf-8")


def parse_feature_table(data, source: str | None = None) -> dict:
    """Inverse of :func:`format_feature_table`: ``{subject_id: {feature: value | None}}``."""
    text = data.decode("utf-8-sig") if isinstance(data, (bytes, bytearray)) else data
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != FEATURE_TABLE_HEADER:
        raise RRFormatError("bad feature table header", 1, source)
    out = {}
    for row in reader:
        if not row:
            continue
        line = reader.line_num
        if len(row) != len(FEATURE_TABLE_HEADER):
            raise RRFormatError(f"expected {len(FEATURE_TABLE_HEADER)} fields", line, source)
        sid = row[0].strip()
        if not sid or sid in out:
            raise RRFormatError(f"empty or duplicate subject_id {sid!r}", line, source)
        feats = {}
        for name, cell in zip(HRV_FEATURES, row[1:]):
            cell = cell.strip()
            try:
                feats[name] = float(cell) if cell else None
            except ValueError:
                raise RRFormatError(f"non-numeric {name} {cell!r}", line, source) from None
        out[sid] = feats
    return out
