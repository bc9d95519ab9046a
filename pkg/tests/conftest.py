"""Shared builders for the test suite."""
import numpy as np
import pytest

from ihdhrv.preprocess import segment_series
from ihdhrv.rr_io import RRSeries

# lines appended by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def series_from_beats(beats, subject_id="t", fill_to_s=300.0, fill_rr=800.0):
    """RRSeries from ``[(rr_ms, code), ...]`` padded with Normal beats up to ``fill_to_s``."""
    beats = list(beats)
    total = sum(r for r, _ in beats)
    while total < fill_to_s * 1000.0:
        beats.append((fill_rr, "N"))
        total += fill_rr
    rr = np.array([r for r, _ in beats], dtype=float)
    codes = np.array([c for _, c in beats], dtype="<U1")
    return RRSeries(subject_id, rr, codes)


def single_segment(beats, **kw):
    segs = segment_series(series_from_beats(beats, **kw))
    assert len(segs) == 1
    return segs[0]


def scattered_artifacts(n, rr_art=1000.0, rr_norm=800.0):
    """``n`` isolated 1 s artifact beats, each followed by a Normal beat."""
    out = []
    for _ in range(n):
        out += [(rr_art, "A"), (rr_norm, "N")]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
