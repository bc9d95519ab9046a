import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihdhrv.hrv_features import loglog_slope, periodogram
from ihdhrv.preprocess import Tachogram, preprocess_series
from ihdhrv.rr_io import (BeatAnnotation, Label, RRFormatError, RRSeries, Sex,
                          format_rr_file, format_subject_meta, gen_constant_rr,
                          gen_modulated_rr, gen_powerlaw_series, gen_two_class_cohort,
                          parse_rr_file, parse_subject_meta)


def test_parse_two_normal_beats():
    s = parse_rr_file(b"rr_ms,annotation\n800,N\n820,N")
    assert s.beats == [(800.0, BeatAnnotation.NORMAL), (820.0, BeatAnnotation.NORMAL)]


def test_parse_maps_all_annotation_letters():
    s = parse_rr_file("rr_ms,annotation\n800,N\n700,E\n900,A\n")
    assert [a for _, a in s.beats] == [BeatAnnotation.NORMAL, BeatAnnotation.ECTOPIC,
                                       BeatAnnotation.ARTIFACT]


@pytest.mark.parametrize("text, line, fragment", [
    ("rr_ms,annotation\n800,X", 2, "unknown annotation"),
    ("rr_ms,annotation\n0,N", 2, "non-positive"),
    ("rr_ms,annotation\n800,N\n-5,N", 3, "non-positive"),
    ("rr_ms,annotation\n800,N\nabc,N", 3, "non-numeric"),
    ("rr,annotation\n800,N", 1, "header"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(RRFormatError) as exc:
        parse_rr_file(text.encode())
    assert exc.value.line == line
    assert fragment in str(exc.value)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(min_value=1e-3, max_value=5e3, allow_nan=False),
                          st.sampled_from("NEA")), min_size=1, max_size=50))
def test_rr_round_trip(beats):
    s = RRSeries("x", np.array([b[0] for b in beats]), np.array([b[1] for b in beats]))
    assert parse_rr_file(format_rr_file(s), "x") == s


def test_parse_subject_meta_single_row():
    (m,) = parse_subject_meta(b"subject_id,label,age_years,sex,lvef_percent\ns1,IHD,71,M,45")
    assert (m.subject_id, m.label, m.age_years, m.sex, m.lvef_percent) == ("s1", Label.IHD, 71, Sex.M, 45.0)


@pytest.mark.parametrize("rows", [
    "s1,IHD,71,M,120",
    "s1,IHD,71,M,45\ns1,Normal,50,F,60",
    "s1,Sick,71,M,45",
    "s1,IHD,71,X,45",
    "s1,IHD,-3,M,45",
])
def test_parse_subject_meta_rejects(rows):
    with pytest.raises(RRFormatError):
        parse_subject_meta(("subject_id,label,age_years,sex,lvef_percent\n" + rows).encode())


def test_meta_round_trip():
    text = b"subject_id,label,age_years,sex,lvef_percent\na,IHD,71,M,45.5\nb,Normal,40,F,60\n"
    assert format_subject_meta(parse_subject_meta(text)) == text


def test_gen_constant_rr():
    s = gen_constant_rr(800, 300)
    assert len(s) == 375 and np.all(s.rr_ms == 800) and np.all(s.normal_mask)
    assert len(gen_constant_rr(1000, 2)) == 2
    with pytest.raises(ValueError):
        gen_constant_rr(800, 0)


@pytest.mark.parametrize("rr, dur", [(800, 300), (1000, 2), (733.3, 61.7), (1234, 86400)])
def test_gen_constant_duration_within_one_beat(rr, dur):
    s = gen_constant_rr(rr, dur)
    assert dur * 1000 <= s.rr_ms.sum() < dur * 1000 + rr


def test_gen_modulated_zero_amplitude_is_constant():
    assert gen_modulated_rr(800, 0, 0.1, 300, 0) == gen_constant_rr(800, 300)


def test_gen_modulated_follows_onset_formula():
    s = gen_modulated_rr(800, 10, 0.1, 300, 0)
    expected = 800 + 10 * np.sin(2 * np.pi * 0.1 * s.onsets_s)
    assert np.allclose(s.rr_ms, expected, rtol=0, atol=1e-9)


def test_gen_modulated_peak_at_modulation_frequency():
    _, accepted = preprocess_series(gen_modulated_rr(800, 10, 0.1, 300, 0))
    psd = periodogram(accepted[0][1])
    assert psd.freqs_hz[np.argmax(psd.density)] == pytest.approx(0.1)


@pytest.mark.parametrize("args", [(800, 900, 0.1, 300, 0), (800, 10, 0.0, 300, 0),
                                  (800, 10, 1.0, 300, 0), (800, -1, 0.1, 300, 0)])
def test_gen_modulated_rejects(args):
    with pytest.raises(ValueError):
        gen_modulated_rr(*args)


@pytest.mark.parametrize("beta", [0, 1])
def test_powerlaw_fitted_slope(beta):
    x = gen_powerlaw_series(beta, 600, 1)
    assert abs(x.mean()) < 1e-12
    psd = periodogram(Tachogram(1000 + 50 * x, fs_hz=1.0))
    slope = loglog_slope(psd.freqs_hz[1:], psd.density[1:])
    assert slope == pytest.approx(-beta, abs=0.15)


def test_powerlaw_rejects_short():
    with pytest.raises(ValueError):
        gen_powerlaw_series(1, 32, 1)


def test_generators_are_deterministic():
    assert np.array_equal(gen_powerlaw_series(1, 600, 9), gen_powerlaw_series(1, 600, 9))
    assert gen_modulated_rr(800, 10, 0.1, 600, 4, noise_ms=5) == gen_modulated_rr(800, 10, 0.1, 600, 4, noise_ms=5)
    a, b = gen_two_class_cohort(10, 2, 3), gen_two_class_cohort(10, 2, 3)
    assert a[0] == b[0] and a[1] == b[1]


def test_cohort_shape_and_consistency():
    subjects, vectors = gen_two_class_cohort(8, 6, 7)
    assert len(subjects) == 16
    assert sum(s.label is Label.IHD for s in subjects) == 8
    for s, v in zip(subjects, vectors):
        assert len(v) == 18
        assert v["age"] == s.age_years and v["lvef"] == s.lvef_percent
        assert v["sex"] == (1.0 if s.sex is Sex.M else 0.0)
    with pytest.raises(ValueError):
        gen_two_class_cohort(2, 6, 7)
