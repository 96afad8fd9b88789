import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safdnet.errors import FormatError, MissingChannelError, UpsamplingError
from safdnet.labeling import DEFAULT_PEAKS, PeakParams, detect_peaks
from safdnet.signal_io import (
    CHANNELS, Channel, Segment, WaveformCase, load_case, read_archive, resample, save_case,
    segment_case, stack, validate_segment, window_bounds, write_archive,
)
from safdnet.synthgen import SynthParams, gen_case


def _write_dir(path, frame, rates, units=None):
    path.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path / "waveform.csv", index=False)
    manifest = {"case_id": path.name, "sample_rate_hz": rates}
    if units:
        manifest["units"] = units
    (path / "manifest.json").write_text(json.dumps(manifest))


def _frame(n, rate, cols=CHANNELS):
    t = np.arange(n) / rate
    return pd.DataFrame({"time_s": t, **{c: np.sin(t + i) + (80 if c == "ABP" else 0) for i, c in enumerate(cols)}})


def test_load_valid_case(tmp_path):
    _write_dir(tmp_path / "c1", _frame(500, 100), {c: 100 for c in CHANNELS})
    case = load_case(tmp_path / "c1")
    assert set(case.channels) == set(CHANNELS)
    assert case.case_id == "c1"


def test_missing_channel_named(tmp_path):
    cols = ("ABP", "ECG", "PPG")
    _write_dir(tmp_path / "c", _frame(200, 100, cols), {c: 100 for c in cols})
    with pytest.raises(MissingChannelError, match="CO2"):
        load_case(tmp_path / "c")


def test_non_monotone_time(tmp_path):
    f = _frame(200, 100)
    f.loc[50, "time_s"] = f.loc[49, "time_s"]
    _write_dir(tmp_path / "c", f, {c: 100 for c in CHANNELS})
    with pytest.raises(FormatError):
        load_case(tmp_path / "c")


def test_missing_values_rejected(tmp_path):
    f = _frame(200, 100)
    f.loc[10, "ECG"] = np.nan
    _write_dir(tmp_path / "c", f, {c: 100 for c in CHANNELS})
    with pytest.raises(FormatError):
        load_case(tmp_path / "c")


def test_row_count_at_500hz(tmp_path):
    n = 150_000
    f = pd.DataFrame({"time_s": np.linspace(0, 300, n), **{c: np.full(n, 80.0) for c in CHANNELS}})
    _write_dir(tmp_path / "c", f, {c: 500 for c in CHANNELS})
    case = load_case(tmp_path / "c")
    assert all(len(ch.samples) == n for ch in case.channels.values())


def test_abp_units_enforced():
    with pytest.raises(FormatError):
        WaveformCase("x", {"ABP": Channel(100.0, np.ones(10), "kPa")})
    with pytest.raises(FormatError):
        WaveformCase("x", {"ABP": Channel(20.0, np.ones(10), "mmHg")})


def test_save_load_round_trip(tmp_path):
    case = gen_case(SynthParams(duration_s=120, n_events=0, seed=3))
    save_case(case, tmp_path / "c")
    back = load_case(tmp_path / "c")
    for name in CHANNELS:
        assert np.abs(back.channels[name].samples - case.channels[name].samples).max() < 1e-6


# ---------------------------------------------------------------- resampling


def test_identity_rate_is_bitwise():
    x = np.random.default_rng(0).standard_normal(1000)
    out = resample(Channel(100.0, x))
    assert np.array_equal(out.samples, x) and out.samples is not x


def test_linear_ramp_exact():
    x = np.linspace(0, 1, 501)
    out = resample(Channel(500.0, x))
    assert len(out.samples) == 101
    assert np.abs(out.samples - np.linspace(0, 1, 101)).max() < 1e-12


def test_sine_500hz():
    t = np.arange(5001) / 500
    out = resample(Channel(500.0, np.sin(2 * np.pi * t)))
    tq = np.arange(len(out.samples)) / 100
    assert len(out.samples) == 1001
    assert np.abs(out.samples - np.sin(2 * np.pi * tq)).max() < 2e-3


def test_upsampling_refused():
    with pytest.raises(UpsamplingError):
        resample(Channel(50.0, np.ones(10)))


@given(st.floats(100, 1000), st.integers(2, 3000), st.integers(0, 2**31))
def test_resample_bounds_and_length(rate, n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    out = resample(Channel(rate, x))
    duration = (n - 1) / rate
    assert len(out.samples) == int(np.floor(duration * 100 + 1e-9)) + 1
    assert out.samples.min() >= x.min() - 1e-12 and out.samples.max() <= x.max() + 1e-12


@given(st.floats(-1e3, 1e3), st.floats(100, 1000))
def test_resample_preserves_constants(c, rate):
    out = resample(Channel(rate, np.full(777, c)))
    assert np.all(out.samples == c)


# ---------------------------------------------------------------- segmentation


def _flat_case(seconds):
    n = int(seconds * 100)
    return WaveformCase("c", {c: Channel(100.0, np.arange(n, dtype=float), "mmHg" if c == "ABP" else "") for c in CHANNELS})


@pytest.mark.parametrize("seconds,count", [(300, 10), (29, 0), (95, 3)])
def test_segment_counts(seconds, count):
    segs = segment_case(_flat_case(seconds))
    assert len(segs) == count
    assert [s.t_start for s in segs] == [30.0 * k for k in range(count)]
    assert all(s.data.shape == (4, 3000) for s in segs)


@given(st.integers(0, 20_000), st.sampled_from([5.0, 10.0, 30.0]))
def test_windows_tile_prefix(n, window_s):
    b = window_bounds(n, window_s, window_s)
    W = round(window_s * 100)
    assert [x for ab in b for x in range(*ab)] == list(range(len(b) * W))
    assert len(b) == (n // W if n >= W else 0)


# ---------------------------------------------------------------- validation


def _abp_segment(map_=90.0, pp=40.0, hr=75.0, seconds=30):
    t = np.arange(seconds * 100) / 100
    abp = map_ + pp * (np.cos(2 * np.pi * hr / 60 * t) * 0.5 + 1 / 6)
    data = np.vstack([abp, np.zeros((3, len(t)))])
    return Segment(data, 0.0, "c")


def test_clean_segment_accepted():
    seg = _abp_segment()
    assert validate_segment(seg, detect_peaks(seg.data[0], DEFAULT_PEAKS["ABP"])).accepted


def test_low_map_rejected():
    seg = _abp_segment(map_=15.0, pp=40.0)
    peaks = detect_peaks(seg.data[0], PeakParams(None, 10, 0.3))
    v = validate_segment(seg, peaks)
    assert not v.accepted and v.reason == "MAP<20"


def test_high_map_rejected():
    seg = _abp_segment(map_=170.0)
    v = validate_segment(seg, detect_peaks(seg.data[0], DEFAULT_PEAKS["ABP"]))
    assert v.reason == "MAP>160"


def test_flatline_rejected():
    seg = Segment(np.full((4, 3000), 80.0), 0.0, "c")
    v = validate_segment(seg, {"ABP": detect_peaks(seg.data[0], DEFAULT_PEAKS["ABP"])})
    assert v == validate_segment(seg, np.zeros(0, dtype=int))
    assert not v.accepted and v.reason == "undetectable rhythm"


@pytest.mark.parametrize("hr,reason", [(20.0, "HR too slow"), (200.0, "HR too fast")])
def test_heart_rate_band(hr, reason):
    seg = _abp_segment(hr=hr)
    peaks = np.arange(0, 3000, int(round(6000 / hr)))
    assert validate_segment(seg, peaks).reason == reason


def test_validation_does_not_mutate():
    seg = _abp_segment()
    before = seg.data.copy()
    validate_segment(seg, detect_peaks(seg.data[0], DEFAULT_PEAKS["ABP"]))
    assert np.array_equal(before, seg.data)


# ---------------------------------------------------------------- archive


def test_archive_round_trip(tmp_path):
    r = np.random.default_rng(0)
    segs = [Segment(r.standard_normal((4, 50)).astype(np.float32).astype(float), 12.5 * i, f"case-é{i}", i % 2, 5)
            for i in range(3)]
    segs.append(Segment(np.zeros((4, 50)), 1.0, "u", 255, 0))
    write_archive(tmp_path / "a.safd", segs)
    back = read_archive(tmp_path / "a.safd", {"case-é0": "train"})
    assert [(s.case_id, s.label, s.horizon_min, s.t_start) for s in back] == \
           [(s.case_id, s.label, s.horizon_min, s.t_start) for s in segs]
    assert all(np.array_equal(a.data, b.data) for a, b in zip(segs, back))
    assert back[0].split == "train" and back[1].split is None


def test_archive_header_layout(tmp_path):
    write_archive(tmp_path / "a.safd", [Segment(np.ones((1, 3)), 2.0, "ab", 1, 15)])
    blob = (tmp_path / "a.safd").read_bytes()
    assert blob[:4] == b"SAFD"
    assert np.frombuffer(blob[4:20], "<u4").tolist() == [1, 1, 1, 3]
    assert np.frombuffer(blob[20:32], "<f4").tolist() == [1.0, 1.0, 1.0]
    assert blob[32] == 1 and int.from_bytes(blob[33:35], "little") == 15
    assert int.from_bytes(blob[35:39], "little") == 2 and blob[39:41] == b"ab"
    assert np.frombuffer(blob[41:49], "<f8")[0] == 2.0 and len(blob) == 49


@pytest.mark.parametrize("cut", [3, 30, 45])
def test_truncated_archive(tmp_path, cut):
    write_archive(tmp_path / "a.safd", [Segment(np.ones((1, 3)), 2.0, "ab", 1, 15)])
    blob = (tmp_path / "a.safd").read_bytes()
    (tmp_path / "b.safd").write_bytes(blob[:cut])
    with pytest.raises(FormatError):
        read_archive(tmp_path / "b.safd")


def test_stack_shapes():
    X, y = stack([Segment(np.ones((4, 10)), 0, "a", 1), Segment(np.zeros((4, 10)), 0, "a", 0)])
    assert X.shape == (2, 4, 10) and y.tolist() == [1, 0]
