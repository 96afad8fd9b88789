"""Beat detection, per-beat MAP, sustained event periods and horizon-aligned datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.signal import peak_prominences

from .errors import InsufficientBeatsError
from .rng import Xoshiro256, mix_seed
from .signal_io import (
    CHANNELS,
    TARGET_HZ,
    Segment,
    WaveformCase,
    channel_matrix,
    resample_case,
    validate_segment,
)

HYPO_MAP = 65.0
NONHYPO_MAP = 75.0
MIN_EVENT_S = 60.0
HORIZONS = (3, 5, 10, 15)


@dataclass(frozen=True)
class PeakParams:
    min_height: float | None = None
    min_prominence: float = 0.0
    min_distance_s: float = 0.3

    def __post_init__(self):
        if self.min_distance_s <= 0:
            raise ValueError("min_distance_s must be positive")


# ECG height is relative to the segment maximum; PPG/CO2 prominence to the range.
DEFAULT_PEAKS = {
    "ABP": PeakParams(40.0, 10.0, 0.3),
    "ECG": PeakParams(0.3, 0.3, 0.3),
    "PPG": PeakParams(None, 0.1, 0.3),
    "CO2": PeakParams(None, 0.1, 0.3),
}


def channel_peak_params(name: str, x: np.ndarray, base: PeakParams | None = None) -> PeakParams:
    """Resolve the relative defaults for ``name`` against the signal ``x``."""
    p = base or DEFAULT_PEAKS[name]
    if base is not None or name == "ABP":
        return p
    if name == "ECG":
        return PeakParams(p.min_height * float(np.max(x)), p.min_prominence, p.min_distance_s)
    return PeakParams(None, p.min_prominence * float(np.ptp(x)), p.min_distance_s)


def detect_peaks(x: np.ndarray, p: PeakParams, fs: float = TARGET_HZ) -> np.ndarray:
    """Strict local maxima passing height and prominence, thinned by distance.

    When two candidates are closer than ``min_distance_s`` the higher one wins;
    equal heights keep the earlier index.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        return np.zeros(0, dtype=np.int64)
    mid = x[1:-1]
    cand = np.flatnonzero((mid > x[:-2]) & (mid > x[2:])) + 1
    if p.min_height is not None:
        cand = cand[x[cand] >= p.min_height]
    if len(cand) and p.min_prominence > 0:
        prom = peak_prominences(x, cand)[0]
        cand = cand[prom >= p.min_prominence]
    if len(cand) < 2:
        return cand.astype(np.int64)

    dist = p.min_distance_s * fs
    # priority: height descending, then index ascending
    order = np.lexsort((cand, -x[cand]))
    keep = np.ones(len(cand), dtype=bool)
    for j in order:
        if not keep[j]:
            continue
        k = j - 1
        while k >= 0 and cand[j] - cand[k] < dist:
            keep[k] = False
            k -= 1
        k = j + 1
        while k < len(cand) and cand[k] - cand[j] < dist:
            keep[k] = False
            k += 1
    return cand[keep].astype(np.int64)


@dataclass
class BeatSeries:
    beat_times_s: np.ndarray
    sbp: np.ndarray
    dbp: np.ndarray
    map: np.ndarray

    def __len__(self) -> int:
        return len(self.beat_times_s)


def beats_to_map(abp: np.ndarray, peaks: np.ndarray, fs: float = TARGET_HZ) -> BeatSeries:
    """One beat per consecutive peak pair, over the half-open cycle [p_k, p_k+1)."""
    peaks = np.asarray(peaks, dtype=np.int64)
    if len(peaks) < 2:
        raise InsufficientBeatsError(f"need at least 2 peaks, got {len(peaks)}")
    abp = np.asarray(abp, dtype=np.float64)
    starts = peaks[:-1]
    sbp = np.maximum.reduceat(abp[: peaks[-1]], starts)
    dbp = np.minimum.reduceat(abp[: peaks[-1]], starts)
    mean = dbp + (sbp - dbp) / 3.0
    return BeatSeries(starts / fs, sbp, dbp, mean)


@dataclass(frozen=True)
class EventPeriod:
    kind: str  # "hypotension" | "nonhypotension" | "gray"
    start_s: float
    end_s: float


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive index ranges of consecutive True entries."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(a, b - 1) for a, b in zip(edges[::2], edges[1::2])]


def find_events(
    beats: BeatSeries,
    hypo_below: float = HYPO_MAP,
    nonhypo_above: float = NONHYPO_MAP,
    min_duration_s: float = MIN_EVENT_S,
) -> list[EventPeriod]:
    """Partition [first beat, last beat] into hypotension, nonhypotension and gray periods."""
    t = np.asarray(beats.beat_times_s, dtype=np.float64)
    if len(t) == 0:
        return []
    solid = []
    for kind, mask in (
        ("hypotension", beats.map < hypo_below),
        ("nonhypotension", beats.map > nonhypo_above),
    ):
        for a, b in _runs(mask):
            if t[b] - t[a] >= min_duration_s:
                solid.append(EventPeriod(kind, float(t[a]), float(t[b])))
    solid.sort(key=lambda e: e.start_s)

    out: list[EventPeriod] = []
    cursor = float(t[0])
    for ev in solid:
        if ev.start_s > cursor:
            out.append(EventPeriod("gray", cursor, ev.start_s))
        out.append(ev)
        cursor = ev.end_s
    if cursor < t[-1]:
        out.append(EventPeriod("gray", cursor, float(t[-1])))
    return out


def case_events(
    case: WaveformCase, peak_params: PeakParams | None = None
) -> tuple[BeatSeries, list[EventPeriod]]:
    """Beats and event periods of a 100 Hz case from its ABP channel."""
    abp = case.channels["ABP"].samples
    peaks = detect_peaks(abp, peak_params or DEFAULT_PEAKS["ABP"])
    if len(peaks) < 2:
        return BeatSeries(*(np.zeros(0),) * 4), []
    beats = beats_to_map(abp, peaks)
    return beats, find_events(beats)


# ---------------------------------------------------------------- datasets


@dataclass
class DatasetSplit:
    segments: list[Segment]
    split: str
    horizon_min: int
    seed: int


def _window(X: np.ndarray, start_s: float, window_s: float) -> tuple[np.ndarray, float] | None:
    a = round(start_s * TARGET_HZ)
    b = a + round(window_s * TARGET_HZ)
    if a < 0 or b > X.shape[1]:
        return None
    return X[:, a:b].copy(), a / TARGET_HZ


def _check(seg: Segment, peak_params: PeakParams) -> bool:
    peaks = detect_peaks(seg.data[0], peak_params)
    return validate_segment(seg, peaks, min_peaks=max(2, min(5, round(seg.T / TARGET_HZ / 6)))).accepted


def build_dataset(
    case: WaveformCase,
    horizons: Iterable[int] = HORIZONS,
    seed: int = 0,
    window_s: float = 30.0,
    neg_stride_s: float = 30.0,
    channels: Sequence[str] = CHANNELS,
    peak_params: PeakParams | None = None,
    negatives_per_event: int = 2,
) -> dict[int, list[Segment]]:
    """Labeled windows per prediction horizon for one case.

    Positive: the window ending ``h`` minutes before a hypotension onset.
    Negatives: windows (on a ``neg_stride_s`` grid) whose end lies ``h``
    minutes before a time strictly inside a nonhypotension period, sampled
    without replacement, at most ``negatives_per_event`` per emitted positive
    (or per case when there is none).  Windows failing validation are skipped.
    ABP must be the first entry of ``channels``.
    """
    if channels[0] != "ABP":
        raise ValueError("ABP must be the first channel")
    if any(ch.sample_rate_hz != TARGET_HZ for ch in case.channels.values()):
        case = resample_case(case)
    pp = peak_params or DEFAULT_PEAKS["ABP"]
    _, events = case_events(case, pp)
    X = channel_matrix(case, channels)
    duration = (X.shape[1] - 1) / TARGET_HZ
    onsets = [e.start_s for e in events if e.kind == "hypotension"]
    calm = [e for e in events if e.kind == "nonhypotension"]

    out: dict[int, list[Segment]] = {}
    for h in horizons:
        lead = h * 60.0
        positives = []
        for o in onsets:
            start = o - lead - window_s
            win = _window(X, start, window_s)
            if win is None:
                continue
            seg = Segment(win[0], win[1], case.case_id, 1, h)
            if _check(seg, pp):
                positives.append(seg)

        ends = np.arange(window_s, duration + 1e-9, neg_stride_s)
        targets = ends + lead
        ok = np.zeros(len(ends), dtype=bool)
        for e in calm:
            ok |= (targets > e.start_s) & (targets < e.end_s)
        cand_ends = ends[ok]
        quota = negatives_per_event * max(len(positives), 1)
        rng = Xoshiro256(mix_seed(seed, case.case_id, h))
        negatives = []
        for idx in rng.permutation(len(cand_ends)):
            if len(negatives) >= quota:
                break
            start = float(cand_ends[idx]) - window_s
            win = _window(X, start, window_s)
            if win is None:
                continue
            seg = Segment(win[0], win[1], case.case_id, 0, h)
            if _check(seg, pp):
                negatives.append(seg)
        negatives.sort(key=lambda s: s.t_start)
        out[h] = positives + negatives
    return out


def assign_splits(
    case_ids: Iterable[str],
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> dict[str, str]:
    """Deterministic case-level train/dev/test assignment."""
    ids = sorted(set(case_ids))
    order = Xoshiro256(mix_seed(seed, "splits")).permutation(len(ids))
    n_train = round(fractions[0] * len(ids))
    n_dev = round(fractions[1] * len(ids))
    out = {}
    for rank, i in enumerate(order):
        out[ids[i]] = "train" if rank < n_train else "dev" if rank < n_train + n_dev else "test"
    return out
