"""Waveform cases on disk, resampling, fixed-length segmentation and the segment archive."""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import FormatError, MissingChannelError, UpsamplingError

CHANNELS = ("ABP", "ECG", "PPG", "CO2")
TARGET_HZ = 100.0
DEFAULT_UNITS = {"ABP": "mmHg", "ECG": "mV", "PPG": "au", "CO2": "mmHg"}

UNLABELED = 255
ARCHIVE_MAGIC = b"SAFD"
ARCHIVE_VERSION = 1


@dataclass
class Channel:
    sample_rate_hz: float
    samples: np.ndarray
    units: str = ""

    @property
    def duration_s(self) -> float:
        return (len(self.samples) - 1) / self.sample_rate_hz


@dataclass
class WaveformCase:
    case_id: str
    channels: dict[str, Channel]
    event_truth: list[float] | None = None

    def __post_init__(self):
        for name, ch in self.channels.items():
            if len(ch.samples) == 0:
                raise FormatError(f"{self.case_id}: channel {name} is empty")
            if not 50.0 <= ch.sample_rate_hz <= 1000.0:
                raise FormatError(
                    f"{self.case_id}: {name} sample rate {ch.sample_rate_hz} Hz outside [50, 1000]"
                )
        abp = self.channels.get("ABP")
        if abp is not None and abp.units and abp.units != "mmHg":
            raise FormatError(f"{self.case_id}: ABP units must be mmHg, got {abp.units!r}")


@dataclass
class Segment:
    data: np.ndarray  # (C, T)
    t_start: float
    case_id: str
    label: int = UNLABELED
    horizon_min: int = 0
    rejected_reason: str | None = None
    split: str | None = None

    @property
    def T(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------- case files


def load_case(path: str | os.PathLike, channels: Sequence[str] = CHANNELS) -> WaveformCase:
    """Read ``manifest.json`` + ``waveform.csv`` from a case directory.

    All channels of one CSV share its time column, so every manifest rate has
    to agree with the row spacing.
    """
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}/manifest.json: {exc}") from exc
    csv_path = path / "waveform.csv"
    if not csv_path.exists():
        raise FormatError(f"{path}: no waveform.csv")
    frame = pd.read_csv(csv_path, encoding="utf-8")
    if "time_s" not in frame.columns:
        raise FormatError(f"{csv_path}: header lacks time_s")
    for name in channels:
        if name not in frame.columns:
            raise MissingChannelError(name, str(csv_path))
        if name not in manifest.get("sample_rate_hz", {}):
            raise MissingChannelError(name, str(path / "manifest.json"))
    if frame.isna().any().any():
        raise FormatError(f"{csv_path}: missing values")
    try:
        numeric = frame[["time_s", *channels]].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{csv_path}: non-numeric entry ({exc})") from exc
    t = numeric[:, 0]
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise FormatError(f"{csv_path}: time_s is not strictly increasing")
    row_rate = (len(t) - 1) / (t[-1] - t[0])

    units = manifest.get("units", {})
    out = {}
    for j, name in enumerate(channels, start=1):
        rate = float(manifest["sample_rate_hz"][name])
        if abs(rate - row_rate) > 0.01 * rate:
            raise FormatError(
                f"{path}: {name} declared at {rate} Hz but rows are spaced at {row_rate:.3f} Hz"
            )
        out[name] = Channel(rate, numeric[:, j].copy(), units.get(name, DEFAULT_UNITS[name]))
    truth = manifest.get("event_truth_s")
    return WaveformCase(str(manifest.get("case_id", path.name)), out, truth)


def save_case(case: WaveformCase, path: str | os.PathLike) -> Path:
    """Write a case directory.  Channels must share one sample rate and length."""
    path = Path(path)
    rates = {ch.sample_rate_hz for ch in case.channels.values()}
    if len(rates) != 1:
        raise FormatError(f"{case.case_id}: waveform.csv needs a common sample rate, got {sorted(rates)}")
    rate = rates.pop()
    n = min(len(ch.samples) for ch in case.channels.values())
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "case_id": case.case_id,
        "sample_rate_hz": {k: ch.sample_rate_hz for k, ch in case.channels.items()},
        "units": {k: ch.units for k, ch in case.channels.items()},
    }
    if case.event_truth is not None:
        manifest["event_truth_s"] = [float(x) for x in case.event_truth]
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    cols = {"time_s": np.arange(n) / rate}
    cols.update({k: ch.samples[:n] for k, ch in case.channels.items()})
    pd.DataFrame(cols).to_csv(path / "waveform.csv", index=False, float_format="%.6f")
    return path


# ---------------------------------------------------------------- resampling


def resample(channel: Channel, target_hz: float = TARGET_HZ) -> Channel:
    """Linear interpolation onto a uniform grid starting at the first sample."""
    if channel.sample_rate_hz < target_hz:
        raise UpsamplingError(
            f"cannot resample {channel.sample_rate_hz} Hz up to {target_hz} Hz"
        )
    if channel.sample_rate_hz == target_hz:
        return replace(channel, samples=channel.samples.copy())
    n_src = len(channel.samples)
    # small guard so exact multiples do not floor one short
    n_out = math.floor((n_src - 1) * target_hz / channel.sample_rate_hz + 1e-9) + 1
    t_out = np.arange(n_out) / target_hz
    t_src = np.arange(n_src) / channel.sample_rate_hz
    return Channel(target_hz, np.interp(t_out, t_src, channel.samples), channel.units)


def resample_case(case: WaveformCase, target_hz: float = TARGET_HZ) -> WaveformCase:
    chans = {k: resample(ch, target_hz) for k, ch in case.channels.items()}
    return replace(case, channels=chans)


# ---------------------------------------------------------------- segments


def channel_matrix(case: WaveformCase, channels: Sequence[str] = CHANNELS) -> np.ndarray:
    """Stack channels (all at 100 Hz) into a (C, n) array truncated to the shortest."""
    for name in channels:
        if name not in case.channels:
            raise MissingChannelError(name, case.case_id)
        if case.channels[name].sample_rate_hz != TARGET_HZ:
            raise FormatError(f"{case.case_id}: {name} is not at {TARGET_HZ:g} Hz; resample first")
    n = min(len(case.channels[c].samples) for c in channels)
    return np.stack([case.channels[c].samples[:n] for c in channels])


def window_bounds(n: int, window_s: float = 30.0, stride_s: float = 30.0) -> list[tuple[int, int]]:
    W = round(window_s * TARGET_HZ)
    S = round(stride_s * TARGET_HZ)
    if n < W:
        return []
    return [(k * S, k * S + W) for k in range((n - W) // S + 1)]


def segment_case(
    case: WaveformCase,
    window_s: float = 30.0,
    stride_s: float = 30.0,
    channels: Sequence[str] = CHANNELS,
) -> list[Segment]:
    """Aligned windows over the whole case; a trailing partial window is dropped."""
    X = channel_matrix(case, channels)
    return [
        Segment(X[:, a:b].copy(), a / TARGET_HZ, case.case_id)
        for a, b in window_bounds(X.shape[1], window_s, stride_s)
    ]


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def validate_segment(
    seg: Segment,
    peaks_per_channel: Mapping[str, np.ndarray] | np.ndarray,
    hr_band: tuple[float, float] = (30.0, 180.0),
    min_peaks: int = 5,
    map_band: tuple[float, float] = (20.0, 160.0),
    abp_row: int = 0,
) -> Verdict:
    """Reject windows with implausible rhythm or MAP; ABP is row ``abp_row``."""
    from .labeling import beats_to_map

    peaks = peaks_per_channel["ABP"] if isinstance(peaks_per_channel, Mapping) else peaks_per_channel
    peaks = np.asarray(peaks, dtype=np.int64)
    if len(peaks) < min_peaks:
        return Verdict(False, "undetectable rhythm")
    hr = 60.0 * TARGET_HZ / np.mean(np.diff(peaks))
    if hr < hr_band[0]:
        return Verdict(False, "HR too slow")
    if hr > hr_band[1]:
        return Verdict(False, "HR too fast")
    beats = beats_to_map(seg.data[abp_row], peaks)
    if beats.map.min() < map_band[0]:
        return Verdict(False, f"MAP<{map_band[0]:g}")
    if beats.map.max() > map_band[1]:
        return Verdict(False, f"MAP>{map_band[1]:g}")
    return ACCEPT


# ---------------------------------------------------------------- archive

_HEADER = struct.Struct("<4sIIII")
_TAIL = struct.Struct("<d")


def write_archive(path: str | os.PathLike, segments: Sequence[Segment]) -> Path:
    """Binary little-endian segment archive; written to a temp file then renamed."""
    path = Path(path)
    if segments:
        C, T = segments[0].data.shape
    else:
        C, T = 0, 0
    chunks = [_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, len(segments), C, T)]
    for seg in segments:
        if seg.data.shape != (C, T):
            raise FormatError(f"segment shape {seg.data.shape} differs from archive shape {(C, T)}")
        chunks.append(np.ascontiguousarray(seg.data, dtype="<f4").tobytes())
        cid = seg.case_id.encode("utf-8")
        chunks.append(struct.pack("<BHI", int(seg.label), int(seg.horizon_min), len(cid)))
        chunks.append(cid)
        chunks.append(_TAIL.pack(float(seg.t_start)))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    return path


def read_archive(path: str | os.PathLike, splits: Mapping[str, str] | None = None) -> list[Segment]:
    """Read an archive; ``splits`` (case_id -> split) tags each segment."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, C, T = _HEADER.unpack_from(blob, 0)
    if magic != ARCHIVE_MAGIC or version != ARCHIVE_VERSION:
        raise FormatError(f"{path}: not a version-{ARCHIVE_VERSION} segment archive")
    off = _HEADER.size
    nbytes = 4 * C * T
    out = []
    try:
        for _ in range(n):
            data = np.frombuffer(blob, dtype="<f4", count=C * T, offset=off).reshape(C, T)
            off += nbytes
            label, horizon, nid = struct.unpack_from("<BHI", blob, off)
            off += 7
            case_id = blob[off : off + nid].decode("utf-8")
            off += nid
            (t_start,) = _TAIL.unpack_from(blob, off)
            off += _TAIL.size
            split = None if splits is None else splits.get(case_id)
            out.append(Segment(data.astype(np.float64), t_start, case_id, label, horizon, split=split))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated archive ({exc})") from exc
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def stack(segments: Iterable[Segment]) -> tuple[np.ndarray, np.ndarray]:
    segs = list(segments)
    X = np.stack([s.data for s in segs]) if segs else np.zeros((0, 0, 0))
    y = np.array([s.label for s in segs], dtype=np.int64)
    return X, y
