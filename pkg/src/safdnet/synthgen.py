"""Seeded 4-channel synthetic recordings with scheduled hypotension events.

Every waveform is a closed-form function of time driven by a shared cardiac
phase, so each channel can be rendered at its own sample rate.  Hypotension
events are MAP dips to a 55-60 mmHg nadir with 30 s ramps; a precursor
signature starts ``precursor_lead_s`` before each onset and lasts until the
onset, or for ``precursor_duration_s`` when that is set.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ScheduleError
from .rng import Xoshiro256, mix_seed
from .signal_io import CHANNELS, DEFAULT_UNITS, Channel, WaveformCase

PRECURSORS = ("pp_decay", "hr_drift", "spectral_tone")
RAMP_S = 30.0
RECOVERY_GAP_S = 60.0
TAIL_S = 30.0
MASTER_HZ = 100.0


@dataclass(frozen=True)
class SynthParams:
    duration_s: float = 1800.0
    hr_bpm: float = 75.0
    base_map_mmhg: float = 85.0
    pulse_pressure_mmhg: float = 40.0
    n_events: int = 2
    precursor_lead_s: float = 420.0
    precursor_kind: str = "pp_decay"
    precursor_duration_s: float | None = None
    noise_sigma: dict = field(
        default_factory=lambda: {"ABP": 0.5, "ECG": 0.02, "PPG": 0.01, "CO2": 0.3}
    )
    seed: int = 0
    sample_rate_hz: dict = field(default_factory=lambda: {c: 100.0 for c in CHANNELS})
    tone_hz: float = 8.0
    tone_amplitude_mmhg: float = 2.0
    pp_decay_fraction: float = 0.4
    hr_drift_fraction: float = 0.2
    resp_rate_bpm: float = 12.0

    def __post_init__(self):
        if self.duration_s < 120:
            raise ValueError("duration_s must be at least 120")
        if self.base_map_mmhg <= 75:
            raise ValueError("base_map_mmhg must exceed 75")
        if self.precursor_lead_s < 60:
            raise ValueError("precursor_lead_s must be at least 60")
        if self.precursor_kind not in PRECURSORS:
            raise ValueError(f"precursor_kind must be one of {PRECURSORS}")
        if self.precursor_duration_s is not None and self.precursor_duration_s <= 0:
            raise ValueError("precursor_duration_s must be positive")
        if self.n_events < 0:
            raise ValueError("n_events must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _Event:
    ramp_start: float
    hold_s: float
    nadir: float

    @property
    def end(self) -> float:
        return self.ramp_start + 2 * RAMP_S + self.hold_s


@lru_cache(maxsize=None)
def _pulse_table(n: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Arterial pulse shape on one cycle: max 2/3 at phase 0, min -1/3."""
    phi = np.arange(n) / n
    h = (
        np.cos(2 * np.pi * phi)
        + 0.35 * np.cos(4 * np.pi * phi - 1.2)
        + 0.10 * np.cos(6 * np.pi * phi - 2.4)
    )
    shift = np.argmax(h)
    h = np.roll(h, -shift)
    g = (h - h.min()) / (h.max() - h.min()) - 1.0 / 3.0
    return phi, g


def pulse_shape(phase: np.ndarray) -> np.ndarray:
    """Periodic pulse ``g`` with ``g(0) = 2/3`` and minimum ``-1/3``."""
    phi, g = _pulse_table()
    frac = np.mod(phase, 1.0)
    return np.interp(frac, np.append(phi, 1.0), np.append(g, g[0]))


def _wrap(x):
    return np.mod(x + 0.5, 1.0) - 0.5


def _smoothstep(t, start, width):
    u = np.clip((t - start) / width, 0.0, 1.0)
    return u * u * (3 - 2 * u)


def _schedule(p: SynthParams, rng: Xoshiro256) -> list[_Event]:
    if p.n_events == 0:
        return []
    holds = rng.uniform(90.0, 180.0, p.n_events)
    nadirs = rng.uniform(55.0, 60.0, p.n_events)
    # each event occupies precursor lead + dip + recovery gap
    blocks = p.precursor_lead_s + 2 * RAMP_S + holds + RECOVERY_GAP_S
    slack = p.duration_s - TAIL_S - blocks.sum()
    if slack < 0:
        raise ScheduleError(
            f"{p.n_events} events need {blocks.sum() + TAIL_S:.0f} s but the case lasts {p.duration_s:.0f} s"
        )
    cuts = np.sort(rng.uniform(0.0, slack, p.n_events))
    events, cursor, used = [], 0.0, 0.0
    for k in range(p.n_events):
        cursor += cuts[k] - used
        used = cuts[k]
        start = cursor + p.precursor_lead_s
        events.append(_Event(float(start), float(holds[k]), float(nadirs[k])))
        cursor = start + 2 * RAMP_S + holds[k] + RECOVERY_GAP_S
    return events


def _wander(t, rng: Xoshiro256, amplitude: float, periods=(97.0, 233.0, 611.0)):
    phases = rng.uniform(0, 2 * np.pi, len(periods))
    w = sum(np.sin(2 * np.pi * t / P + ph) for P, ph in zip(periods, phases))
    return amplitude * w / len(periods)


class _Trajectory:
    """Slowly varying physiology on the master grid, interpolated to any times."""

    def __init__(self, p: SynthParams, rng: Xoshiro256):
        self.p = p
        self.t = np.arange(int(np.floor(p.duration_s * MASTER_HZ)) + 1) / MASTER_HZ
        t = self.t
        self.events = _schedule(p, rng.spawn("schedule"))
        base = p.base_map_mmhg + _wander(t, rng.spawn("map"), 3.0)
        dip = np.zeros_like(t)
        nadir = np.zeros_like(t)
        for ev in self.events:
            up = _ramp(t, ev.ramp_start, RAMP_S)
            down = _ramp(t, ev.ramp_start + RAMP_S + ev.hold_s, RAMP_S)
            d = up - down
            dip = np.maximum(dip, d)
            nadir = np.where(d > 0, ev.nadir, nadir)
        self.map = base * (1 - dip) + nadir * dip

        precursor = np.zeros_like(t)
        self.onsets = []
        for ev in self.events:
            seg = (t >= ev.ramp_start) & (t <= ev.ramp_start + RAMP_S)
            below = np.flatnonzero(seg & (self.map < 65.0))
            onset = float(t[below[0]]) if len(below) else ev.ramp_start + RAMP_S
            self.onsets.append(onset)
            begin = onset - p.precursor_lead_s
            stop = onset
            if p.precursor_duration_s is not None:
                stop = min(onset, begin + p.precursor_duration_s)
            precursor = np.maximum(precursor, _smoothstep(t, begin, RAMP_S) * (t < stop))
        self.precursor = precursor

        hr = p.hr_bpm * (1 + _wander(t, rng.spawn("hr"), 0.03))
        pp = p.pulse_pressure_mmhg * (1 + _wander(t, rng.spawn("pp"), 0.05))
        if p.precursor_kind == "hr_drift":
            hr = hr * (1 + p.hr_drift_fraction * precursor)
        if p.precursor_kind == "pp_decay":
            pp = pp * (1 - p.pp_decay_fraction * precursor)
        self.pp = pp
        beat_hz = hr / 60.0
        # trapezoidal integral of beat frequency gives cardiac phase
        self.phase = np.concatenate(([0.0], np.cumsum((beat_hz[1:] + beat_hz[:-1]) / 2) / MASTER_HZ))
        self.phase += rng.uniform(0, 1, 1)[0]
        self.resp_phase = p.resp_rate_bpm / 60.0 * t + rng.uniform(0, 1, 1)[0]
        self.tone_phase = rng.uniform(0, 2 * np.pi, 1)[0]

    def at(self, name, tq):
        return np.interp(tq, self.t, getattr(self, name))


def _ramp(t, start, width):
    return np.clip((t - start) / width, 0.0, 1.0)


def _render(traj: _Trajectory, name: str, tq: np.ndarray) -> np.ndarray:
    p = traj.p
    phase = traj.at("phase", tq)
    if name == "ABP":
        x = traj.at("map", tq) + traj.at("pp", tq) * pulse_shape(phase)
    elif name == "ECG":
        d = _wrap(phase + 0.12)
        x = (
            1.0 * np.exp(-0.5 * (d / 0.012) ** 2)
            + 0.12 * np.exp(-0.5 * ((d + 0.18) / 0.03) ** 2)
            + 0.30 * np.exp(-0.5 * ((d - 0.3) / 0.05) ** 2)
        )
    elif name == "PPG":
        rel = traj.at("pp", tq) / p.pulse_pressure_mmhg
        x = 0.5 + rel * (pulse_shape(phase - 0.1) + 1.0 / 3.0) - 0.5
    elif name == "CO2":
        s = np.sin(2 * np.pi * traj.at("resp_phase", tq))
        x = 38.0 / (1.0 + np.exp(-8.0 * (s + 0.2)))
    else:
        raise KeyError(name)
    if p.precursor_kind == "spectral_tone" and name in ("ABP", "PPG"):
        amp = p.tone_amplitude_mmhg
        if name == "PPG":
            amp = amp / p.pulse_pressure_mmhg
        x = x + amp * traj.at("precursor", tq) * np.sin(2 * np.pi * p.tone_hz * tq + traj.tone_phase)
    return x


def gen_case(p: SynthParams, case_id: str | None = None) -> WaveformCase:
    """Render one synthetic case; ``event_truth`` holds the onset times (s)."""
    rng = Xoshiro256(p.seed)
    traj = _Trajectory(p, rng)
    channels = {}
    for name in CHANNELS:
        rate = float(p.sample_rate_hz[name])
        n = int(np.floor(p.duration_s * rate + 1e-9)) + 1
        tq = np.arange(n) / rate
        x = _render(traj, name, tq)
        sigma = float(p.noise_sigma.get(name, 0.0))
        if sigma > 0:
            x = x + rng.spawn("noise", name).normal(0.0, sigma, n)
        channels[name] = Channel(rate, x, DEFAULT_UNITS[name])
    cid = case_id if case_id is not None else f"synth-{p.seed}"
    return WaveformCase(cid, channels, [round(o, 2) for o in traj.onsets])


def true_map(p: SynthParams) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free MAP trajectory (times on the 100 Hz master grid, mmHg) behind ``gen_case(p)``."""
    traj = _Trajectory(p, Xoshiro256(p.seed))
    return traj.t.copy(), traj.map.copy()


def inject_noise(
    case: WaveformCase, extra_sigma: float | dict, seed: int = 0
) -> WaveformCase:
    """Add seeded Gaussian noise; a scalar sigma applies to every channel."""
    sigmas = extra_sigma if isinstance(extra_sigma, dict) else {k: extra_sigma for k in case.channels}
    if any(s < 0 for s in sigmas.values()):
        raise ValueError("extra_sigma must be non-negative")
    out = {}
    for name, ch in case.channels.items():
        s = float(sigmas.get(name, 0.0))
        if s == 0:
            out[name] = replace(ch, samples=ch.samples.copy())
            continue
        noise = Xoshiro256(mix_seed(seed, case.case_id, name)).normal(0.0, s, len(ch.samples))
        out[name] = replace(ch, samples=ch.samples + noise)
    return replace(case, channels=out)


def randomize_params(base: SynthParams, seed: int) -> SynthParams:
    """Per-case physiology drawn around ``base`` (used for multi-case corpora)."""
    rng = Xoshiro256(mix_seed(seed, "case-params"))
    u = rng.random(3)
    return replace(
        base,
        hr_bpm=float(base.hr_bpm * (0.8 + 0.4 * u[0])),
        base_map_mmhg=float(max(80.0, base.base_map_mmhg - 5 + 10 * u[1])),
        pulse_pressure_mmhg=float(base.pulse_pressure_mmhg * (0.75 + 0.5 * u[2])),
        seed=seed,
    )
