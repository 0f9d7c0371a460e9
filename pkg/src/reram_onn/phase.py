"""Crossing-based frequency, phase, lock and pixel readout."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

WHITE = "white"
BLACK = "black"
UNRESOLVED = "unresolved"


class PhaseError(ValueError):
    pass


class InsufficientCrossingsError(PhaseError):
    pass


class UnlockedError(PhaseError):
    pass


@dataclass(frozen=True)
class PhaseReading:
    oscillator_id: str
    relative_phase: float
    reference_id: str


@dataclass
class RetrievedPattern:
    pixels: tuple[str, ...]
    lock_time: Optional[float] = None
    lock_frequency: Optional[float] = None
    phases: tuple[float, ...] = field(default_factory=tuple)

    def as_spins(self) -> tuple[int, ...]:
        return tuple(1 if p == WHITE else -1 if p == BLACK else 0 for p in self.pixels)

    def match(self, pattern: Sequence[int]) -> Optional[str]:
        """``"pattern"``, ``"complement"`` or None."""
        s = self.as_spins()
        if 0 in s:
            return None
        if tuple(pattern) == s:
            return "pattern"
        if tuple(-p for p in pattern) == s:
            return "complement"
        return None


def rising_crossings(
    channel: np.ndarray, sample_period: float, level: float = 2.5, t_start: float = 0.0
) -> np.ndarray:
    x = np.asarray(channel, dtype=float)
    if len(x) < 2:
        return np.empty(0)
    idx = np.flatnonzero((x[:-1] < level) & (x[1:] >= level))
    frac = (level - x[idx]) / (x[idx + 1] - x[idx])
    return t_start + (idx + frac) * sample_period


def _in_window(c: np.ndarray, window: Optional[tuple[float, float]]) -> np.ndarray:
    if window is None:
        return c
    return c[(c >= window[0]) & (c <= window[1])]


def frequency_from_crossings(c: np.ndarray) -> float:
    if len(c) < 3:
        raise InsufficientCrossingsError(f"need >= 3 rising crossings, got {len(c)}")
    return 1.0 / float(np.mean(np.diff(c)))


def estimate_frequency(
    channel: np.ndarray,
    sample_period: float,
    window: Optional[tuple[float, float]] = None,
    level: float = 2.5,
) -> float:
    return frequency_from_crossings(_in_window(rising_crossings(channel, sample_period, level), window))


def circular_mean_deg(a) -> float:
    r = np.deg2rad(np.asarray(a, dtype=float))
    return float(np.rad2deg(np.arctan2(np.sin(r).mean(), np.cos(r).mean())) % 360.0)


def circular_distance_deg(a, b):
    return np.abs((np.asarray(a, dtype=float) - b + 180.0) % 360.0 - 180.0)


def phases_from_crossings(c: np.ndarray, ref: np.ndarray, ref_period: float) -> np.ndarray:
    """Per-crossing phase of ``c`` against the nearest reference crossing, degrees in [0, 360)."""
    pos = np.clip(np.searchsorted(ref, c), 1, len(ref) - 1)
    before, after = ref[pos - 1], ref[pos]
    nearest = np.where(c - before <= after - c, before, after)
    return ((c - nearest) / ref_period * 360.0) % 360.0


def relative_phase(
    channel: np.ndarray,
    reference_channel: np.ndarray,
    sample_period: float,
    window: Optional[tuple[float, float]] = None,
    level: float = 2.5,
    freq_tol: float = 0.01,
) -> float:
    c_all = rising_crossings(channel, sample_period, level)
    r_all = rising_crossings(reference_channel, sample_period, level)
    c, r = _in_window(c_all, window), _in_window(r_all, window)
    f_c, f_r = frequency_from_crossings(c), frequency_from_crossings(r)
    if abs(f_c / f_r - 1.0) > freq_tol:
        raise UnlockedError(f"frequencies {f_c:.6g} Hz vs {f_r:.6g} Hz differ by more than {freq_tol:.1%}")
    return circular_mean_deg(phases_from_crossings(c, r_all, 1.0 / f_r))


def classify_pixels(
    phases: Sequence[PhaseReading],
    band: float = 60.0,
    lock_time: Optional[float] = None,
    lock_frequency: Optional[float] = None,
) -> RetrievedPattern:
    refs = {p.reference_id for p in phases}
    if len(refs) > 1:
        raise PhaseError(f"readings use several references: {sorted(refs)}")
    pixels = []
    for p in phases:
        d = float(circular_distance_deg(p.relative_phase, 0.0))
        if d <= band:
            pixels.append(WHITE)
        elif d >= 180.0 - band:
            pixels.append(BLACK)
        else:
            pixels.append(UNRESOLVED)
    return RetrievedPattern(tuple(pixels), lock_time, lock_frequency, tuple(p.relative_phase for p in phases))


def detect_lock(
    crossings: Mapping[str, np.ndarray],
    reference: str,
    from_time: float,
    window_periods: int = 3,
    freq_tol: float = 0.005,
    phase_tol: float = 15.0,
) -> Optional[float]:
    """Earliest reference crossing after ``from_time`` that opens a locked window.

    A window spans ``window_periods`` local reference periods. Inside it every
    channel needs >= 3 rising crossings, all frequencies must agree within
    ``freq_tol`` (max/min - 1), and each channel's per-crossing phase must stay
    within ``phase_tol`` degrees of its circular window mean.
    """
    r = np.asarray(crossings[reference])
    eps = 1e-12
    for k in np.flatnonzero(r >= from_time - eps):
        if k + window_periods >= len(r):
            break
        t0 = r[k]
        t1 = r[k + window_periods]
        tw = (t1 - t0) * 1e-6
        freqs = []
        ok = True
        for name, c in crossings.items():
            w = c[(c >= t0 - tw) & (c <= t1 + tw)]
            if len(w) < 3:
                ok = False
                break
            freqs.append(1.0 / np.mean(np.diff(w)))
            if name == reference:
                continue
            pos = np.clip(np.searchsorted(r, w, side="right") - 1, 0, len(r) - 2)
            ph = ((w - r[pos]) / (r[pos + 1] - r[pos]) * 360.0) % 360.0
            if circular_distance_deg(ph, circular_mean_deg(ph)).max() > phase_tol:
                ok = False
                break
        if ok and max(freqs) / min(freqs) - 1.0 <= freq_tol:
            return float(t0)
    return None


def write_report_csv(
    path,
    ids: Sequence[str],
    frequencies: Sequence[float],
    result: RetrievedPattern,
) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["oscillator_id", "frequency", "relative_phase", "pixel"])
        for i, f, ph, px in zip(ids, frequencies, result.phases, result.pixels):
            w.writerow([i, f"{f:.6f}", f"{ph:.3f}", px])
        w.writerow(["lock_time", "" if result.lock_time is None else f"{result.lock_time:.9e}", "", ""])
        w.writerow([
            "lock_frequency", "" if result.lock_frequency is None else f"{result.lock_frequency:.6f}", "", ""
        ])
