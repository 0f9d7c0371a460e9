"""Behavioral model of a CMO/HfOx ReRAM cell and its 1T1R access switch.

Cells are immutable values. Every operation returns a new cell (or a plain
number/event) so arrays of cells can be programmed, snapshotted and compared
without aliasing surprises.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

G_UNFORMED = 1e-7  # 10 MOhm pristine cell
G_FORMED_DEFAULT = 5e-4  # 2 kOhm after forming


class DeviceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeviceParams:
    """Model constants shared by all cells of one array."""

    forming_mean: float = 2.84
    forming_sd: float = 0.13
    forming_clamp: tuple[float, float] = (2.0, 3.7)
    g_min: float = 5e-5
    g_max: float = 5e-4
    g_unformed: float = G_UNFORMED
    g_formed: float = G_FORMED_DEFAULT
    eta_set: float = 0.03
    eta_reset: float = 0.03
    program_threshold: float = 1.0
    disturb_threshold: float = 1.2
    nonlinearity_alpha: float = 0.2
    retention_drift: float = 0.005  # fractional loss per decade
    retention_t0: float = 1.0
    switch_on_resistance: float = 1e3

    def __post_init__(self):
        if not 0 < self.g_min <= self.g_max:
            raise ValueError(f"invalid programming window [{self.g_min}, {self.g_max}]")
        if self.forming_sd < 0:
            raise ValueError("forming_sd must be >= 0")
        if self.switch_on_resistance <= 0:
            raise ValueError("switch_on_resistance must be > 0")


@dataclass(frozen=True)
class ReRamCell:
    forming_voltage: float
    formed: bool = False
    conductance_base: float = G_UNFORMED
    g_min: float = 5e-5
    g_max: float = 5e-4
    disturb_count: int = 0
    nonlinearity_alpha: float = 0.2

    def __post_init__(self):
        if self.forming_voltage <= 0:
            raise ValueError("forming_voltage must be > 0")
        if self.formed and not self.g_min <= self.conductance_base <= self.g_max:
            raise ValueError(
                f"formed cell conductance {self.conductance_base} outside "
                f"[{self.g_min}, {self.g_max}]"
            )

    @property
    def resistance(self) -> float:
        return 1.0 / self.conductance_base


@dataclass(frozen=True)
class PulseSpec:
    amplitude: float
    width: float = 60e-9

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("pulse width must be > 0")


SET_PULSE = PulseSpec(+1.6, 60e-9)
RESET_PULSE = PulseSpec(-2.3, 60e-9)


@dataclass(frozen=True)
class OneT1R:
    cell: ReRamCell
    gate_on: bool = False
    switch_on_resistance: float = 1e3

    def __post_init__(self):
        if self.switch_on_resistance <= 0:
            raise ValueError("switch_on_resistance must be > 0")


@dataclass(frozen=True)
class DisturbEvent:
    time: float
    cell_id: str
    voltage_across: float


def new_cell(rng: np.random.Generator, params: DeviceParams = DeviceParams()) -> ReRamCell:
    """A pristine (unformed) cell with a freshly sampled forming voltage."""
    return ReRamCell(
        forming_voltage=sample_forming_voltage(rng, params),
        conductance_base=params.g_unformed,
        g_min=params.g_min,
        g_max=params.g_max,
        nonlinearity_alpha=params.nonlinearity_alpha,
    )


def sample_forming_voltage(rng: np.random.Generator, params: DeviceParams = DeviceParams()) -> float:
    lo, hi = params.forming_clamp
    v = rng.normal(params.forming_mean, params.forming_sd)
    return float(min(max(v, lo), hi))


def form(cell: ReRamCell, applied: float, params: DeviceParams = DeviceParams()) -> ReRamCell:
    if cell.formed:
        raise DeviceError("cell is already formed")
    if applied >= cell.forming_voltage:
        g = min(max(params.g_formed, cell.g_min), cell.g_max)
        return replace(cell, formed=True, conductance_base=g)
    return cell


def apply_pulse(cell: ReRamCell, pulse: PulseSpec, params: DeviceParams = DeviceParams()) -> ReRamCell:
    """Soft-bounded partial set/reset.

    Set moves a fixed fraction of the remaining headroom toward g_max, reset a
    fixed fraction toward g_min, so repeated identical pulses give the
    saturating potentiation/depression curves seen in pulse trains.
    """
    if not cell.formed:
        raise DeviceError("cannot program an unformed cell")
    if abs(pulse.amplitude) < params.program_threshold:
        return cell
    g = cell.conductance_base
    if pulse.amplitude > 0:
        g = g + params.eta_set * (cell.g_max - g)
    else:
        g = g - params.eta_reset * (g - cell.g_min)
    g = min(max(g, cell.g_min), cell.g_max)
    return replace(cell, conductance_base=g)


def conductance_at(cell: ReRamCell, v_across: float) -> float:
    if not cell.formed:
        return G_UNFORMED
    return cell.conductance_base * (1.0 + cell.nonlinearity_alpha * abs(v_across))


def check_disturb(
    cell: ReRamCell,
    v_across: float,
    now: float,
    cell_id: str = "",
    threshold: float = 1.2,
) -> Optional[DisturbEvent]:
    """Flag a bias large enough to move the programmed state.

    Detection only: the caller tallies events with :func:`record_disturb`.
    """
    if cell.formed and abs(v_across) >= threshold:
        return DisturbEvent(now, cell_id, float(v_across))
    return None


def record_disturb(cell: ReRamCell, count: int = 1) -> ReRamCell:
    return replace(cell, disturb_count=cell.disturb_count + count)


def retention_project(cell: ReRamCell, elapsed: float, params: DeviceParams = DeviceParams()) -> float:
    if elapsed < 0:
        raise ValueError("elapsed must be >= 0")
    g0 = cell.conductance_base
    if elapsed == 0 or not cell.formed:
        return g0
    g = g0 * (1.0 - params.retention_drift * math.log10(1.0 + elapsed / params.retention_t0))
    return max(g, cell.g_min)


def program_verify(
    cell: ReRamCell,
    target: float,
    pulse: PulseSpec = SET_PULSE,
    max_pulses: int = 1000,
    params: DeviceParams = DeviceParams(),
) -> tuple[ReRamCell, int]:
    """Apply set pulses until the zero-bias conductance reaches ``target``.

    Returns the programmed cell and the number of pulses used. Raises
    :class:`DeviceError` when the budget runs out.
    """
    n = 0
    while cell.conductance_base < target:
        if n >= max_pulses:
            raise DeviceError(
                f"verify failed after {n} pulses: G={cell.conductance_base:.4g} S < {target:.4g} S"
            )
        cell = apply_pulse(cell, pulse, params)
        n += 1
    return cell, n


def pulse_train(
    cell: ReRamCell, n_set: int, n_reset: int, params: DeviceParams = DeviceParams()
) -> list[float]:
    """Conductance after each pulse of a set-then-reset train (initial value first)."""
    trace = [cell.conductance_base]
    for pulse, n in ((SET_PULSE, n_set), (RESET_PULSE, n_reset)):
        for _ in range(n):
            cell = apply_pulse(cell, pulse, params)
            trace.append(cell.conductance_base)
    return trace


def write_cell_dump(path, cells: Iterable[tuple[str, ReRamCell]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "formed", "conductance_base", "disturb_count"])
        for cell_id, cell in cells:
            w.writerow([cell_id, int(cell.formed), f"{cell.conductance_base:.9e}", cell.disturb_count])
