"""Assemble rings, series resistors and 1T1R branches into one ODE and integrate it."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .device import G_UNFORMED, DisturbEvent, OneT1R, check_disturb
from .fabric import CrossbarLayout
from .oscillator import RingOscillator, limit_cycle, transfer

GATES_ON = "gates_on"
GATES_OFF = "gates_off"


class SolverError(RuntimeError):
    pass


class StepSizeError(SolverError):
    pass


@dataclass
class Branch:
    osc_a: int
    stage_a: int  # 1-based
    osc_b: int
    stage_b: int
    device: OneT1R
    series_r_a: float = 47e3
    series_r_b: float = 47e3
    cell_id: str = ""
    role: str = "coupled"

    def __post_init__(self):
        if self.series_r_a < 0 or self.series_r_b < 0:
            raise ValueError("series resistances must be >= 0")


@dataclass
class Netlist:
    oscillators: list[RingOscillator]
    branches: list[Branch] = field(default_factory=list)

    def __post_init__(self):
        for b in self.branches:
            for o, s in ((b.osc_a, b.stage_a), (b.osc_b, b.stage_b)):
                if not 0 <= o < len(self.oscillators):
                    raise ValueError(f"branch {b.cell_id} references missing oscillator {o}")
                if not 1 <= s <= self.oscillators[o].stage_count:
                    raise ValueError(f"branch {b.cell_id} references missing stage {s}")


@dataclass(frozen=True)
class Event:
    time: float
    action: str
    scope: object = "all"  # "all" | "coupled" | iterable of cell ids

    def __post_init__(self):
        if self.action not in (GATES_ON, GATES_OFF):
            raise ValueError(f"unknown action {self.action!r}")


@dataclass
class EventSchedule:
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be non-decreasing")

    @classmethod
    def toggles(cls, times: Sequence[float], start_on: bool = True, scope="all") -> "EventSchedule":
        out, on = [], start_on
        for t in times:
            out.append(Event(t, GATES_ON if on else GATES_OFF, scope))
            on = not on
        return cls(out)


@dataclass
class WaveformSet:
    sample_period: float
    time: np.ndarray
    channels: dict[str, np.ndarray]
    events_applied: list[tuple[float, str, object]] = field(default_factory=list)
    disturb_events: list[DisturbEvent] = field(default_factory=list)
    max_device_voltage: dict[str, float] = field(default_factory=dict)
    final_state: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ValueError("sample_period must be > 0")
        lengths = {len(v) for v in self.channels.values()} | {len(self.time)}
        if len(lengths) > 1:
            raise ValueError("all channels must have equal length")


def assemble_netlist(
    oscillators: Sequence[RingOscillator],
    layout: CrossbarLayout,
    array: Sequence[Sequence[OneT1R]],
    series_r: float = 47e3,
) -> Netlist:
    """One branch per crosspoint whose row and column lines both reach a neuron."""
    if len(array) != layout.rows or any(len(row) != layout.cols for row in array):
        raise ValueError("array dimensions do not match layout")
    oscillators = list(oscillators)
    if not oscillators:
        return Netlist([], [])
    branches = []
    for a in layout.assignments:
        if a.neuron_i is None:
            continue
        if max(a.neuron_i, a.neuron_j) >= len(oscillators):
            raise ValueError(f"layout cell {a.cell_id} references neuron beyond {len(oscillators)} oscillators")
        sa, sb = a.taps
        branches.append(Branch(
            a.neuron_i, sa, a.neuron_j, sb, array[a.row][a.col], series_r, series_r, a.cell_id, a.role,
        ))
    return Netlist(oscillators, branches)


def _device_voltage(dv, r_ext, g0, alpha):
    """Exact solution of V = dv / (r_ext * G(V) + 1) with G(V) = g0 (1 + alpha |V|).

    Substituting gives a quadratic in |V|; the positive root is written in the
    cancellation-free form 2c / (b + sqrt(b^2 + 4ac)).
    """
    a = r_ext * g0 * alpha
    b = r_ext * g0 + 1.0
    c = np.abs(dv)
    mag = 2.0 * c / (b + np.sqrt(b * b + 4.0 * a * c))
    return np.copysign(mag, dv)


def branch_current(branch: Branch, v_a: float, v_b: float, tol: float = 1e-6) -> tuple[float, float]:
    """Series-chain current (a -> b) and the voltage across the ReRAM device."""
    dev = branch.device
    if not dev.gate_on:
        return 0.0, 0.0
    cell = dev.cell
    g0 = cell.conductance_base if cell.formed else G_UNFORMED
    alpha = cell.nonlinearity_alpha if cell.formed else 0.0
    r_ext = branch.series_r_a + branch.series_r_b + dev.switch_on_resistance
    dv = v_a - v_b
    v_dev = float(_device_voltage(dv, r_ext, g0, alpha))
    g = g0 * (1.0 + alpha * abs(v_dev))
    residual = abs(v_dev * (r_ext * g + 1.0) - dv)
    if residual >= tol:
        raise SolverError(f"branch {branch.cell_id}: divider residual {residual:.3g} V")
    return v_dev * g, v_dev


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(f, y0, dt: float, n_steps: int) -> np.ndarray:
    y = np.asarray(y0, dtype=float)
    for _ in range(n_steps):
        y = rk4_step(f, y, dt)
    return y


def shortest_period(oscillators: Sequence[RingOscillator]) -> float:
    return min(
        limit_cycle(o.stage_count, o.params.gain, o.params.v_dd)[1] * o.params.tau for o in oscillators
    )


class _System:
    """Flattened, vectorized right-hand side of a netlist."""

    def __init__(self, netlist: Netlist):
        oscs = netlist.oscillators
        counts = {o.stage_count for o in oscs}
        if len(counts) > 1:
            raise ValueError("all oscillators must have the same stage count")
        self.n = counts.pop()
        self.k = len(oscs)
        self.tau = np.array([o.params.tau for o in oscs])[:, None]
        self.v_dd = np.array([o.params.v_dd for o in oscs])[:, None]
        self.gain = np.array([o.params.gain for o in oscs])[:, None]
        # injected current -> dV/dt is I / C = I * r_stage / tau
        r_stage = np.array([o.params.r_stage for o in oscs])[:, None]
        self.inj_scale = np.repeat(r_stage / self.tau, self.n, axis=1).ravel()
        br = netlist.branches
        self.branches = br
        self.node_a = np.array([b.osc_a * self.n + b.stage_a - 1 for b in br], dtype=int)
        self.node_b = np.array([b.osc_b * self.n + b.stage_b - 1 for b in br], dtype=int)
        self.r_ext = np.array([b.series_r_a + b.series_r_b + b.device.switch_on_resistance for b in br])
        self.g0 = np.array([
            b.device.cell.conductance_base if b.device.cell.formed else G_UNFORMED for b in br
        ])
        self.alpha = np.array([b.device.cell.nonlinearity_alpha if b.device.cell.formed else 0.0 for b in br])
        self.formed = np.array([b.device.cell.formed for b in br], dtype=bool)
        self.gate = np.array([b.device.gate_on for b in br], dtype=bool)
        self.ids = [b.cell_id for b in br]
        self._refresh()

    def _refresh(self):
        on = np.flatnonzero(self.gate)
        self.on = on
        self._na, self._nb = self.node_a[on], self.node_b[on]
        self._r, self._g0, self._al = self.r_ext[on], self.g0[on], self.alpha[on]

    def set_gates(self, action: str, scope) -> None:
        if scope == "all":
            mask = np.ones(len(self.ids), dtype=bool)
        elif scope == "coupled":
            mask = np.array([b.role == "coupled" for b in self.branches], dtype=bool)
        else:
            wanted = set(scope)
            mask = np.array([i in wanted for i in self.ids], dtype=bool)
        self.gate[mask] = action == GATES_ON
        self._refresh()

    def device_voltages(self, y: np.ndarray) -> np.ndarray:
        """Device voltage for every branch (zero where the gate is open)."""
        flat = y.ravel()
        out = np.zeros(len(self.ids))
        if len(self.on):
            out[self.on] = _device_voltage(flat[self._na] - flat[self._nb], self._r, self._g0, self._al)
        return out

    def __call__(self, y: np.ndarray) -> np.ndarray:
        d = (transfer(np.roll(y, 1, axis=1), self.v_dd, self.gain) - y) / self.tau
        if len(self.on):
            flat = y.ravel()
            v = _device_voltage(flat[self._na] - flat[self._nb], self._r, self._g0, self._al)
            i = v * self._g0 * (1.0 + self._al * np.abs(v))
            m = self.k * self.n
            inj = np.bincount(self._nb, i, m) - np.bincount(self._na, i, m)
            d = d + (inj * self.inj_scale).reshape(d.shape)
        return d


def simulate(
    netlist: Netlist,
    schedule: EventSchedule,
    duration: float,
    dt: float,
    rng: Optional[np.random.Generator] = None,
    record: Optional[dict[str, tuple[int, int]]] = None,
    record_devices: Iterable[str] = (),
    disturb_threshold: float = 1.2,
    max_samples: int = 1_000_000,
) -> WaveformSet:
    """Fixed-step RK4 transient.

    ``record`` maps channel names to ``(oscillator index, 1-based stage)``;
    the default records every output stage as ``osc1``, ``osc2``, ... Device
    voltages of the branches named in ``record_devices`` are stored as
    ``vdev.<cell_id>``. Events snap to the nearest step boundary and apply
    before that step. Disturb checks run on every step for every conducting
    formed branch; an event is logged when a branch enters the over-threshold
    region. ``rng`` is unused: integration is deterministic.
    """
    del rng
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    oscs = netlist.oscillators
    if not oscs:
        return WaveformSet(dt, np.zeros(1), {}, final_state=np.zeros((0, 0)))
    t_min = shortest_period(oscs)
    if dt > t_min / 1000 * (1 + 1e-9):
        raise StepSizeError(f"dt={dt:.3g} s exceeds T/1000={t_min / 1000:.3g} s")

    sys_ = _System(netlist)
    n_stage = sys_.n
    if record is None:
        record = {f"osc{k + 1}": (k, o.stage_count) for k, o in enumerate(oscs)}
    rec_idx = np.array([o * n_stage + s - 1 for o, s in record.values()], dtype=int)
    dev_names = list(record_devices)
    dev_idx = np.array([sys_.ids.index(c) for c in dev_names], dtype=int)

    n_steps = int(round(duration / dt))
    decim = max(1, math.ceil((n_steps + 1) / max_samples))
    n_samples = n_steps // decim + 1
    rec = np.empty((n_samples, len(rec_idx)))
    rec_dev = np.empty((n_samples, len(dev_idx)))

    pending = sorted(
        ((int(round(e.time / dt)), i, e) for i, e in enumerate(schedule.events)), key=lambda x: (x[0], x[1])
    )
    ev_ptr = 0
    applied = []
    disturbs: list[DisturbEvent] = []
    over = np.zeros(len(sys_.ids), dtype=bool)
    vmax = np.zeros(len(sys_.ids))
    cells = [b.device.cell for b in netlist.branches]

    y = np.array([o.state for o in oscs], dtype=float)
    lo = -0.5 * sys_.v_dd.max()
    hi = 1.5 * sys_.v_dd.max()
    for step in range(n_steps + 1):
        while ev_ptr < len(pending) and pending[ev_ptr][0] <= step:
            e = pending[ev_ptr][2]
            sys_.set_gates(e.action, e.scope)
            applied.append((step * dt, e.action, e.scope))
            ev_ptr += 1

        t = step * dt
        vdev = sys_.device_voltages(y)
        np.maximum(vmax, np.abs(vdev), out=vmax)
        hot = (np.abs(vdev) >= disturb_threshold) & sys_.formed & sys_.gate
        for j in np.flatnonzero(hot & ~over):
            ev = check_disturb(cells[j], vdev[j], t, sys_.ids[j], disturb_threshold)
            if ev is not None:
                disturbs.append(ev)
        over = hot

        if step % decim == 0:
            r = step // decim
            rec[r] = y.ravel()[rec_idx]
            rec_dev[r] = vdev[dev_idx]
        if step == n_steps:
            break
        y = rk4_step(sys_, y, dt)
        if not np.isfinite(y).all() or y.min() < lo or y.max() > hi:
            raise SolverError(f"state diverged at t={t + dt:.6g} s (min {y.min():.3g}, max {y.max():.3g})")

    channels = {name: rec[:, k].copy() for k, name in enumerate(record)}
    channels.update({f"vdev.{c}": rec_dev[:, k].copy() for k, c in enumerate(dev_names)})
    return WaveformSet(
        sample_period=dt * decim,
        time=np.arange(n_samples) * dt * decim,
        channels=channels,
        events_applied=applied,
        disturb_events=disturbs,
        max_device_voltage={c: float(v) for c, v in zip(sys_.ids, vmax)},
        final_state=y,
    )


def set_all_gates(netlist: Netlist, on: bool) -> Netlist:
    branches = [replace(b, device=replace(b.device, gate_on=on)) for b in netlist.branches]
    return Netlist(netlist.oscillators, branches)


def write_waveforms_csv(path, ws: WaveformSet, names: Optional[Sequence[str]] = None) -> None:
    names = list(names) if names is not None else list(ws.channels)
    data = np.column_stack([ws.time] + [ws.channels[n] for n in names])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["time"] + names) + "\n")
        np.savetxt(fh, data, fmt="%.9e", delimiter=",")


def write_disturb_csv(path, events: Iterable[DisturbEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "cell_id", "voltage"])
        for e in events:
            w.writerow([f"{e.time:.9e}", e.cell_id, f"{e.voltage_across:.6e}"])
