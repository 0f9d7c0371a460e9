"""End-to-end experiments: retrieval, device characterization, coupling toggle.

Each run writes CSV artifacts, a plain-text ``summary.txt`` and a
``manifest.txt`` (config digest, seed, produced files with their SHA-256) into
its output directory. Nothing time- or path-dependent is written, so the same
config produces byte-identical directories.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import device as dv
from .config import ExperimentConfig
from .engine import (
    GATES_OFF,
    GATES_ON,
    Event,
    EventSchedule,
    SolverError,
    WaveformSet,
    assemble_netlist,
    shortest_period,
    simulate,
    write_disturb_csv,
    write_waveforms_csv,
)
from .fabric import (
    ProgrammingError,
    hebbian_weights,
    make_array,
    map_to_crossbar,
    program_layout,
    write_layout_csv,
    write_programming_log,
)
from .oscillator import InverterParams, build_ring, nominal_period
from .phase import (
    PhaseError,
    PhaseReading,
    RetrievedPattern,
    classify_pixels,
    detect_lock,
    frequency_from_crossings,
    phases_from_crossings,
    circular_mean_deg,
    rising_crossings,
    write_report_csv,
    UNRESOLVED,
)

EXIT_OK = 0
EXIT_MISMATCH = 3
EXIT_PROGRAMMING = 4
EXIT_SOLVER = 5
EXIT_CONFIG = 6


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        if isinstance(self.cause, ProgrammingError):
            return EXIT_PROGRAMMING
        if isinstance(self.cause, SolverError):
            return EXIT_SOLVER
        return EXIT_CONFIG


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


class _Outputs:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def manifest(self, cfg: ExperimentConfig, experiment: str) -> None:
        lines = [
            f"experiment: {experiment}",
            f"config_sha256: {cfg.digest()}",
            f"seed: {cfg.seed}",
            "files:",
        ]
        for name in self.files:
            digest = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
            lines.append(f"  {name} {digest}")
        (self.dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _summary(items: dict) -> str:
    return "".join(f"{k}: {v}\n" for k, v in items.items())


def _rngs(seed: int):
    array_ss, phase_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(array_ss), np.random.default_rng(phase_ss)


@dataclass
class System:
    pattern: tuple[int, ...]
    layout: object
    array: list
    programming_log: list[dict]
    netlist: object
    period: float  # nominal period at the base tau
    dt: float


def build_system(cfg: ExperimentConfig, pattern: Optional[Sequence[int]] = None) -> System:
    """hebbian_weights -> map_to_crossbar -> program_layout -> assemble_netlist."""
    pattern = tuple(pattern) if pattern is not None else cfg.pattern_vector()
    array_rng, phase_rng = _rngs(cfg.seed)
    oc, fc = cfg.oscillator, cfg.fabric
    with stage("hebbian_weights"):
        J = hebbian_weights([pattern])
    with stage("map_to_crossbar"):
        layout = map_to_crossbar(J, (fc.array_rows, fc.array_cols))
    with stage("program_layout"):
        array = make_array(fc.array_rows, fc.array_cols, array_rng, cfg.device)
        array, log = program_layout(
            layout,
            array,
            params=cfg.device,
            target_fraction=fc.verify_fraction,
            max_pulses=fc.max_pulses,
            forming_ramp=tuple(fc.forming_ramp),
        )
    with stage("assemble_netlist"):
        base = InverterParams(oc.v_dd, oc.gain, oc.tau, oc.r_stage)
        oscs = [
            build_ring(
                f"osc{k + 1}",
                replace(base, tau=oc.tau * (1.0 + d)),
                float(phase_rng.uniform(0.0, 2.0 * math.pi)),
                oc.stage_count,
            )
            for k, d in enumerate(oc.spread)
        ]
        netlist = assemble_netlist(oscs, layout, array, fc.series_resistance)
        period = nominal_period(base, oc.stage_count)
        dt = cfg.simulation.dt
        if dt == "auto":
            dt = shortest_period(oscs) / cfg.simulation.steps_per_period
    return System(pattern, layout, array, log, netlist, period, float(dt))


def _crossings(ws: WaveformSet, names: Sequence[str], level: float) -> dict[str, np.ndarray]:
    return {n: rising_crossings(ws.channels[n], ws.sample_period, level) for n in names}


def _window(c: np.ndarray, t0: float, t1: float) -> np.ndarray:
    return c[(c >= t0) & (c <= t1)]


def phase_trace(crossings: dict[str, np.ndarray], reference: str) -> list[list[float]]:
    """Per reference cycle: time, then frequency and phase of every channel."""
    r = crossings[reference]
    rows = []
    for k in range(len(r) - 1):
        t0, t1 = r[k], r[k + 1]
        row = [t0]
        for c in crossings.values():
            w = c[(c >= t0) & (c < t1)]
            pos = np.searchsorted(c, t0)
            f = 1.0 / (c[pos] - c[pos - 1]) if 0 < pos < len(c) else float("nan")
            ph = ((w[0] - t0) / (t1 - t0) * 360.0) if len(w) else float("nan")
            row += [f, ph]
        rows.append(row)
    return rows


def _write_phase_trace(path, crossings, reference) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["time"]
        for n in crossings:
            header += [f"{n}.frequency", f"{n}.phase"]
        w.writerow(header)
        for row in phase_trace(crossings, reference):
            w.writerow([f"{x:.9e}" for x in row])


@dataclass
class RetrievalReport:
    pattern: tuple[int, ...]
    result: RetrievedPattern
    match: Optional[str]
    frequencies: list[float]
    lock_periods: Optional[float]
    coupling_on: float
    disturb_events: int
    max_device_voltage: float
    files: list[str] = field(default_factory=list)
    waveforms: Optional[WaveformSet] = None

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.match else EXIT_MISMATCH


def _retrieval_schedule(cfg: ExperimentConfig, period: float) -> tuple[EventSchedule, float, float]:
    sc = cfg.simulation
    if sc.events:
        events = [Event(float(t), str(a), sc.gate_scope) for t, a in sc.events]
        schedule = EventSchedule(events)
        ons = [e.time for e in events if e.action == GATES_ON]
        t_on = ons[0] if ons else 0.0
        duration = max(events[-1].time, t_on) + sc.coupled_periods * period
    else:
        t_on = sc.free_periods * period
        schedule = EventSchedule([Event(t_on, GATES_ON, sc.gate_scope)])
        duration = t_on + sc.coupled_periods * period
    return schedule, t_on, duration


def analyze_retrieval(
    ws: WaveformSet,
    names: Sequence[str],
    t_on: float,
    period: float,
    cfg: ExperimentConfig,
    level: float,
) -> tuple[RetrievedPattern, list[float], Optional[float]]:
    an = cfg.analysis
    ref = names[an.reference]
    cr = _crossings(ws, names, level)
    with stage("phase_analysis"):
        lock_time = detect_lock(
            cr, ref, t_on, an.lock_window_periods, an.lock_freq_tol, an.lock_phase_tol
        )
        t_end = float(ws.time[-1])
        t0 = t_end - an.phase_window_periods * period
        freqs = []
        for n in names:
            try:
                freqs.append(frequency_from_crossings(_window(cr[n], t0, t_end)))
            except PhaseError:
                freqs.append(float("nan"))
        f_ref = freqs[an.reference]
        readings, unlocked = [], set()
        for k, n in enumerate(names):
            if not np.isfinite(freqs[k]) or not np.isfinite(f_ref) or abs(freqs[k] / f_ref - 1) > 0.01:
                unlocked.add(k)
                readings.append(PhaseReading(n, float("nan"), ref))
                continue
            ph = phases_from_crossings(_window(cr[n], t0, t_end), cr[ref], 1.0 / f_ref)
            readings.append(PhaseReading(n, circular_mean_deg(ph), ref))
        lock_freq = float(np.mean(freqs)) if lock_time is not None else None
        result = classify_pixels(readings, an.pixel_band, lock_time, lock_freq)
        if unlocked:
            px = list(result.pixels)
            for k in unlocked:
                px[k] = UNRESOLVED
            result = replace(result, pixels=tuple(px))
        lock_periods = (lock_time - t_on) * f_ref if lock_time is not None else None
    return result, freqs, lock_periods


def run_retrieval(
    cfg: ExperimentConfig,
    out_dir=None,
    pattern: Optional[Sequence[int]] = None,
    plot_data: bool = False,
    keep_waveforms: bool = False,
) -> RetrievalReport:
    out = _Outputs(out_dir or cfg.output_dir)
    system = build_system(cfg, pattern)
    nl = system.netlist
    names = [o.id for o in nl.oscillators]
    level = cfg.oscillator.v_dd / 2
    ref = cfg.analysis.reference
    ref_devices = [
        b.cell_id for b in nl.branches if b.role == "coupled" and ref in (b.osc_a, b.osc_b)
    ]
    schedule, t_on, duration = _retrieval_schedule(cfg, system.period)
    with stage("simulate"):
        ws = simulate(
            nl, schedule, duration, system.dt,
            record_devices=ref_devices, disturb_threshold=cfg.device.disturb_threshold,
        )
    result, freqs, lock_periods = analyze_retrieval(ws, names, t_on, system.period, cfg, level)
    match = result.match(system.pattern)

    with stage("write_outputs"):
        write_layout_csv(out.path("layout.csv"), system.layout)
        write_programming_log(out.path("programming_log.csv"), system.programming_log)
        dv.write_cell_dump(
            out.path("cells.csv"),
            [(f"r{r}c{c}", d.cell) for r, row in enumerate(system.array) for c, d in enumerate(row)],
        )
        write_waveforms_csv(out.path("waveforms.csv"), ws, names)
        write_waveforms_csv(out.path("device_voltages.csv"), ws, [f"vdev.{c}" for c in ref_devices])
        write_disturb_csv(out.path("disturb.csv"), ws.disturb_events)
        write_report_csv(out.path("report.csv"), names, freqs, result)
        if plot_data:
            _write_phase_trace(out.path("phase_trace.csv"), _crossings(ws, names, level), names[ref])
        vmax = max(ws.max_device_voltage.values(), default=0.0)
        out.write_text("summary.txt", _summary({
            "experiment": "retrieve",
            "stored_pattern": " ".join(f"{p:+d}" for p in system.pattern),
            "retrieved_pixels": " ".join(result.pixels),
            "relative_phases_deg": " ".join(f"{p:.2f}" for p in result.phases),
            "frequencies_hz": " ".join(f"{f:.2f}" for f in freqs),
            "outcome": match or "mismatch",
            "coupling_on_s": f"{t_on:.9e}",
            "lock_time_s": "none" if result.lock_time is None else f"{result.lock_time:.9e}",
            "lock_periods_after_on": "none" if lock_periods is None else f"{lock_periods:.3f}",
            "lock_frequency_hz": "none" if result.lock_frequency is None else f"{result.lock_frequency:.2f}",
            "disturb_events": len(ws.disturb_events),
            "max_device_voltage_v": f"{vmax:.6f}",
            "dt_s": f"{system.dt:.6e}",
        }))
        out.manifest(cfg, "retrieve")
    return RetrievalReport(
        system.pattern, result, match, freqs, lock_periods, t_on,
        len(ws.disturb_events), vmax, list(out.files), ws if keep_waveforms else None,
    )


@dataclass
class CharacterizationReport:
    forming_voltages: list[float]
    forming_mean: float
    forming_sd: float
    trace: list[float]
    retention: list[tuple[float, float]]
    files: list[str]


def run_device_characterization(cfg: ExperimentConfig, out_dir=None) -> CharacterizationReport:
    out = _Outputs(out_dir or cfg.output_dir)
    p = cfg.device
    ch = cfg.characterization
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    with stage("forming"):
        v = [dv.sample_forming_voltage(rng, p) for _ in range(ch.cells)]
        mean = float(np.mean(v)) if v else float("nan")
        sd = float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")
    with stage("pulse_train"):
        cell = dv.ReRamCell(p.forming_mean, True, p.g_min, p.g_min, p.g_max, 0, p.nonlinearity_alpha)
        trace = dv.pulse_train(cell, ch.set_pulses, ch.reset_pulses, p)[1:]
    with stage("retention"):
        programmed = dv.ReRamCell(p.forming_mean, True, p.g_formed, p.g_min, p.g_max, 0, p.nonlinearity_alpha)
        days = np.linspace(0.0, ch.retention_days, ch.retention_points)
        retention = [(float(d), dv.retention_project(programmed, d * 86400.0, p)) for d in days]

    with stage("write_outputs"):
        with open(out.path("forming.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id", "forming_voltage"])
            cols = cfg.fabric.array_cols
            for k, x in enumerate(v):
                w.writerow([f"r{k // cols}c{k % cols}", f"{x:.6f}"])
        with open(out.path("forming_summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "mean", "sd"])
            w.writerow([len(v), f"{mean:.6f}", f"{sd:.6f}"])
        with open(out.path("pulse_trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pulse", "amplitude", "conductance"])
            for k, g in enumerate(trace):
                amp = dv.SET_PULSE.amplitude if k < ch.set_pulses else dv.RESET_PULSE.amplitude
                w.writerow([k + 1, f"{amp:+.2f}", f"{g:.9e}"])
        g0 = p.g_formed
        with open(out.path("retention.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["elapsed_s", "elapsed_days", "conductance", "relative_deviation"])
            for d, g in retention:
                w.writerow([f"{d * 86400.0:.6e}", f"{d:.4f}", f"{g:.9e}", f"{(g - g0) / g0:.6e}"])
        out.write_text("summary.txt", _summary({
            "experiment": "characterize",
            "forming_cells": len(v),
            "forming_mean_v": f"{mean:.4f}",
            "forming_sd_v": f"{sd:.4f}",
            "set_pulses": ch.set_pulses,
            "reset_pulses": ch.reset_pulses,
            "final_conductance_s": f"{trace[-1]:.6e}" if trace else "none",
            "retention_days": ch.retention_days,
            "retention_deviation": f"{(retention[-1][1] - g0) / g0:.6e}" if retention else "none",
        }))
        out.manifest(cfg, "characterize")
    return CharacterizationReport(v, mean, sd, trace, retention, list(out.files))


@dataclass
class SegmentResult:
    index: int
    state: str
    t_start: float
    t_end: float
    frequencies: list[float]


@dataclass
class ToggleReport:
    segments: list[SegmentResult]
    recovery: list[dict]  # one per on->off transition
    lock_frequencies: list[Optional[float]]
    files: list[str]
    waveforms: Optional[WaveformSet] = None

    @property
    def recovered(self) -> bool:
        return all(r["recovered"] for r in self.recovery)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.recovered else EXIT_MISMATCH


def run_coupling_toggle(
    cfg: ExperimentConfig, out_dir=None, plot_data: bool = False, keep_waveforms: bool = False
) -> ToggleReport:
    out = _Outputs(out_dir or cfg.output_dir)
    system = build_system(cfg)
    nl = system.netlist
    names = [o.id for o in nl.oscillators]
    level = cfg.oscillator.v_dd / 2
    tc = cfg.toggle
    T = system.period
    seg_len = tc.segment_periods * T
    bounds = [k * seg_len for k in range(len(tc.segments) + 1)]

    events, state = [], "off"
    for k, s in enumerate(tc.segments):
        if s != state:
            events.append(Event(bounds[k], GATES_ON if s == "on" else GATES_OFF, cfg.simulation.gate_scope))
            state = s
    with stage("simulate"):
        ws = simulate(nl, EventSchedule(events), bounds[-1], system.dt,
                      disturb_threshold=cfg.device.disturb_threshold)

    with stage("phase_analysis"):
        cr = _crossings(ws, names, level)
        settle = tc.settle_periods * T
        segments = []
        for k, s in enumerate(tc.segments):
            t0, t1 = bounds[k], bounds[k + 1]
            segments.append(SegmentResult(
                k, s, t0, t1, [frequency_from_crossings(_window(cr[n], t0 + settle, t1)) for n in names]
            ))
        baseline = segments[0].frequencies if tc.segments[0] == "off" else None
        recovery = []
        for k in range(1, len(tc.segments)):
            if tc.segments[k] == "off" and tc.segments[k - 1] == "on" and baseline is not None:
                t_off = bounds[k]
                early = [
                    frequency_from_crossings(_window(cr[n], t_off + settle, t_off + 2 * settle)) for n in names
                ]
                err = [abs(f / b - 1.0) for f, b in zip(early, baseline)]
                recovery.append({
                    "segment": k, "t_off": t_off, "frequencies": early,
                    "max_relative_error": max(err), "recovered": max(err) <= 0.01,
                })
        lock_freqs = [
            float(np.mean(seg.frequencies)) if seg.state == "on" else None for seg in segments
        ]

    with stage("write_outputs"):
        write_waveforms_csv(out.path("waveforms.csv"), ws, names)
        write_disturb_csv(out.path("disturb.csv"), ws.disturb_events)
        with open(out.path("toggle_report.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment", "state", "t_start", "t_end"] + [f"{n}.frequency" for n in names])
            for seg in segments:
                w.writerow([seg.index, seg.state, f"{seg.t_start:.9e}", f"{seg.t_end:.9e}"]
                           + [f"{f:.6f}" for f in seg.frequencies])
            for r in recovery:
                w.writerow([f"recovery{r['segment']}", "off", f"{r['t_off']:.9e}", ""]
                           + [f"{f:.6f}" for f in r["frequencies"]])
        if plot_data:
            _write_phase_trace(out.path("phase_trace.csv"), cr, names[cfg.analysis.reference])
        out.write_text("summary.txt", _summary({
            "experiment": "toggle",
            "segments": " ".join(tc.segments),
            "segment_periods": tc.segment_periods,
            **{
                f"segment{seg.index}_{seg.state}_hz": " ".join(f"{f:.2f}" for f in seg.frequencies)
                for seg in segments
            },
            "recovered": "yes" if all(r["recovered"] for r in recovery) else "no",
            "max_recovery_error": f"{max((r['max_relative_error'] for r in recovery), default=0.0):.6e}",
            "disturb_events": len(ws.disturb_events),
        }))
        out.manifest(cfg, "toggle")
    return ToggleReport(segments, recovery, lock_freqs, list(out.files), ws if keep_waveforms else None)
