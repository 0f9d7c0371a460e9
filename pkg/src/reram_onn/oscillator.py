"""Inverter-ring oscillator neuron.

Each stage is a first-order RC node driven by the saturating transfer of the
previous stage::

    dV_i/dt = (F(V_{i-1}) - V_i) / tau + I_i / C_stage
    F(v)    = v_dd/2 * (1 - tanh(gain * (2 v / v_dd - 1)))
    C_stage = tau / r_stage

Stages are 1-based in the public API (stage 9 is the output); arrays are
0-based internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

OUTPUT_STAGE = 9
TAP_STAGES = (7, 8)


class OscillationError(RuntimeError):
    pass


@dataclass(frozen=True)
class InverterParams:
    v_dd: float = 5.0
    gain: float = 10.0
    tau: float = 9.3e-6
    r_stage: float = 100e3

    def validate(self) -> None:
        if self.v_dd <= 0:
            raise ValueError("v_dd must be > 0")
        if self.gain < 4:
            raise ValueError(f"gain {self.gain} < 4 does not guarantee oscillation")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.r_stage <= 0:
            raise ValueError("r_stage must be > 0")

    @property
    def c_stage(self) -> float:
        return self.tau / self.r_stage


@dataclass
class RingOscillator:
    id: str
    params: InverterParams
    state: np.ndarray
    stage_count: int = 9
    tap_stages: tuple[int, int] = field(default=TAP_STAGES)

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        if self.state.shape != (self.stage_count,):
            raise ValueError(f"state must have {self.stage_count} entries")

    @property
    def output(self) -> float:
        return float(self.state[self.stage_count - 1])


def transfer(v, v_dd: float, gain: float):
    return 0.5 * v_dd * (1.0 - np.tanh(gain * (2.0 * v / v_dd - 1.0)))


def transfer_slope(v, v_dd: float, gain: float):
    return -gain / np.cosh(gain * (2.0 * v / v_dd - 1.0)) ** 2


def ring_rhs(V: np.ndarray, tau, v_dd, gain) -> np.ndarray:
    """Uncoupled stage derivatives for one ring (shape (N,)) or a bank (shape (K, N)).

    Per-ring constants broadcast against the leading axis.
    """
    if V.ndim == 2:
        tau = np.reshape(tau, (-1, 1))
        v_dd = np.reshape(v_dd, (-1, 1))
        gain = np.reshape(gain, (-1, 1))
    return (transfer(np.roll(V, 1, axis=-1), v_dd, gain) - V) / tau


def stage_derivatives(osc: RingOscillator, injected=None) -> np.ndarray:
    p = osc.params
    d = ring_rhs(osc.state, p.tau, p.v_dd, p.gain)
    if injected is not None:
        injected = np.asarray(injected, dtype=float)
        if injected.shape != (osc.stage_count,):
            raise ValueError(f"injected must have {osc.stage_count} entries")
        d = d + injected / p.c_stage
    return d


def stage_jacobian(osc: RingOscillator) -> np.ndarray:
    """Analytic d(dV/dt)/dV of the uncoupled ring."""
    p = osc.params
    n = osc.stage_count
    J = -np.eye(n) / p.tau
    slope = transfer_slope(osc.state, p.v_dd, p.gain) / p.tau
    for i in range(n):
        J[i, (i - 1) % n] += slope[(i - 1) % n]
    return J


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rising_edges(x: np.ndarray, level: float, dt: float) -> np.ndarray:
    idx = np.flatnonzero((x[:-1] < level) & (x[1:] >= level))
    return (idx + (level - x[idx]) / (x[idx + 1] - x[idx])) * dt


@lru_cache(maxsize=32)
def limit_cycle(stage_count: int, gain: float, v_dd: float, samples: int = 4096):
    """One period of the free-running orbit at tau = 1.

    Returns ``(states, period)`` where ``states[k]`` is the ring state a
    fraction ``k / samples`` of a period after the output stage rises through
    v_dd/2, and ``period`` is in units of tau. Time scales linearly with tau,
    so a single cached orbit serves every tau.
    """
    dt = 1.0 / 100.0
    y = np.linspace(0.1, 0.9, stage_count) * v_dd
    f = lambda v: ring_rhs(v, 1.0, v_dd, gain)
    warm = int(20 * stage_count / dt)
    for _ in range(warm):
        y = _rk4(f, y, dt)
    keep = int(8 * stage_count / dt)
    traj = np.empty((keep, stage_count))
    for k in range(keep):
        traj[k] = y
        y = _rk4(f, y, dt)
    edges = rising_edges(traj[:, -1], v_dd / 2, dt)
    if len(edges) < 3:
        raise OscillationError("ring does not oscillate with these parameters")
    t0, t1 = edges[-2], edges[-1]
    period = t1 - t0
    t = np.arange(keep) * dt
    ts = t0 + period * np.arange(samples) / samples
    states = np.column_stack([np.interp(ts, t, traj[:, i]) for i in range(stage_count)])
    states.setflags(write=False)
    return states, float(period)


def nominal_period(params: InverterParams, stage_count: int = 9) -> float:
    return limit_cycle(stage_count, params.gain, params.v_dd)[1] * params.tau


def build_ring(
    id: str, params: InverterParams, initial_phase: float = 0.0, stage_count: int = 9
) -> RingOscillator:
    """A ring placed on its limit cycle, ``initial_phase`` radians past the
    output stage's rising mid-supply crossing."""
    params.validate()
    if stage_count % 2 == 0:
        raise ValueError("stage_count must be odd")
    states, _ = limit_cycle(stage_count, params.gain, params.v_dd)
    m = len(states)
    x = (initial_phase / (2 * math.pi)) % 1.0 * m
    k = int(math.floor(x))
    frac = x - k
    s = (1 - frac) * states[k % m] + frac * states[(k + 1) % m]
    return RingOscillator(id, params, s.copy(), stage_count)


def free_run(osc: RingOscillator, duration: float, dt: Optional[float] = None, stage: Optional[int] = None):
    """Integrate an isolated ring; returns (times, voltages of ``stage``, final state)."""
    p = osc.params
    dt = dt or p.tau / 40.0
    n = int(round(duration / dt))
    f = lambda v: ring_rhs(v, p.tau, p.v_dd, p.gain)
    col = (stage or osc.stage_count) - 1
    y = osc.state.copy()
    out = np.empty(n + 1)
    out[0] = y[col]
    for k in range(n):
        y = _rk4(f, y, dt)
        out[k + 1] = y[col]
    return np.arange(n + 1) * dt, out, y


def intrinsic_frequency(osc: RingOscillator, periods: int = 20) -> float:
    """Mean reciprocal period over ``periods`` free-running cycles of the output stage.

    Two leading cycles are discarded so a state that starts off the orbit can
    settle. The run length is a generous bound on ``(periods + 2)`` cycles of
    a first-order ring (each cycle < 2 * N * tau).
    """
    p = osc.params
    duration = (periods + 3) * 2 * osc.stage_count * p.tau
    dt = p.tau / 40.0
    _, v, _ = free_run(osc, duration, dt)
    edges = rising_edges(v, p.v_dd / 2, dt)
    tail = v[-len(v) // 3 :]
    swing = float(tail.max() - tail.min())
    if len(edges) < 3 or swing < 0.2 * p.v_dd:
        raise OscillationError(
            f"{osc.id}: no sustained oscillation ({len(edges)} rising crossings, swing {swing:.3g} V)"
        )
    edges = edges[2:] if len(edges) > periods + 2 else edges
    edges = edges[: periods + 1]
    return 1.0 / float(np.mean(np.diff(edges)))
