"""Experiment configuration: a YAML file mapped onto nested dataclasses.

Every model constant has a default here, so an empty file (or no file at all)
reproduces the reference experiments. Unknown keys are rejected to catch typos.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .device import DeviceParams

CONFIG_ENV = "RERAM_ONN_CONFIG"

PATTERNS: dict[str, tuple[int, ...]] = {
    # 2x2 image, row-major: Osc1 top-left, Osc2 top-right, Osc3 bottom-left, Osc4 bottom-right
    "horizontal": (1, 1, -1, -1),
    "vertical": (1, -1, 1, -1),
    "diagonal": (1, -1, -1, 1),
}


class ConfigError(ValueError):
    pass


@dataclass
class OscillatorConfig:
    v_dd: float = 5.0
    gain: float = 10.0
    tau: float = 8.73e-6  # calibrated so the coupled 2x2 network locks near 8.6 kHz
    r_stage: float = 100e3
    stage_count: int = 9
    spread: list[float] = field(default_factory=lambda: [-0.04, -0.015, 0.015, 0.04])


@dataclass
class FabricConfig:
    array_rows: int = 5
    array_cols: int = 5
    series_resistance: float = 47e3
    verify_fraction: float = 0.95
    max_pulses: int = 1000
    forming_ramp: list[float] = field(default_factory=lambda: [2.0, 4.0, 0.05])


@dataclass
class SimulationConfig:
    dt: Union[float, str] = "auto"  # "auto" -> shortest intrinsic period / steps_per_period
    steps_per_period: int = 1100
    free_periods: float = 10.0
    coupled_periods: float = 15.0
    gate_scope: str = "all"
    events: Optional[list[list[Any]]] = None  # [[time_s, "gates_on" | "gates_off"], ...]


@dataclass
class ToggleConfig:
    segment_periods: float = 20.0
    segments: list[str] = field(default_factory=lambda: ["off", "on", "off", "on"])
    settle_periods: float = 5.0

    def __post_init__(self):
        # YAML 1.1 reads bare on/off as booleans
        self.segments = [("on" if s else "off") if isinstance(s, bool) else s for s in self.segments]


@dataclass
class AnalysisConfig:
    lock_window_periods: int = 3
    lock_freq_tol: float = 0.005
    lock_phase_tol: float = 15.0
    pixel_band: float = 60.0
    phase_window_periods: float = 5.0
    reference: int = 0


@dataclass
class CharacterizationConfig:
    cells: int = 25
    set_pulses: int = 300
    reset_pulses: int = 300
    retention_days: float = 60.0
    retention_points: int = 61


@dataclass
class ExperimentConfig:
    seed: int = 2024
    pattern: str = "horizontal"
    custom_pattern: Optional[list[int]] = None
    output_dir: str = "out"
    device: DeviceParams = field(default_factory=DeviceParams)
    oscillator: OscillatorConfig = field(default_factory=OscillatorConfig)
    fabric: FabricConfig = field(default_factory=FabricConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    toggle: ToggleConfig = field(default_factory=ToggleConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    characterization: CharacterizationConfig = field(default_factory=CharacterizationConfig)

    def pattern_vector(self) -> tuple[int, ...]:
        if self.pattern == "custom":
            if not self.custom_pattern:
                raise ConfigError("pattern 'custom' needs custom_pattern")
            return tuple(int(p) for p in self.custom_pattern)
        try:
            return PATTERNS[self.pattern]
        except KeyError:
            raise ConfigError(f"unknown pattern {self.pattern!r}") from None

    def validate(self) -> None:
        pat = self.pattern_vector()
        if any(p not in (-1, 1) for p in pat):
            raise ConfigError("pattern pixels must be +1 or -1")
        if len(pat) != len(self.oscillator.spread):
            raise ConfigError(
                f"pattern has {len(pat)} pixels but {len(self.oscillator.spread)} oscillators are configured"
            )
        rows, cols = self.fabric.array_rows, self.fabric.array_cols
        if len(pat) > min(rows, cols):
            raise ConfigError(f"{len(pat)} neurons do not fit a {rows}x{cols} array")
        dt = self.simulation.dt
        if not (dt == "auto" or (isinstance(dt, (int, float)) and dt > 0)):
            raise ConfigError(f"simulation.dt must be 'auto' or a positive number, got {dt!r}")
        if self.simulation.gate_scope not in ("all", "coupled"):
            raise ConfigError("simulation.gate_scope must be 'all' or 'coupled'")
        for s in self.toggle.segments:
            if s not in ("on", "off"):
                raise ConfigError(f"toggle segment {s!r} is not 'on' or 'off'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls.__name__, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}" if where else name)
        elif name == "forming_clamp":
            kwargs[name] = tuple(float(v) for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


_NESTED = {
    ("ExperimentConfig", "device"): DeviceParams,
    ("ExperimentConfig", "oscillator"): OscillatorConfig,
    ("ExperimentConfig", "fabric"): FabricConfig,
    ("ExperimentConfig", "simulation"): SimulationConfig,
    ("ExperimentConfig", "toggle"): ToggleConfig,
    ("ExperimentConfig", "analysis"): AnalysisConfig,
    ("ExperimentConfig", "characterization"): CharacterizationConfig,
}


def config_from_dict(data: Optional[dict]) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {}, "")
    cfg.validate()
    return cfg


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Load ``path``, else the file named by $RERAM_ONN_CONFIG, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return config_from_dict({})
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    data = cfg.to_dict()
    data["device"]["forming_clamp"] = list(data["device"]["forming_clamp"])
    return yaml.safe_dump(data, sort_keys=False)
