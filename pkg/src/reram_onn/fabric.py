"""Compile signed couplings into a 1T1R crossbar layout and program it.

Layout convention
-----------------
Row line ``r`` and column line ``c`` are driven by neurons ``r`` and ``c``
(0-based). A coupled pair ``i < j`` owns two crosspoints, one per tap pair:

* slot 0 at ``(i, j)``: row of the lower neuron, column of the higher one;
* slot 1 at ``(j, i)``: the mirrored position.

Diagonal crosspoints and anything outside the ``n x n`` block stay redundant
(never formed). Tap stages are 1-based, matching ring-stage numbering.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .device import (
    SET_PULSE,
    DeviceError,
    DeviceParams,
    OneT1R,
    form,
    new_cell,
    program_verify,
)

TAP_A = 7
TAP_B = 8


class ProgrammingError(RuntimeError):
    """A coupled cell failed program-verify; ``report`` lists per-cell status."""

    def __init__(self, message: str, report: list[dict]):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class CouplingMatrix:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=int)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be square")
        if not np.isin(w, (-1, 0, 1)).all():
            raise ValueError("weights must be in {-1, 0, +1}")
        if not np.array_equal(w, w.T):
            raise ValueError("weights must be symmetric")
        if np.any(np.diag(w) != 0):
            raise ValueError("weights must have a zero diagonal")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def nonzero_pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n) for j in range(i + 1, self.n) if self.weights[i, j]]


@dataclass(frozen=True)
class TapWiring:
    kind: str  # "symmetric" | "asymmetric"

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown wiring kind {self.kind!r}")

    @property
    def pairs(self) -> tuple[tuple[int, int], tuple[int, int]]:
        if self.kind == "symmetric":
            return (TAP_A, TAP_A), (TAP_B, TAP_B)
        return (TAP_A, TAP_B), (TAP_B, TAP_A)

    @classmethod
    def for_weight(cls, w: int) -> "TapWiring":
        return cls("symmetric" if w > 0 else "asymmetric")


SYMMETRIC = TapWiring("symmetric")
ASYMMETRIC = TapWiring("asymmetric")


@dataclass(frozen=True)
class Assignment:
    row: int
    col: int
    role: str  # "coupled" | "redundant"
    neuron_i: Optional[int]
    neuron_j: Optional[int]
    wiring: Optional[TapWiring]
    slot: int = 0

    @property
    def cell_id(self) -> str:
        return f"r{self.row}c{self.col}"

    @property
    def taps(self) -> Optional[tuple[int, int]]:
        """(stage on neuron_i, stage on neuron_j) for this crosspoint."""
        if self.wiring is None:
            return None
        return self.wiring.pairs[self.slot]


@dataclass
class CrossbarLayout:
    rows: int
    cols: int
    assignments: list[Assignment]
    input_map: dict[int, list[str]] = field(default_factory=dict)

    def at(self, row: int, col: int) -> Assignment:
        return self.assignments[row * self.cols + col]

    @property
    def coupled(self) -> list[Assignment]:
        return [a for a in self.assignments if a.role == "coupled"]


def connection_count(n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n * (n - 1) // 2


def hebbian_weights(patterns: Sequence[Sequence[int]]) -> CouplingMatrix:
    """Sign-clipped outer-product rule over +/-1 pixel vectors."""
    if len(patterns) == 0:
        raise ValueError("need at least one pattern")
    lengths = {len(p) for p in patterns}
    if len(lengths) != 1:
        raise ValueError(f"patterns have mismatched lengths {sorted(lengths)}")
    xi = np.asarray(patterns, dtype=int)
    if not np.isin(xi, (-1, 1)).all():
        raise ValueError("pixels must be +1 or -1")
    w = np.sign(xi.T @ xi)
    np.fill_diagonal(w, 0)
    return CouplingMatrix(w)


def map_to_crossbar(J: CouplingMatrix, shape: Optional[tuple[int, int]] = None) -> CrossbarLayout:
    n = J.n
    rows, cols = shape if shape is not None else (n, n)
    if n > 1 and (rows < n or cols < n):
        raise ValueError(f"{n} neurons need at least an {n}x{n} array, got {rows}x{cols}")

    assignments = []
    for r in range(rows):
        for c in range(cols):
            on_block = r < n and c < n
            i, j = (min(r, c), max(r, c)) if on_block else (None, None)
            slot = 0 if r <= c else 1
            w = J.weights[i, j] if on_block and i != j else 0
            if w:
                assignments.append(Assignment(r, c, "coupled", i, j, TapWiring.for_weight(w), slot))
            elif on_block:
                # unformed cells still get defined endpoints so the netlist can carry them
                assignments.append(Assignment(r, c, "redundant", i, j, SYMMETRIC, slot))
            else:
                assignments.append(Assignment(r, c, "redundant", None, None, None, slot))

    input_map: dict[int, list[str]] = {k: [] for k in range(n)}
    used_rows = sorted({a.row for a in assignments if a.role == "coupled"})
    used_cols = sorted({a.col for a in assignments if a.role == "coupled"})
    for r in used_rows:
        input_map[r].append(f"R{r}")
    for c in used_cols:
        input_map[c].append(f"C{c}")
    return CrossbarLayout(rows, cols, assignments, input_map)


def make_array(
    rows: int,
    cols: int,
    rng: np.random.Generator,
    params: DeviceParams = DeviceParams(),
) -> list[list[OneT1R]]:
    """Pristine array; forming voltages are drawn row-major from ``rng``."""
    return [
        [OneT1R(new_cell(rng, params), False, params.switch_on_resistance) for _ in range(cols)]
        for _ in range(rows)
    ]


def program_layout(
    layout: CrossbarLayout,
    array: list[list[OneT1R]],
    rng: Optional[np.random.Generator] = None,
    params: DeviceParams = DeviceParams(),
    target_fraction: float = 0.95,
    max_pulses: int = 1000,
    forming_ramp: tuple[float, float, float] = (2.0, 4.0, 0.05),
) -> tuple[list[list[OneT1R]], list[dict]]:
    """Form and program-verify every coupled crosspoint.

    Forming uses a staircase ``(start, stop, step)``; the first step at or above
    a cell's forming voltage forms it. Redundant cells are not touched. ``rng``
    is accepted for call-site symmetry; the procedure itself is deterministic.
    """
    if len(array) != layout.rows or any(len(row) != layout.cols for row in array):
        raise ValueError("array dimensions do not match layout")
    start, stop, step = forming_ramp
    ramp = np.arange(start, stop + step / 2, step)

    out = [list(row) for row in array]
    log: list[dict] = []
    failures = []
    for a in layout.coupled:
        dev = out[a.row][a.col]
        cell = dev.cell
        applied = None
        for v in ramp:
            cell = form(cell, float(v), params)
            if cell.formed:
                applied = float(v)
                break
        entry = {"cell_id": a.cell_id, "forming_voltage": dev.cell.forming_voltage, "forming_applied": applied}
        if not cell.formed:
            entry.update(pulses=0, final_conductance=cell.conductance_base, status="form-failed")
            failures.append(entry)
            log.append(entry)
            continue
        try:
            cell, n = program_verify(cell, target_fraction * cell.g_max, SET_PULSE, max_pulses, params)
            entry.update(pulses=n, final_conductance=cell.conductance_base, status="ok")
        except DeviceError as exc:
            entry.update(pulses=max_pulses, final_conductance=cell.conductance_base, status=str(exc))
            failures.append(entry)
        log.append(entry)
        out[a.row][a.col] = replace(dev, cell=cell)

    if failures:
        raise ProgrammingError(f"{len(failures)} cell(s) failed programming", log)
    return out, log


def write_layout_csv(path, layout: CrossbarLayout) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "role", "neuron_i", "neuron_j", "wiring"])
        for a in layout.assignments:
            w.writerow([
                a.row,
                a.col,
                a.role,
                "" if a.neuron_i is None else a.neuron_i + 1,
                "" if a.neuron_j is None else a.neuron_j + 1,
                "" if a.wiring is None else f"{a.wiring.kind}:{a.taps[0]}-{a.taps[1]}",
            ])


def write_programming_log(path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "pulses", "final_conductance"])
        for e in log:
            w.writerow([e["cell_id"], e["pulses"], f"{e['final_conductance']:.9e}"])
