"""One-at-a-time steady-state sensitivity analysis.

Intra-class: each parameter of a class sweeps an even grid over its range;
for every variable of that class the cell is the mean fractional change of
the steady-state value relative to the baseline run. Inter-class: a source
variable is clamped across its range while every other influencing class of
the target is clamped at initial values, measuring how the target's steady
state shifts.

All perturbation runs integrate to the full horizon cap; convergence is
judged afterwards on the final two windows. Cutting runs short at the first
quiet window would sample damped oscillations at arbitrary phases and wreck
finite-difference agreement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from urllib.parse import quote, unquote

from .errors import (
    InvalidSpec,
    MalformedKnowledgeFile,
    MissingRelationships,
    NumericalDivergence,
    StorageFailure,
    TrajectoryTooShort,
    UnknownClass,
)
from .kernel import ClampDirective, Model, SimClock, Trajectory
from .knowledge import RelationshipMatrix, influencers_of


@dataclass(frozen=True)
class PerturbationPlan:
    samples_per_range: int = 5
    steady_window: int = 50
    steady_tolerance: float = 1e-4
    horizon_cap: int = 5000
    denominator_floor: float = 1e-12

    def validate(self) -> None:
        if self.samples_per_range < 3:
            raise InvalidSpec("samples_per_range must be >= 3")
        if self.steady_window < 2:
            raise InvalidSpec("steady_window must be >= 2")
        if self.steady_tolerance <= 0 or self.denominator_floor <= 0:
            raise InvalidSpec("tolerances must be positive")
        if self.horizon_cap < 2 * self.steady_window:
            raise InvalidSpec("horizon_cap must cover two steady windows")


@dataclass(frozen=True)
class SteadyStateSummary:
    variable: tuple[int, str]
    value: float
    converged: bool
    steps_used: int


@dataclass
class IntraSensitivityMatrix:
    class_code: int
    rows: list[str]  # variable names
    cols: list[str]  # parameter names
    cells: list[list[float]]
    warnings: list[str] = field(default_factory=list)

    def cell(self, variable: str, parameter: str) -> float:
        return self.cells[self.rows.index(variable)][self.cols.index(parameter)]


@dataclass
class InterSensitivityMatrix:
    classes: list[int]
    entries: dict[tuple[tuple[int, str], tuple[int, str]], float]
    skipped: list[tuple[int, str, int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for (src, dst) in self.entries:
            if src[0] == dst[0]:
                raise InvalidSpec(f"same-class sensitivity pair {src} -> {dst}")

    def entry(self, src: tuple[int, str], dst: tuple[int, str]) -> float:
        return self.entries[(src, dst)]


def cap_clock(model: Model, plan: PerturbationPlan) -> SimClock:
    base = model.default_clock
    if base is None:
        raise InvalidSpec("model carries no default clock; set model.default_clock")
    return SimClock(t0=base.t0, dt=base.dt, horizon=base.t0 + plan.horizon_cap * base.dt)


def steady_state_value(
    trajectory: Trajectory, variable, plan: PerturbationPlan
) -> SteadyStateSummary:
    """Mean of the final window, with convergence judged between the final
    two windows. Oscillatory series never error: converged is just false."""
    if isinstance(variable, str):
        cls, _, var = variable.partition(".")
        code = int(cls) if cls.isdigit() else trajectory.code_of(cls)
    else:
        code, var = variable
    series = trajectory.get(code, var)
    w = plan.steady_window
    if len(series) < 2 * w:
        raise TrajectoryTooShort(
            f"{len(series)} samples < 2 windows of {w}"
        )
    last = math.fsum(series[-w:]) / w
    prev = math.fsum(series[-2 * w:-w]) / w
    rel = abs(last - prev) / max(abs(prev), plan.denominator_floor)
    return SteadyStateSummary(
        variable=(code, var),
        value=last,
        converged=rel <= plan.steady_tolerance,
        steps_used=len(series) - 1,
    )


def _grid(lo: float, hi: float, k: int) -> list[float]:
    # endpoints are pinned: the midpoint formula can overshoot hi by an ulp,
    # which a range-checked parameter write would reject
    inner = [lo + i * (hi - lo) / (k - 1) for i in range(1, k - 1)]
    return [lo] + inner + [hi]


def _with_baseline(grid: list[float], baseline: float) -> list[float]:
    if baseline in grid:
        return grid
    return sorted(grid + [baseline])


def intra_sensitivity(
    model: Model, class_code: int, plan: PerturbationPlan = PerturbationPlan()
) -> IntraSensitivityMatrix:
    """Variable-by-parameter fractional-change matrix for one class."""
    plan.validate()
    idx = model.index_of(class_code)
    spec = model.specs[idx]
    clock = cap_clock(model, plan)
    rows = [v.name for v in spec.variables]
    cols = [p.name for p in spec.parameters]
    warnings: list[str] = []

    base_model = model.clone()
    base_values: Optional[dict[str, float]] = None
    try:
        base_traj = base_model.run(clock)
        base_values = {}
        for var in rows:
            summary = steady_state_value(base_traj, (spec.code, var), plan)
            base_values[var] = summary.value
            if not summary.converged:
                warnings.append(f"baseline not converged for {spec.name}.{var}")
    except NumericalDivergence as err:
        warnings.append(f"baseline run diverged: {err}; all cells zeroed")

    cells = [[0.0 for _ in cols] for _ in rows]
    if base_values is not None:
        for ci, pspec in enumerate(spec.parameters):
            p0 = model.parameter(class_code, pspec.name)
            samples = _with_baseline(_grid(pspec.min, pspec.max, plan.samples_per_range), p0)
            deltas: dict[str, list[float]] = {var: [] for var in rows}
            survivors = 0
            for value in samples:
                if value == p0:
                    continue
                probe = model.clone()
                probe.default_clock = model.default_clock
                probe.set_parameter(class_code, pspec.name, value)
                try:
                    traj = probe.run(clock)
                except NumericalDivergence as err:
                    warnings.append(
                        f"intra {spec.name}.{pspec.name}={value!r} diverged: {err}"
                    )
                    continue
                survivors += 1
                for var in rows:
                    v_bar = steady_state_value(traj, (spec.code, var), plan).value
                    v0 = base_values[var]
                    denom = max(abs(v0), plan.denominator_floor)
                    if abs(v0) < plan.denominator_floor and v_bar != v0:
                        warnings.append(
                            f"floor denominator used for {spec.name}.{var}/{pspec.name}"
                        )
                    deltas[var].append((v_bar - v0) / denom)
            if survivors == 0:
                warnings.append(
                    f"no surviving samples for {spec.name}.{pspec.name}; column zeroed"
                )
                continue
            for ri, var in enumerate(rows):
                cells[ri][ci] = math.fsum(deltas[var]) / len(deltas[var])

    return IntraSensitivityMatrix(
        class_code=spec.code, rows=rows, cols=cols, cells=cells, warnings=warnings
    )


def analyze_intra_all(
    model: Model, plan: PerturbationPlan = PerturbationPlan()
) -> dict[int, IntraSensitivityMatrix]:
    return {spec.code: intra_sensitivity(model, spec.code, plan) for spec in model.specs}


def inter_sensitivity(
    model: Model,
    relationships: Optional[RelationshipMatrix],
    plan: PerturbationPlan = PerturbationPlan(),
) -> InterSensitivityMatrix:
    """Variable-to-variable fractional-change entries across influence edges.

    For an edge source -> target, the source variable is clamped across its
    range; every variable of every OTHER class influencing the target is
    clamped at its initial value so only the probed pathway moves. Source
    variables without a declared range are skipped and recorded.
    """
    plan.validate()
    if relationships is None:
        raise MissingRelationships("run discovery first")
    model_codes = sorted(spec.code for spec in model.specs)
    if sorted(relationships.classes) != model_codes:
        raise MissingRelationships(
            f"relationships census {sorted(relationships.classes)} does not match "
            f"model census {model_codes}; rerun discovery"
        )
    clock = cap_clock(model, plan)
    by_code = {spec.code: spec for spec in model.specs}
    entries: dict[tuple[tuple[int, str], tuple[int, str]], float] = {}
    skipped: list[tuple[int, str, int, str]] = []
    warnings: list[str] = []

    for src_code, dst_code in relationships.influence_pairs():
        src_spec = by_code[src_code]
        dst_spec = by_code[dst_code]
        others = [c for c in influencers_of(relationships, dst_code) if c != src_code]
        frozen = [
            ClampDirective((code, v.name), v.initial)
            for code in others
            for v in by_code[code].variables
        ]
        dst_vars = [v.name for v in dst_spec.variables]
        for svar in src_spec.variables:
            if not svar.has_range:
                skipped.append((src_code, svar.name, dst_code, "no-range"))
                continue
            v0 = svar.initial
            samples = _with_baseline(_grid(svar.min, svar.max, plan.samples_per_range), v0)

            def run_clamped(value: float):
                probe = model.clone()
                probe.default_clock = model.default_clock
                clamps = frozen + [ClampDirective((src_code, svar.name), value)]
                traj = probe.run(clock, clamps)
                return {
                    dv: steady_state_value(traj, (dst_code, dv), plan).value
                    for dv in dst_vars
                }

            try:
                base_values = run_clamped(v0)
            except NumericalDivergence as err:
                warnings.append(
                    f"inter baseline {src_spec.name}.{svar.name} clamped at {v0!r} "
                    f"diverged: {err}; edge to {dst_spec.name} zeroed"
                )
                for dv in dst_vars:
                    entries[((src_code, svar.name), (dst_code, dv))] = 0.0
                continue
            deltas: dict[str, list[float]] = {dv: [] for dv in dst_vars}
            survivors = 0
            for value in samples:
                if value == v0:
                    continue
                try:
                    sample_values = run_clamped(value)
                except NumericalDivergence as err:
                    warnings.append(
                        f"inter {src_spec.name}.{svar.name}={value!r} -> "
                        f"{dst_spec.name} diverged: {err}"
                    )
                    continue
                survivors += 1
                for dv in dst_vars:
                    vb = base_values[dv]
                    denom = max(abs(vb), plan.denominator_floor)
                    if abs(vb) < plan.denominator_floor and sample_values[dv] != vb:
                        warnings.append(
                            f"floor denominator used for {src_spec.name}.{svar.name} -> "
                            f"{dst_spec.name}.{dv}"
                        )
                    deltas[dv].append((sample_values[dv] - vb) / denom)
            if survivors == 0:
                warnings.append(
                    f"no surviving samples for {src_spec.name}.{svar.name} -> "
                    f"{dst_spec.name}; entries zeroed"
                )
                for dv in dst_vars:
                    entries[((src_code, svar.name), (dst_code, dv))] = 0.0
                continue
            for dv in dst_vars:
                entries[((src_code, svar.name), (dst_code, dv))] = (
                    math.fsum(deltas[dv]) / len(deltas[dv])
                )

    return InterSensitivityMatrix(
        classes=[spec.code for spec in model.specs],
        entries=entries,
        skipped=skipped,
        warnings=warnings,
    )


# -- persistence -----------------------------------------------------------------
#
# File grammar, one record per line:
#   intra <class-code>
#   cols <param> <param> ...
#   row <var> <cell> <cell> ...
#   warn <percent-quoted-text>          (belongs to the open intra section)
#   inter
#   classes <code> <code> ...
#   edge <srccode>.<var> <dstcode>.<var> <value>
#   skip <srccode>.<var> <dstcode> <percent-quoted-reason>
#   warn <percent-quoted-text>          (after `inter`: belongs to it)
# Decimal cells use the shortest round-trip rendering.


def serialize_sensitivities(
    intra: dict[int, IntraSensitivityMatrix], inter: Optional[InterSensitivityMatrix]
) -> str:
    lines: list[str] = []
    for code in sorted(intra):
        m = intra[code]
        lines.append(f"intra {m.class_code}")
        lines.append("cols" + "".join(f" {c}" for c in m.cols))
        for var, row in zip(m.rows, m.cells):
            lines.append(f"row {var}" + "".join(f" {c!r}" for c in row))
        for w in m.warnings:
            lines.append(f"warn {quote(w, safe='')}")
    if inter is not None:
        lines.append("inter")
        lines.append("classes" + "".join(f" {c}" for c in inter.classes))
        for (src, dst) in sorted(inter.entries):
            value = inter.entries[(src, dst)]
            lines.append(f"edge {src[0]}.{src[1]} {dst[0]}.{dst[1]} {value!r}")
        for (sc, sv, dc, reason) in inter.skipped:
            lines.append(f"skip {sc}.{sv} {dc} {quote(reason, safe='')}")
        for w in inter.warnings:
            lines.append(f"warn {quote(w, safe='')}")
    return "\n".join(lines) + "\n"


def save_sensitivities(
    intra: dict[int, IntraSensitivityMatrix],
    inter: Optional[InterSensitivityMatrix],
    destination,
) -> None:
    try:
        Path(destination).write_text(serialize_sensitivities(intra, inter))
    except OSError as err:
        raise StorageFailure(f"cannot write {destination}: {err}")


def _parse_qualified(token: str, origin: str, lineno: int) -> tuple[int, str]:
    cls, dot, var = token.partition(".")
    if not dot or not cls.isdigit() or not var:
        raise MalformedKnowledgeFile(
            f"{origin}:{lineno}: expected <code>.<variable>, got {token!r}"
        )
    return int(cls), var


def loads_sensitivities(
    text: str, origin: str = "<string>"
) -> tuple[dict[int, IntraSensitivityMatrix], Optional[InterSensitivityMatrix]]:
    intra: dict[int, IntraSensitivityMatrix] = {}
    current: Optional[IntraSensitivityMatrix] = None
    inter: Optional[InterSensitivityMatrix] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "intra":
            if inter is not None:
                raise MalformedKnowledgeFile(
                    f"{origin}:{lineno}: intra section after inter section"
                )
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: expected 'intra <code>'")
            code = int(tokens[1])
            if code in intra:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: duplicate intra {code}")
            current = IntraSensitivityMatrix(
                class_code=code, rows=[], cols=[], cells=[], warnings=[]
            )
            intra[code] = current
        elif head == "cols":
            if current is None or inter is not None:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: cols outside intra section")
            if current.cols:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: duplicate cols line")
            current.cols = tokens[1:]
        elif head == "row":
            if current is None or inter is not None:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: row outside intra section")
            if len(tokens) < 2:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: row needs a variable name")
            var = tokens[1]
            try:
                cells = [float(t) for t in tokens[2:]]
            except ValueError:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: non-numeric cell")
            if len(cells) != len(current.cols):
                raise MalformedKnowledgeFile(
                    f"{origin}:{lineno}: {len(cells)} cells for {len(current.cols)} cols"
                )
            current.rows.append(var)
            current.cells.append(cells)
        elif head == "inter":
            if len(tokens) != 1 or inter is not None:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: bad inter header")
            current = None
            inter = InterSensitivityMatrix(classes=[], entries={}, skipped=[], warnings=[])
        elif head == "classes":
            if inter is None:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: classes outside inter")
            try:
                inter.classes = [int(t) for t in tokens[1:]]
            except ValueError:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: non-integer class code")
        elif head == "edge":
            if inter is None:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: edge outside inter section")
            if len(tokens) != 4:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: edge needs 3 fields")
            src = _parse_qualified(tokens[1], origin, lineno)
            dst = _parse_qualified(tokens[2], origin, lineno)
            if src[0] == dst[0]:
                raise MalformedKnowledgeFile(
                    f"{origin}:{lineno}: same-class pair {tokens[1]} -> {tokens[2]}"
                )
            try:
                value = float(tokens[3])
            except ValueError:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: non-numeric edge value")
            inter.entries[(src, dst)] = value
        elif head == "skip":
            if inter is None or len(tokens) != 4:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: bad skip line")
            src = _parse_qualified(tokens[1], origin, lineno)
            if not tokens[2].isdigit():
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: bad skip target class")
            inter.skipped.append((src[0], src[1], int(tokens[2]), unquote(tokens[3])))
        elif head == "warn":
            message = unquote(line.partition(" ")[2])
            if inter is not None:
                inter.warnings.append(message)
            elif current is not None:
                current.warnings.append(message)
            else:
                raise MalformedKnowledgeFile(f"{origin}:{lineno}: warn outside any section")
        else:
            raise MalformedKnowledgeFile(f"{origin}:{lineno}: unknown record {head!r}")
    return intra, inter


def load_sensitivities(source):
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as err:
        raise StorageFailure(f"cannot read {path}: {err}")
    return loads_sensitivities(text, origin=str(path))
