"""Sensitivity-guided calibration agent plus a random-search baseline.

The agent repeatedly picks the worst-fitting target variable, asks the
knowledge matrices which parameter moves it hardest (its own class's best
parameter, or the best parameter of an influencing variable's class when
that chain is stronger), sweeps that parameter across its full range, and
keeps the best value that does not sacrifice reliability. Rounds repeat
until the goal is met, improvement stalls, or budget runs out.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import (
    InconsistentKnowledge,
    InvalidSpec,
    MissingKnowledge,
    NoObservations,
    NumericalDivergence,
)
from .fitness import FitReport, ObservationSet, evaluate, normalize_target, worst_fit
from .kernel import Model
from .knowledge import RelationshipMatrix
from .sensitivity import InterSensitivityMatrix, IntraSensitivityMatrix

GOAL_REACHED = "GoalReached"
STABILIZED = "Stabilized"
MAX_ROUNDS = "MaxRounds"
BUDGET_EXHAUSTED = "BudgetExhausted"
USER_ABORT = "UserAbort"


@dataclass(frozen=True)
class Driver:
    kind: str  # "Direct" | "Indirect"
    parameter: tuple[int, str]  # (class code, parameter name)
    via: Optional[tuple[int, str]]  # (class code, variable name) when Indirect
    expected_sign: int  # +1 | -1
    magnitude: float = field(default=0.0, compare=False)

    def describe(self, names: dict[int, str]) -> str:
        code, pname = self.parameter
        base = f"{self.kind} {names.get(code, code)}.{pname}"
        if self.via is not None:
            vc, vv = self.via
            base += f" via {names.get(vc, vc)}.{vv}"
        sign = "+" if self.expected_sign >= 0 else "-"
        return f"{base} (expected {sign})"


@dataclass(frozen=True)
class AgentConfig:
    sweep_samples: int = 7
    lof_goal: float = 0.1
    reliability_slack: float = 0.05
    improvement_epsilon: float = 1e-3
    max_rounds: int = 10
    run_budget: Optional[int] = None

    def validate(self) -> None:
        if self.sweep_samples < 3:
            raise InvalidSpec("sweep_samples must be >= 3")
        if self.lof_goal <= 0 or self.reliability_slack <= 0 or self.improvement_epsilon <= 0:
            raise InvalidSpec("tolerances must be positive")
        if self.max_rounds < 1:
            raise InvalidSpec("max_rounds must be >= 1")
        if self.run_budget is not None and self.run_budget < 1:
            raise InvalidSpec("run_budget must be >= 1 when set")


@dataclass
class SweepRecord:
    target: str
    driver: Driver
    tried: list[tuple[float, Optional[FitReport]]]
    chosen: float
    accepted: bool


@dataclass
class CalibrationResult:
    best_parameters: dict[tuple[str, str], float]
    rounds: list[FitReport]  # rounds[0] is the pre-calibration baseline
    sweeps: list[SweepRecord]
    total_runs: int
    stop_reason: str
    lof_trace: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class KnowledgeBundle:
    relationships: RelationshipMatrix
    intra: dict[int, IntraSensitivityMatrix]
    inter: InterSensitivityMatrix

    def validate(self, model: Optional[Model] = None) -> None:
        census = sorted(self.relationships.classes)
        if sorted(self.intra.keys()) != census:
            raise InconsistentKnowledge(
                f"intra census {sorted(self.intra.keys())} != relationships census {census}"
            )
        for code, matrix in self.intra.items():
            if matrix.class_code != code:
                raise InconsistentKnowledge(f"intra matrix for {code} labeled {matrix.class_code}")
        if sorted(self.inter.classes) != census:
            raise InconsistentKnowledge(
                f"inter census {sorted(self.inter.classes)} != relationships census {census}"
            )
        for (src, dst) in self.inter.entries:
            if src[0] not in self.relationships.classes or dst[0] not in self.relationships.classes:
                raise InconsistentKnowledge(f"inter entry {src}->{dst} outside census")
        if model is not None:
            model_census = sorted(spec.code for spec in model.specs)
            if model_census != census:
                raise InconsistentKnowledge(
                    f"model census {model_census} != knowledge census {census}"
                )


def build_bundle(model: Model, plan=None, training_steps: int = 100) -> KnowledgeBundle:
    """Discover relationships and analyse both sensitivity kinds in one go."""
    from .knowledge import default_training_clock, discover
    from .sensitivity import PerturbationPlan, analyze_intra_all, inter_sensitivity

    if plan is None:
        plan = PerturbationPlan()
    clock = model.default_clock
    if clock is None:
        raise InvalidSpec("model carries no default clock")
    rel = discover(model, default_training_clock(clock, training_steps))
    intra = analyze_intra_all(model, plan)
    inter = inter_sensitivity(model, rel, plan)
    return KnowledgeBundle(relationships=rel, intra=intra, inter=inter)


def _sign(x: float) -> int:
    if x > 0:
        return 1
    if x < 0:
        return -1
    return 0


def _resolve_target(target, matrix: RelationshipMatrix) -> tuple[int, str]:
    key = normalize_target(target)
    cls, _, var = key.partition(".")
    if cls.isdigit():
        return int(cls), var
    for code, name in matrix.names.items():
        if name == cls:
            return code, var
    raise InconsistentKnowledge(f"target class {cls!r} not in knowledge census")


def select_driver(target, bundle: KnowledgeBundle, exclusions: Iterable = ()) -> Optional[Driver]:
    """Strongest lever for the target: best own-class parameter, or the best
    (influencing variable, its best parameter) chain when the product of the
    chain's magnitudes is larger. Excluded parameters are skipped."""
    bundle.validate()
    tcode, tvar = _resolve_target(target, bundle.relationships)
    excluded = set(exclusions)
    names = bundle.relationships.names
    candidates: list[tuple[float, str, str, Driver]] = []

    own = bundle.intra.get(tcode)
    if own is not None and tvar in own.rows:
        ri = own.rows.index(tvar)
        for ci, pname in enumerate(own.cols):
            cell = own.cells[ri][ci]
            if cell == 0.0 or (tcode, pname) in excluded:
                continue
            candidates.append(
                (
                    abs(cell),
                    names.get(tcode, str(tcode)),
                    pname,
                    Driver("Direct", (tcode, pname), None, _sign(cell), abs(cell)),
                )
            )

    for (src, dst), inter_cell in bundle.inter.entries.items():
        if dst != (tcode, tvar) or inter_cell == 0.0:
            continue
        zcode, zvar = src
        zmatrix = bundle.intra.get(zcode)
        if zmatrix is None or zvar not in zmatrix.rows:
            continue
        ri = zmatrix.rows.index(zvar)
        for ci, pname in enumerate(zmatrix.cols):
            cell = zmatrix.cells[ri][ci]
            if cell == 0.0 or (zcode, pname) in excluded:
                continue
            magnitude = abs(inter_cell) * abs(cell)
            candidates.append(
                (
                    magnitude,
                    names.get(zcode, str(zcode)),
                    pname,
                    Driver(
                        "Indirect",
                        (zcode, pname),
                        (zcode, zvar),
                        _sign(inter_cell) * _sign(cell),
                        magnitude,
                    ),
                )
            )

    if not candidates:
        return None
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    return candidates[0][3]


class _Stop(Exception):
    def __init__(self, reason: str):
        self.reason = reason


class _RunCounter:
    """Counts every kernel run; enforces budget and abort at run boundaries."""

    def __init__(self, budget: Optional[int], abort_signal):
        self.runs = 0
        self.budget = budget
        self.abort_signal = abort_signal
        self.lof_trace: list[tuple[int, float]] = []

    def preflight(self) -> None:
        if self.abort_signal is not None and self.abort_signal.is_set():
            raise _Stop(USER_ABORT)
        if self.budget is not None and self.runs >= self.budget:
            raise _Stop(BUDGET_EXHAUSTED)

    def count(self, report: Optional[FitReport]) -> None:
        self.runs += 1
        if report is not None and math.isfinite(report.aggregate_lof):
            self.lof_trace.append((self.runs, report.aggregate_lof))


def _evaluate_candidate(
    model: Model,
    observations: ObservationSet,
    targets: list[str],
    counter: _RunCounter,
) -> Optional[FitReport]:
    counter.preflight()
    model.reset()
    try:
        trajectory = model.run(model.default_clock)
    except NumericalDivergence:
        counter.count(None)
        return None
    report = evaluate(trajectory, observations, targets)
    counter.count(report)
    return report


def sweep(
    model: Model,
    driver: Driver,
    observations: ObservationSet,
    targets: Iterable,
    config: AgentConfig,
    baseline_report: FitReport,
    _counter: Optional[_RunCounter] = None,
    _target_key: Optional[str] = None,
) -> tuple[SweepRecord, FitReport]:
    """Full-range grid sweep of the driver parameter.

    The side of the range expected to shift the target toward the
    observations is evaluated first (nearest values first), then the
    baseline, then the far side; coverage is always complete. The chosen
    value minimizes aggregate lack of fit among candidates whose
    reliability stays within the slack of the baseline's; ties go to the
    value nearest the baseline. The model is left with the chosen value.
    """
    config.validate()
    counter = _counter if _counter is not None else _RunCounter(None, None)
    target_list = [normalize_target(t) for t in targets]
    code, pname = driver.parameter
    idx = model.index_of(code)
    pspec = next(p for p in model.specs[idx].parameters if p.name == pname)
    p0 = model.parameter(code, pname)

    k = config.sweep_samples
    # endpoints pinned so candidates never overshoot the declared range
    inner = [pspec.min + i * (pspec.max - pspec.min) / (k - 1) for i in range(1, k - 1)]
    grid = [pspec.min] + inner + [pspec.max]
    if p0 not in grid:
        grid = sorted(grid + [p0])

    target_key = _target_key if _target_key is not None else target_list[0]
    bias = baseline_report.per_variable_bias.get(target_key, 0.0)
    direction = driver.expected_sign * _sign(bias)
    above = sorted(v for v in grid if v > p0)
    below = sorted((v for v in grid if v < p0), reverse=True)
    if direction < 0:
        order = below + [p0] + above
    else:
        order = above + [p0] + below

    tried: list[tuple[float, Optional[FitReport]]] = []
    try:
        for value in order:
            if value == p0:
                tried.append((value, baseline_report))
                continue
            model.set_parameter(code, pname, value)
            tried.append((value, _evaluate_candidate(model, observations, target_list, counter)))
    except _Stop:
        model.set_parameter(code, pname, p0)
        raise

    floor = baseline_report.reliability - config.reliability_slack
    qualifying = [
        (value, report)
        for value, report in tried
        if report is not None and report.reliability >= floor
    ]
    if qualifying:
        chosen, chosen_report = min(
            qualifying, key=lambda vr: (vr[1].aggregate_lof, abs(vr[0] - p0), vr[0])
        )
    else:
        chosen, chosen_report = p0, baseline_report
    accepted = chosen_report.aggregate_lof < baseline_report.aggregate_lof
    if not accepted:
        chosen, chosen_report = p0, baseline_report

    model.set_parameter(code, pname, chosen)
    record = SweepRecord(
        target=target_key,
        driver=driver,
        tried=tried,
        chosen=chosen,
        accepted=accepted,
    )
    return record, chosen_report


def calibrate(
    model: Model,
    observations: ObservationSet,
    targets: Optional[Iterable] = None,
    bundle: Optional[KnowledgeBundle] = None,
    config: AgentConfig = AgentConfig(),
    abort_signal=None,
    progress=None,
) -> CalibrationResult:
    """Run calibration rounds until a stop condition fires.

    Within a round the agent repeatedly attacks the currently worst target,
    excluding each swept driver for that target as it goes; a target is done
    for the round only when no usable driver remains for it. The round ends
    when every target is done.
    """
    config.validate()
    if bundle is None:
        raise MissingKnowledge("calibrate needs a KnowledgeBundle; run build_bundle first")
    bundle.validate(model)
    if len(observations) == 0:
        raise NoObservations("observation set is empty")
    if targets is None:
        target_list = observations.targets()
    else:
        target_list = [normalize_target(t) for t in targets]
    if not target_list:
        raise NoObservations("no calibration targets")
    observed = set(observations.targets())
    for t in target_list:
        if t not in observed:
            raise NoObservations(f"no observations for target {t}")

    def report_progress(phase: str, detail: str, counter: _RunCounter) -> None:
        if progress is not None:
            progress(phase, detail, counter.runs)

    counter = _RunCounter(config.run_budget, abort_signal)
    sweeps: list[SweepRecord] = []
    rounds: list[FitReport] = []
    stop_reason = MAX_ROUNDS
    current: Optional[FitReport] = None

    try:
        baseline = _evaluate_candidate(model, observations, target_list, counter)
        if baseline is None:
            raise InvalidSpec("baseline run diverged; calibration cannot start")
        rounds.append(baseline)
        current = baseline
        report_progress("Calibrate", "baseline", counter)
        if current.aggregate_lof <= config.lof_goal:
            raise _Stop(GOAL_REACHED)

        for round_no in range(1, config.max_rounds + 1):
            round_start = current.aggregate_lof
            done: set[str] = set()
            exclusions: dict[str, set[tuple[int, str]]] = {t: set() for t in target_list}
            while True:
                y = worst_fit(current, target_list, exclusions=done)
                if y is None:
                    break
                driver = select_driver(y, bundle, exclusions[y])
                if driver is None:
                    done.add(y)
                    continue
                record, best_report = sweep(
                    model,
                    driver,
                    observations,
                    target_list,
                    config,
                    current,
                    _counter=counter,
                    _target_key=y,
                )
                sweeps.append(record)
                exclusions[y].add(driver.parameter)
                report_progress(
                    "Calibrate",
                    f"round {round_no} target {y} driver "
                    f"{driver.describe(bundle.relationships.names)} "
                    f"chosen {record.chosen!r}",
                    counter,
                )
                if best_report.aggregate_lof < current.aggregate_lof:
                    current = best_report
                if current.aggregate_lof <= config.lof_goal:
                    raise _Stop(GOAL_REACHED)
            rounds.append(current)
            improvement = (round_start - current.aggregate_lof) / max(round_start, 1e-300)
            if improvement < config.improvement_epsilon:
                raise _Stop(STABILIZED)
    except _Stop as stop:
        stop_reason = stop.reason
        # record the in-progress round's state unless it is already recorded
        if current is not None and (not rounds or rounds[-1] is not current):
            rounds.append(current)

    return CalibrationResult(
        best_parameters=model.parameter_vector(),
        rounds=rounds,
        sweeps=sweeps,
        total_runs=counter.runs,
        stop_reason=stop_reason,
        lof_trace=counter.lof_trace,
    )


def random_search(
    model: Model,
    observations: ObservationSet,
    targets: Optional[Iterable] = None,
    budget: int = 100,
    seed: int = 0,
    stop_at_lof: Optional[float] = None,
) -> CalibrationResult:
    """Uninformed baseline: uniform parameter vectors from a seeded stream.

    Evaluates up to `budget` vectors, keeps the best. With `stop_at_lof` the
    search stops early once the best fit reaches that level, which makes
    run-count comparisons against the agent direct.
    """
    if budget < 1:
        raise InvalidSpec("budget must be >= 1")
    if len(observations) == 0:
        raise NoObservations("observation set is empty")
    target_list = (
        [normalize_target(t) for t in targets] if targets is not None else observations.targets()
    )
    rng = random.Random(seed)
    counter = _RunCounter(None, None)
    best_report: Optional[FitReport] = None
    best_vector: dict[tuple[str, str], float] = model.parameter_vector()
    stop_reason = BUDGET_EXHAUSTED

    for _ in range(budget):
        vector = {}
        for spec in model.specs:
            for p in spec.parameters:
                vector[(spec.name, p.name)] = rng.uniform(p.min, p.max)
        model.apply_parameter_vector(vector)
        report = _evaluate_candidate(model, observations, target_list, counter)
        if report is None:
            continue
        if best_report is None or report.aggregate_lof < best_report.aggregate_lof:
            best_report = report
            best_vector = dict(vector)
        if stop_at_lof is not None and best_report.aggregate_lof <= stop_at_lof:
            stop_reason = GOAL_REACHED
            break

    model.apply_parameter_vector(best_vector)
    return CalibrationResult(
        best_parameters=dict(best_vector),
        rounds=[best_report] if best_report is not None else [],
        sweeps=[],
        total_runs=counter.runs,
        stop_reason=stop_reason,
        lof_trace=counter.lof_trace,
    )
