"""Fit metrics: lack of fit, adequacy, and reliability.

Predictions are interpolated linearly at observation times. A record is
matched when its target variable exists in the trajectory and its time lies
within the simulated span. Per variable, lack of fit is the RMSE over
matched records divided by the population standard deviation of that
variable's observed values, so the score is unit-free and comparable across
variables. Adequacy is the matched fraction of all records; reliability is
the fraction of matched records whose prediction falls inside the record's
tolerance band (default half-width: twice the observed standard deviation).
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import EmptyTrajectory, InvalidSpec, NoObservations
from .kernel import Trajectory


@dataclass(frozen=True)
class ObservationRecord:
    time: float  # seconds
    target: str  # "ClassName.VariableName"
    value: float
    band: Optional[float] = None  # half-width; None means default 2*sigma

    def validate(self) -> None:
        if self.time < 0:
            raise InvalidSpec(f"observation time {self.time!r} is negative")
        if self.band is not None and self.band < 0:
            raise InvalidSpec(f"observation band {self.band!r} is negative")
        if "." not in self.target:
            raise InvalidSpec(f"observation target {self.target!r} is not Class.Variable")


@dataclass(frozen=True)
class ObservationSet:
    records: tuple[ObservationRecord, ...]

    def __post_init__(self):
        for r in self.records:
            r.validate()

    def __len__(self) -> int:
        return len(self.records)

    def targets(self) -> list[str]:
        seen = []
        for r in self.records:
            if r.target not in seen:
                seen.append(r.target)
        return sorted(seen)

    def of_target(self, target: str) -> list[ObservationRecord]:
        return [r for r in self.records if r.target == target]


@dataclass(frozen=True)
class FitReport:
    per_variable_lof: dict[str, float]
    aggregate_lof: float
    adequacy: float
    reliability: float
    matched: int
    total: int
    per_variable_bias: dict[str, float] = field(default_factory=dict)


def normalize_target(target) -> str:
    """Accepts "Class.var", (class_name, var), or (code, var) with a map."""
    if isinstance(target, str):
        return target
    cls, var = target
    return f"{cls}.{var}"


def _target_series(trajectory: Trajectory, target: str):
    cls, _, var = target.partition(".")
    if cls.isdigit():
        code = int(cls)
    else:
        code = None
        for c, name in trajectory.names.items():
            if name == cls:
                code = c
                break
        if code is None:
            return None
    return trajectory.series.get((code, var))


def interpolate(times: Sequence[float], values: Sequence[float], t: float) -> float:
    """Linear interpolation; t must lie within [times[0], times[-1]]."""
    i = bisect_left(times, t)
    if i == 0:
        return values[0]
    if i >= len(times):
        return values[-1]
    t0, t1 = times[i - 1], times[i]
    if t1 == t0:
        return values[i]
    w = (t - t0) / (t1 - t0)
    return values[i - 1] * (1.0 - w) + values[i] * w


def _population_std(xs: Sequence[float]) -> float:
    m = math.fsum(xs) / len(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))


def evaluate(
    trajectory: Trajectory,
    observations: ObservationSet,
    targets: Optional[Iterable] = None,
    weights: Optional[dict] = None,
) -> FitReport:
    """Score a trajectory against observations.

    `targets` selects the variables entering the aggregate objective
    (default: every observed variable); `weights` maps targets to positive
    weights, defaulting to 1.
    """
    if len(observations) == 0:
        raise NoObservations("observation set is empty")
    if len(trajectory) == 0:
        raise EmptyTrajectory("trajectory has no samples")

    times = trajectory.times
    t_lo, t_hi = times[0], times[-1]

    if targets is None:
        target_keys = observations.targets()
    else:
        target_keys = [normalize_target(t) for t in targets]
    if weights is None:
        weights = {}
    wmap = {normalize_target(k): float(v) for k, v in weights.items()}
    for k, v in wmap.items():
        if v <= 0:
            raise InvalidSpec(f"weight for {k} must be positive, got {v!r}")

    # group records by target once
    by_target: dict[str, list[ObservationRecord]] = {}
    for r in observations.records:
        by_target.setdefault(r.target, []).append(r)

    matched = 0
    total = len(observations)
    reliable = 0
    per_lof: dict[str, float] = {}
    per_bias: dict[str, float] = {}

    for tkey, recs in sorted(by_target.items()):
        series = _target_series(trajectory, tkey)
        obs_values = [r.value for r in recs]
        sigma = _population_std(obs_values)
        mean_obs = math.fsum(obs_values) / len(obs_values)
        denom = sigma if sigma > 0 else max(abs(mean_obs), 1.0)
        default_band = 2.0 * sigma
        if series is None:
            continue
        sq = []
        pred_sum = 0.0
        obs_sum = 0.0
        for r in recs:
            if not (t_lo <= r.time <= t_hi):
                continue
            pred = interpolate(times, series, r.time)
            matched += 1
            resid = pred - r.value
            sq.append(resid * resid)
            pred_sum += pred
            obs_sum += r.value
            band = r.band if r.band is not None else default_band
            if abs(resid) <= band:
                reliable += 1
        if sq:
            rmse = math.sqrt(math.fsum(sq) / len(sq))
            per_lof[tkey] = rmse / denom
            per_bias[tkey] = (obs_sum - pred_sum) / len(sq)

    agg_keys = [k for k in target_keys if k in per_lof]
    if agg_keys:
        wsum = math.fsum(wmap.get(k, 1.0) for k in agg_keys)
        aggregate = math.fsum(wmap.get(k, 1.0) * per_lof[k] for k in agg_keys) / wsum
    else:
        aggregate = math.inf

    return FitReport(
        per_variable_lof=per_lof,
        aggregate_lof=aggregate,
        adequacy=matched / total,
        reliability=(reliable / matched) if matched else 0.0,
        matched=matched,
        total=total,
        per_variable_bias=per_bias,
    )


def worst_fit(report: FitReport, targets: Iterable, exclusions: Iterable = ()) -> Optional[str]:
    """The non-excluded target with the largest lack of fit.

    Ties break toward the lexicographically smaller (class, variable) name;
    None when every target is excluded or unscored.
    """
    excluded = {normalize_target(e) for e in exclusions}
    best_key = None
    best_lof = -1.0
    for t in sorted(normalize_target(t) for t in targets):
        if t in excluded:
            continue
        lof = report.per_variable_lof.get(t)
        if lof is None:
            continue
        if lof > best_lof:
            best_key = t
            best_lof = lof
    return best_key
