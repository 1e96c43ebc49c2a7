"""Sensitivity cells against finite differences and hand-computed toys."""
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecocal.errors import (
    InvalidSpec,
    MalformedKnowledgeFile,
    MissingRelationships,
    TrajectoryTooShort,
)
from ecocal.fixtures import build_logistic_pair
from ecocal.kernel import ClassSpec, Model, SimClock, Trajectory, VariableSpec, ParameterSpec
from ecocal.knowledge import default_training_clock, discover
from ecocal.sensitivity import (
    PerturbationPlan,
    _grid,
    _with_baseline,
    cap_clock,
    intra_sensitivity,
    inter_sensitivity,
    loads_sensitivities,
    serialize_sensitivities,
    steady_state_value,
)

PLAN = PerturbationPlan()


def _steady(model, code, var, plan=PLAN):
    traj = model.clone().run(cap_clock(model, plan))
    return steady_state_value(traj, (code, var), plan).value


def _fd_expected_cell(model, code, var, pspec, plan=PLAN):
    """Central difference at the range midpoint, rescaled to the cell's
    mean-fractional-change convention: cell ~ slope * (mid - p0) / |v0|."""
    mid = (pspec.min + pspec.max) / 2.0
    h = 0.01 * (pspec.max - pspec.min)
    values = []
    for p in (mid + h, mid - h):
        probe = model.clone()
        probe.set_parameter(code, pspec.name, p)
        traj = probe.run(cap_clock(model, plan))
        values.append(steady_state_value(traj, (code, var), plan).value)
    slope = (values[0] - values[1]) / (2.0 * h)
    v0 = _steady(model, code, var)
    p0 = model.parameter(code, pspec.name)
    return slope * (mid - p0) / max(abs(v0), plan.denominator_floor)


def test_biomass_cells_agree_with_central_differences(npz_db, npz_bundle):
    model = npz_db.build()
    for code, var in ((2, "biomass"), (3, "biomass")):
        spec = model.specs[model.index_of(code)]
        for pspec in spec.parameters:
            cell = npz_bundle.intra[code].cell(var, pspec.name)
            expected = _fd_expected_cell(model, code, var, pspec)
            assert cell * expected > 0, (var, pspec.name, cell, expected)
            assert abs(cell - expected) / abs(expected) < 0.25, (var, pspec.name)


def test_zero_dependence_cells_are_exactly_zero():
    model = build_logistic_pair()
    matrix = intra_sensitivity(model, 2)
    # the input variable is written only by the forcing class; the biomass
    # parameters cannot move it
    assert matrix.cell("input", "r") == 0.0
    assert matrix.cell("input", "capacity") == 0.0
    assert matrix.cell("biomass", "r") != 0.0


def _linear_readout_model(scale=1.0, baseline=0.25):
    def behavior(ctx):
        ctx.set("v", scale * ctx.param("k"))

    m = Model()
    m.register_class(
        ClassSpec(
            "T",
            1,
            (ParameterSpec("k", baseline=baseline, min=0.0, max=1.0),),
            (VariableSpec("v", initial=scale * baseline),),
            behavior,
            "linear-readout",
        )
    )
    m.default_clock = SimClock(0.0, 1.0, 100.0)
    return m


def test_cell_value_by_hand_with_baseline_on_grid():
    # grid {0, 0.25, 0.5, 0.75, 1}; the baseline 0.25 sits on it and is
    # excluded from the mean, leaving four fractional changes:
    # ((0-.25) + (.5-.25) + (.75-.25) + (1-.25)) / 4 / .25 = 1.25
    matrix = intra_sensitivity(_linear_readout_model(), 1)
    assert matrix.cell("v", "k") == 1.25
    assert matrix.warnings == []


def test_cells_are_scale_invariant():
    a = intra_sensitivity(_linear_readout_model(scale=1.0), 1)
    b = intra_sensitivity(_linear_readout_model(scale=8.0), 1)
    assert a.cell("v", "k") == b.cell("v", "k")


def test_intra_leaves_model_untouched(npz_db):
    model = npz_db.build()
    intra_sensitivity(model, 2)
    assert model.parameter(2, "mumax") == 0.8
    assert model.value(2, "biomass") == 0.4
    assert model.step_index == 0


def _synthetic_trajectory(values):
    return Trajectory(
        clock=SimClock(0.0, 1.0, float(len(values) - 1)),
        series={(1, "v"): list(values)},
        names={1: "A"},
    )


def test_steady_state_flags_unconverged_drift():
    drifting = _synthetic_trajectory([float(i) for i in range(201)])
    summary = steady_state_value(drifting, (1, "v"), PLAN)
    assert summary.value == 175.5
    assert not summary.converged

    flat = _synthetic_trajectory([3.25] * 201)
    summary = steady_state_value(flat, (1, "v"), PLAN)
    assert summary.value == 3.25
    assert summary.converged


def test_steady_state_needs_two_windows():
    with pytest.raises(TrajectoryTooShort):
        steady_state_value(_synthetic_trajectory([1.0] * 99), (1, "v"), PLAN)


def test_inter_structure_on_npz(npz_bundle):
    inter = npz_bundle.inter
    # one ranged variable per class; flux sources carry no range
    assert len(inter.entries) == 14
    assert len(inter.skipped) == 12
    assert all(reason == "no-range" for (_, _, _, reason) in inter.skipped)
    assert inter.entry((2, "biomass"), (3, "biomass")) > 0
    assert inter.entry((3, "biomass"), (2, "biomass")) < 0
    assert inter.entry((3, "biomass"), (1, "n")) > 0
    assert inter.entry((1, "n"), (2, "biomass")) > 0


def test_inter_requires_matching_relationships(npz_db):
    model = npz_db.build()
    with pytest.raises(MissingRelationships):
        inter_sensitivity(model, None)
    other = build_logistic_pair()
    foreign = discover(other, default_training_clock(other.default_clock))
    with pytest.raises(MissingRelationships):
        inter_sensitivity(model, foreign)


def test_round_trip_preserves_everything(npz_bundle):
    intra = dict(npz_bundle.intra)
    inter = npz_bundle.inter
    # warnings with spaces must survive the quoting
    intra[2].warnings.append("synthetic warning with spaces %percent and\ttab")
    try:
        text = serialize_sensitivities(intra, inter)
        intra2, inter2 = loads_sensitivities(text)
        assert sorted(intra2) == sorted(intra)
        for code, m in intra.items():
            assert intra2[code].rows == m.rows
            assert intra2[code].cols == m.cols
            assert intra2[code].cells == m.cells
            assert intra2[code].warnings == m.warnings
        assert inter2.classes == inter.classes
        assert inter2.entries == inter.entries
        assert inter2.skipped == inter.skipped
        assert inter2.warnings == inter.warnings
        assert serialize_sensitivities(intra2, inter2) == text
    finally:
        intra[2].warnings.pop()


def test_malformed_sensitivity_files_are_rejected():
    with pytest.raises(MalformedKnowledgeFile):
        loads_sensitivities("nonsense 1\n")
    with pytest.raises(MalformedKnowledgeFile):
        loads_sensitivities("intra 1\ncols a\nrow v 0.1 0.2\n")  # cell count mismatch
    with pytest.raises(MalformedKnowledgeFile):
        loads_sensitivities("inter\nclasses 1 2\nedge 1.a 1.b 0.5\n")  # same-class edge
    with pytest.raises(MalformedKnowledgeFile):
        loads_sensitivities("inter\nclasses 1 2\nedge 1a 2.b 0.5\n")  # bad qualifier


def test_plan_validation():
    with pytest.raises(InvalidSpec):
        PerturbationPlan(samples_per_range=2).validate()
    with pytest.raises(InvalidSpec):
        PerturbationPlan(horizon_cap=10).validate()


def test_grid_endpoints_never_overshoot_the_range():
    # 0.05 + 6*(3.0-0.05)/6 lands one ulp above 3.0; a candidate above the
    # declared max would be rejected by the parameter write
    grid = _grid(0.05, 3.0, 7)
    assert grid[-1] == 3.0
    assert grid[0] == 0.05
    assert all(0.05 <= g <= 3.0 for g in grid)


@settings(max_examples=50, deadline=None)
@given(
    lo=st.floats(min_value=-100, max_value=100, allow_nan=False),
    width=st.floats(min_value=1e-3, max_value=100, allow_nan=False),
    k=st.integers(min_value=3, max_value=9),
    frac=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
)
def test_grid_and_baseline_insertion_properties(lo, width, k, frac):
    hi = lo + width
    grid = _grid(lo, hi, k)
    assert len(grid) == k
    assert grid[0] == lo and grid[-1] == hi
    assert all(a <= b for a, b in zip(grid, grid[1:]))
    baseline = lo + frac * width
    merged = _with_baseline(grid, baseline)
    assert baseline in merged
    assert all(a <= b for a, b in zip(merged, merged[1:]))
    assert len(merged) in (k, k + 1)
