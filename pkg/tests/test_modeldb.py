"""Model database and observation file parsing, plus synthetic sampling."""
import random

import pytest

from ecocal.errors import (
    MalformedModelFile,
    MalformedObservationFile,
    NoObservations,
    OutOfRange,
    UnknownBehavior,
)
from ecocal.fitness import ObservationRecord, ObservationSet
from ecocal.modeldb import (
    ModelDatabase,
    bundled_data_path,
    bundled_model_ids,
    generate_synthetic_observations,
    load_bundled_model,
    load_observations,
    loads_model_db,
    loads_observations,
    serialize_model_db,
    serialize_observations,
)

GOOD_DB = """\
model toy
clock t0=0.0 dt=1.0 horizon=10.0
class name=Forcing code=1 behavior=forcing-relax
param class=Forcing name=level value=1.0 min=0.5 max=3.5 unit=1
param class=Forcing name=tau value=4.0 min=2.0 max=14.0 unit=d
var class=Forcing name=drive init=0.2 min=0.0 max=4.0 unit=1
class name=Biomass code=2 behavior=logistic-growth
param class=Biomass name=r value=0.2 min=0.0 max=1.2 unit=1/d
param class=Biomass name=capacity value=3.0 min=2.0 max=8.0 unit=mmol/m3
var class=Biomass name=biomass init=0.3 min=0.1 max=6.0 unit=mmol/m3
var class=Biomass name=input init=0.2 unit=1
"""


def test_good_file_loads_and_round_trips():
    db = loads_model_db(GOOD_DB)
    assert db.model_id == "toy"
    assert db.clock.dt == 1.0
    assert [s.name for s in db.specs] == ["Forcing", "Biomass"]
    assert db.spec_of("Biomass").parameters[1].max == 8.0
    # the unranged variable keeps no bounds
    inp = db.spec_of("Biomass").variables[1]
    assert not inp.has_range
    assert db.range_targets() == ["Forcing.drive", "Biomass.biomass"]
    assert db.warnings == []

    text = serialize_model_db(db)
    again = loads_model_db(text)
    assert serialize_model_db(again) == text
    assert again.model_id == db.model_id
    assert again.specs == db.specs

    model = db.build()
    assert model.default_clock == db.clock
    assert model.parameter("Biomass", "r") == 0.2


def test_bundled_databases_round_trip_byte_identically():
    for name in ("npz", "npz_perturbed", "logistic_pair"):
        path = bundled_data_path(f"{name}.model")
        original = path.read_text()
        assert serialize_model_db(loads_model_db(original)) == original


def test_all_violations_are_reported_with_line_numbers():
    bad = "\n".join(
        [
            "clock t0=0.0 dt=1.0 horizon=10.0",  # 1 (fine)
            "class name=A code=1 behavior=logistic-growth",  # 2 (fine)
            "param class=A name=p value=3.0 min=4.0 max=2.0 unit=1",  # 3: min>max
            "param class=B name=q value=1.0 min=0.0 max=2.0 unit=1",  # 4: unknown class
            "class name=C code=1 behavior=logistic-growth",  # 5: duplicate code
            "var class=A name=v init=abc",  # 6: bad float
            "wibble x=1",  # 7: unknown record
        ]
    )
    with pytest.raises(MalformedModelFile) as exc:
        loads_model_db(bad, origin="bad.model")
    msg = str(exc.value)
    assert "bad.model:3:" in msg
    assert "bad.model:4:" in msg and "unknown class 'B'" in msg
    assert "bad.model:5:" in msg and "duplicate class code 1" in msg
    assert "bad.model:6:" in msg and "not a number" in msg
    assert "bad.model:7:" in msg and "wibble" in msg
    assert "missing model line" in msg
    # structured violations ride along, sorted by line
    lines = [n for n, _ in exc.value.violations]
    assert lines == sorted(lines)


def test_unknown_behavior_is_its_own_failure():
    text = GOOD_DB.replace("behavior=logistic-growth", "behavior=sungo2d")
    with pytest.raises(UnknownBehavior) as exc:
        loads_model_db(text, origin="toy.model")
    assert "sungo2d" in str(exc.value)
    assert "line 7" in str(exc.value)


def test_morphology_records_are_ignored_with_warnings():
    text = GOOD_DB + "morphology shape=box depth=10\n"
    text = text.replace(
        "var class=Biomass name=input init=0.2 unit=1",
        "var class=Biomass name=input init=0.2 unit=1 depth=5",
    )
    db = loads_model_db(text)
    assert len(db.warnings) == 2
    assert all("0D engine" in w for w in db.warnings)
    # the surviving spec is unchanged by the ignored fields
    assert db.spec_of("Biomass").variables[1].initial == 0.2


def test_duplicate_sections_and_partial_ranges():
    dup = GOOD_DB + "model again\nclock t0=0.0 dt=1.0 horizon=5.0\n"
    with pytest.raises(MalformedModelFile) as exc:
        loads_model_db(dup)
    assert "duplicate model line" in str(exc.value)
    assert "duplicate clock line" in str(exc.value)

    half = GOOD_DB.replace(
        "var class=Forcing name=drive init=0.2 min=0.0 max=4.0 unit=1",
        "var class=Forcing name=drive init=0.2 min=0.0 unit=1",
    )
    with pytest.raises(MalformedModelFile) as exc:
        loads_model_db(half)
    assert "missing max=" in str(exc.value)


def test_empty_and_model_less_files():
    with pytest.raises(MalformedModelFile) as exc:
        loads_model_db("")
    msg = str(exc.value)
    assert "missing model line" in msg
    assert "missing clock line" in msg
    assert "no class records" in msg


# -- observation files ---------------------------------------------------------


def test_observation_file_grammar():
    text = "\n".join(
        [
            "time, target, value, band",
            "0.0,A.v,1.5,0.2",
            "# comment",
            "",
            "5.0,A.v,2.5,",
            "7.5,B.w,0.5",
        ]
    )
    obs = loads_observations(text)
    assert len(obs) == 3
    assert obs.records[0].band == 0.2
    assert obs.records[1].band is None
    assert obs.records[2].band is None
    assert obs.targets() == ["A.v", "B.w"]


def test_observation_round_trip_is_byte_stable():
    obs = ObservationSet(
        records=(
            ObservationRecord(0.0, "A.v", 1.5, band=0.2),
            ObservationRecord(5.0, "A.v", 2.5),
        )
    )
    text = serialize_observations(obs)
    assert text.splitlines()[0] == "time,target,value,band"
    again = loads_observations(text)
    assert again == obs
    assert serialize_observations(again) == text


def test_observation_violations_come_with_line_numbers():
    text = "\n".join(
        [
            "time,target,value,band",
            "abc,A.v,1.0,",
            "1.0,nodot,1.0,",
            "2.0,A.v,xyz,",
            "3.0,A.v,1.0,-0.5",
            "-4.0,A.v,1.0,",
            "5.0,A.v,1.0,0.1,extra",
        ]
    )
    with pytest.raises(MalformedObservationFile) as exc:
        loads_observations(text, origin="obs.csv")
    msg = str(exc.value)
    for lineno, phrase in (
        (2, "not a number"),
        (3, "not Class.Variable"),
        (4, "not a number"),
        (5, "is negative"),
        (6, "is negative"),
        (7, "expected 3 or 4 fields"),
    ):
        assert f"obs.csv:{lineno}:" in msg, (lineno, phrase, msg)


def test_observation_header_and_emptiness():
    with pytest.raises(MalformedObservationFile):
        loads_observations("t,series,val\n0,A.v,1\n")
    with pytest.raises(MalformedObservationFile):
        loads_observations("")
    with pytest.raises(NoObservations):
        loads_observations("time,target,value,band\n# nothing\n")


# -- bundled data ----------------------------------------------------------------


def test_bundled_models_are_available():
    ids = bundled_model_ids()
    assert {"logistic_pair", "npz", "npz_perturbed"} <= set(ids)
    for name in ids:
        db = load_bundled_model(name)
        assert db.model_id == name
        db.build()
    with pytest.raises(FileNotFoundError):
        bundled_data_path("no_such_file.model")


def test_bundled_recovery_observations():
    obs = load_observations(bundled_data_path("npz_recovery.obs"))
    assert len(obs) == 180
    assert len(obs.targets()) == 9
    day = 86400.0
    times = sorted({r.time for r in obs.records})
    assert times[0] == 7.5 * day
    assert times[-1] == 150.0 * day
    assert all(r.band is None for r in obs.records)


def test_perturbed_model_differs_only_in_three_baselines():
    true_db = load_bundled_model("npz")
    pert_db = load_bundled_model("npz_perturbed")
    diffs = {}
    for ts, ps in zip(true_db.specs, pert_db.specs):
        assert ts.name == ps.name and ts.code == ps.code
        assert ts.variables == ps.variables
        for tp, pp in zip(ts.parameters, ps.parameters):
            assert (tp.min, tp.max, tp.unit) == (pp.min, pp.max, pp.unit)
            if tp.baseline != pp.baseline:
                diffs[(ts.name, tp.name)] = (tp.baseline, pp.baseline)
    assert diffs == {
        ("Phytoplankton", "gamma"): (0.7, 0.2),
        ("Phytoplankton", "mp"): (0.1, 0.2),
        ("Zooplankton", "mz"): (0.22, 0.37),
    }


# -- synthetic observations ------------------------------------------------------


def test_zero_noise_sampling_is_exact():
    db = load_bundled_model("logistic_pair")
    times = [864000.0, 1728000.0]  # multiples of dt
    obs = generate_synthetic_observations(db, {}, times, 0.0, seed=5)
    traj = db.build().run(db.clock)
    assert [r.target for r in obs.records] == [
        "Forcing.drive",
        "Forcing.drive",
        "Biomass.biomass",
        "Biomass.biomass",
    ]
    assert obs.records[0].value == traj.series[(1, "drive")][40]
    assert obs.records[2].value == traj.series[(2, "biomass")][40]
    assert obs.records[3].value == traj.series[(2, "biomass")][80]


def test_noisy_sampling_is_seeded_and_replicable():
    db = load_bundled_model("logistic_pair")
    times = [864000.0, 1728000.0]
    a = generate_synthetic_observations(db, {}, times, 0.05, seed=11)
    b = generate_synthetic_observations(db, {}, times, 0.05, seed=11)
    c = generate_synthetic_observations(db, {}, times, 0.05, seed=12)
    assert a == b
    assert a != c

    # multiplicative noise follows one seeded gaussian stream in record order
    exact = generate_synthetic_observations(db, {}, times, 0.0, seed=11)
    rng = random.Random(11)
    for noisy, clean in zip(a.records, exact.records):
        g = rng.gauss(0.0, 1.0)
        assert noisy.value == clean.value * (1.0 + 0.05 * g)


def test_sampling_respects_true_parameters_and_targets():
    db = load_bundled_model("logistic_pair")
    times = [864000.0]
    shifted = generate_synthetic_observations(
        db, {("Biomass", "r"): 0.9}, times, 0.0, seed=0, targets=["Biomass.biomass"]
    )
    assert [r.target for r in shifted.records] == ["Biomass.biomass"]
    model = db.build()
    model.set_parameter("Biomass", "r", 0.9)
    traj = model.run(db.clock)
    assert shifted.records[0].value == traj.series[(2, "biomass")][40]


def test_sampling_rejects_bad_inputs():
    db = load_bundled_model("logistic_pair")
    with pytest.raises(OutOfRange):
        generate_synthetic_observations(db, {}, [0.0], -0.1, seed=0)
    with pytest.raises(OutOfRange):
        generate_synthetic_observations(db, {}, [db.clock.horizon + 1.0], 0.0, seed=0)
