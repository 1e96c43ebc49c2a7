"""Model database files, observation files, and synthetic observations.

A model database is sectioned plain text, one record per line:

    model <id>
    clock t0=<seconds> dt=<seconds> horizon=<seconds>
    class name=<name> code=<int> behavior=<behavior-name>
    param class=<name> name=<p> value=<v> min=<v> max=<v> unit=<u>
    var class=<name> name=<p> init=<v> [min=<v> max=<v>] unit=<u>

Blank lines and `#` comments are skipped. Morphology and grid fields are
accepted but ignored with a warning; this engine is zero-dimensional.
Loading either succeeds fully or reports every violation with its line
number; a bad file never yields a partial database.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import fixtures
from .errors import (
    InvalidSpec,
    MalformedModelFile,
    MalformedObservationFile,
    NoObservations,
    OutOfRange,
    UnknownBehavior,
)
from .fitness import ObservationRecord, ObservationSet, interpolate
from .kernel import ClassSpec, Model, ParameterSpec, SimClock, VariableSpec

# line heads and key=value keys tolerated for compatibility with richer
# databases; they describe spatial structure this engine does not model
_MORPH_HEADS = {"morphology", "geometry", "dimensions", "cells", "grid", "layers"}
_MORPH_KEYS = {"x", "y", "z", "area", "depth", "shape", "cells", "grid", "layers"}


@dataclass
class ModelDatabase:
    model_id: str
    clock: SimClock
    specs: tuple[ClassSpec, ...]
    warnings: list[str] = field(default_factory=list, compare=False)

    def build(self) -> Model:
        model = Model()
        for spec in self.specs:
            model.register_class(spec)
        model.default_clock = self.clock
        return model

    def spec_of(self, class_name: str) -> ClassSpec:
        for spec in self.specs:
            if spec.name == class_name:
                return spec
        raise KeyError(class_name)

    def range_targets(self) -> list[str]:
        return [
            f"{spec.name}.{v.name}"
            for spec in self.specs
            for v in spec.variables
            if v.has_range
        ]


def _parse_kv(tokens: list[str]) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, eq, value = tok.partition("=")
        if not eq:
            raise ValueError(f"token {tok!r} is not key=value")
        if key in out:
            raise ValueError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _take_float(kv: dict, key: str, errs: list[str]) -> Optional[float]:
    if key not in kv:
        errs.append(f"missing {key}=")
        return None
    raw = kv.pop(key)
    try:
        v = float(raw)
    except ValueError:
        errs.append(f"{key}={raw!r} is not a number")
        return None
    if not math.isfinite(v):
        errs.append(f"{key}={raw!r} is not finite")
        return None
    return v


def loads_model_db(text: str, origin: str = "<string>") -> ModelDatabase:
    violations: list[tuple[int, str]] = []
    warnings: list[str] = []
    model_id: Optional[str] = None
    clock: Optional[SimClock] = None
    classes: list[dict] = []  # {"lineno", "name", "code", "behavior"}
    params: list[dict] = []
    vars_: list[dict] = []
    unknown_behaviors: list[tuple[int, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        head, rest = tokens[0], tokens[1:]
        if head == "model":
            if model_id is not None:
                violations.append((lineno, "duplicate model line"))
            elif len(rest) != 1:
                violations.append((lineno, "model line needs exactly one id"))
            else:
                model_id = rest[0]
            continue
        if head in _MORPH_HEADS:
            warnings.append(f"line {lineno}: ignoring morphology record {head!r} (0D engine)")
            continue
        if head not in ("clock", "class", "param", "var"):
            violations.append((lineno, f"unknown record type {head!r}"))
            continue
        try:
            kv = _parse_kv(rest)
        except ValueError as err:
            violations.append((lineno, str(err)))
            continue
        for key in list(kv):
            if key in _MORPH_KEYS:
                warnings.append(f"line {lineno}: ignoring morphology field {key}= (0D engine)")
                kv.pop(key)

        errs: list[str] = []
        if head == "clock":
            if clock is not None:
                violations.append((lineno, "duplicate clock line"))
                continue
            t0 = _take_float(kv, "t0", errs)
            dt = _take_float(kv, "dt", errs)
            horizon = _take_float(kv, "horizon", errs)
            if not errs:
                candidate = SimClock(t0=t0, dt=dt, horizon=horizon)
                try:
                    candidate.validate()
                    clock = candidate
                except InvalidSpec as e:
                    errs.append(str(e))
        elif head == "class":
            name = kv.pop("name", None)
            code_raw = kv.pop("code", None)
            behavior = kv.pop("behavior", None)
            if name is None:
                errs.append("missing name=")
            if behavior is None:
                errs.append("missing behavior=")
            code = None
            if code_raw is None:
                errs.append("missing code=")
            else:
                try:
                    code = int(code_raw)
                except ValueError:
                    errs.append(f"code={code_raw!r} is not an integer")
            if not errs:
                if behavior not in fixtures.BEHAVIORS:
                    unknown_behaviors.append((lineno, behavior))
                classes.append(
                    {"lineno": lineno, "name": name, "code": code, "behavior": behavior}
                )
        elif head == "param":
            cls = kv.pop("class", None)
            name = kv.pop("name", None)
            value = _take_float(kv, "value", errs)
            vmin = _take_float(kv, "min", errs)
            vmax = _take_float(kv, "max", errs)
            unit = kv.pop("unit", "")
            if cls is None:
                errs.append("missing class=")
            if name is None:
                errs.append("missing name=")
            if not errs:
                params.append(
                    {"lineno": lineno, "class": cls, "name": name,
                     "value": value, "min": vmin, "max": vmax, "unit": unit}
                )
        elif head == "var":
            cls = kv.pop("class", None)
            name = kv.pop("name", None)
            init = _take_float(kv, "init", errs)
            vmin = vmax = None
            if "min" in kv or "max" in kv:
                vmin = _take_float(kv, "min", errs)
                vmax = _take_float(kv, "max", errs)
            unit = kv.pop("unit", "")
            if cls is None:
                errs.append("missing class=")
            if name is None:
                errs.append("missing name=")
            if not errs:
                vars_.append(
                    {"lineno": lineno, "class": cls, "name": name,
                     "init": init, "min": vmin, "max": vmax, "unit": unit}
                )
        for key in kv:
            errs.append(f"unknown field {key}=")
        violations.extend((lineno, e) for e in errs)

    if model_id is None:
        violations.append((0, "missing model line"))
    if clock is None and not any("clock" in msg for _, msg in violations):
        violations.append((0, "missing clock line"))

    by_name: dict[str, dict] = {}
    for c in classes:
        if c["name"] in by_name:
            violations.append((c["lineno"], f"duplicate class name {c['name']!r}"))
        else:
            by_name[c["name"]] = c
    codes_seen: dict[int, str] = {}
    for c in classes:
        if c["code"] in codes_seen and by_name.get(c["name"]) is c:
            violations.append((c["lineno"], f"duplicate class code {c['code']}"))
        else:
            codes_seen.setdefault(c["code"], c["name"])
    if not classes:
        violations.append((0, "no class records"))

    grouped_params: dict[str, list[dict]] = {}
    for p in params:
        if p["class"] not in by_name:
            violations.append((p["lineno"], f"param references unknown class {p['class']!r}"))
        else:
            grouped_params.setdefault(p["class"], []).append(p)
    grouped_vars: dict[str, list[dict]] = {}
    for v in vars_:
        if v["class"] not in by_name:
            violations.append((v["lineno"], f"var references unknown class {v['class']!r}"))
        else:
            grouped_vars.setdefault(v["class"], []).append(v)

    specs: list[ClassSpec] = []
    for c in classes:
        if by_name.get(c["name"]) is not c:
            continue
        pspecs = []
        for p in grouped_params.get(c["name"], ()):
            ps = ParameterSpec(p["name"], p["value"], p["min"], p["max"], p["unit"])
            try:
                ps.validate()
                pspecs.append(ps)
            except InvalidSpec as e:
                violations.append((p["lineno"], str(e)))
        vspecs = []
        for v in grouped_vars.get(c["name"], ()):
            vs = VariableSpec(v["name"], v["init"], v["min"], v["max"], v["unit"])
            try:
                vs.validate()
                vspecs.append(vs)
            except InvalidSpec as e:
                violations.append((v["lineno"], str(e)))
        behavior = fixtures.BEHAVIORS.get(c["behavior"])
        spec = ClassSpec(
            name=c["name"],
            code=c["code"],
            parameters=tuple(pspecs),
            variables=tuple(vspecs),
            behavior=behavior if behavior is not None else _missing_behavior,
            behavior_name=c["behavior"],
        )
        try:
            spec.validate()
        except InvalidSpec as e:
            violations.append((c["lineno"], str(e)))
            continue
        specs.append(spec)

    if violations:
        violations.sort()
        lines = [f"{origin}:{n}: {msg}" if n else f"{origin}: {msg}" for n, msg in violations]
        err = MalformedModelFile("\n".join(lines))
        err.violations = violations
        raise err
    if unknown_behaviors:
        names = ", ".join(
            f"{b!r} (line {n})" for n, b in sorted(unknown_behaviors, key=lambda x: x[0])
        )
        raise UnknownBehavior(f"{origin}: unknown behavior {names}")

    return ModelDatabase(model_id=model_id, clock=clock, specs=tuple(specs), warnings=warnings)


def _missing_behavior(ctx) -> None:
    raise UnknownBehavior("class was loaded with an unresolved behavior")


def load_model_db(source) -> ModelDatabase:
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as err:
        raise MalformedModelFile(f"cannot read {path}: {err}")
    return loads_model_db(text, origin=str(path))


def serialize_model_db(db: ModelDatabase) -> str:
    lines = [f"model {db.model_id}"]
    lines.append(f"clock t0={db.clock.t0!r} dt={db.clock.dt!r} horizon={db.clock.horizon!r}")
    for spec in db.specs:
        lines.append(f"class name={spec.name} code={spec.code} behavior={spec.behavior_name}")
        for p in spec.parameters:
            lines.append(
                f"param class={spec.name} name={p.name} value={p.baseline!r} "
                f"min={p.min!r} max={p.max!r} unit={p.unit}"
            )
        for v in spec.variables:
            if v.has_range:
                lines.append(
                    f"var class={spec.name} name={v.name} init={v.initial!r} "
                    f"min={v.min!r} max={v.max!r} unit={v.unit}"
                )
            else:
                lines.append(
                    f"var class={spec.name} name={v.name} init={v.initial!r} unit={v.unit}"
                )
    return "\n".join(lines) + "\n"


def save_model_db(db: ModelDatabase, path) -> None:
    Path(path).write_text(serialize_model_db(db))


# -- observation files --------------------------------------------------------

_OBS_HEADER = "time,target,value,band"


def loads_observations(text: str, origin: str = "<string>") -> ObservationSet:
    lines = text.splitlines()
    if not lines or lines[0].strip().replace(" ", "") != _OBS_HEADER:
        raise MalformedObservationFile(
            f"{origin}:1: expected header {_OBS_HEADER!r}"
        )
    violations: list[str] = []
    records: list[ObservationRecord] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            violations.append(f"{origin}:{lineno}: expected 3 or 4 fields, got {len(parts)}")
            continue
        errs = []
        try:
            t = float(parts[0])
        except ValueError:
            errs.append(f"time {parts[0]!r} is not a number")
            t = 0.0
        target = parts[1]
        if "." not in target:
            errs.append(f"target {target!r} is not Class.Variable")
        try:
            value = float(parts[2])
        except ValueError:
            errs.append(f"value {parts[2]!r} is not a number")
            value = 0.0
        band = None
        if len(parts) == 4 and parts[3] != "":
            try:
                band = float(parts[3])
            except ValueError:
                errs.append(f"band {parts[3]!r} is not a number")
            else:
                if band < 0:
                    errs.append(f"band {band!r} is negative")
        if t < 0 and not any("time" in e for e in errs):
            errs.append(f"time {t!r} is negative")
        if errs:
            violations.extend(f"{origin}:{lineno}: {e}" for e in errs)
            continue
        records.append(ObservationRecord(time=t, target=target, value=value, band=band))
    if violations:
        raise MalformedObservationFile("\n".join(violations))
    if not records:
        raise NoObservations(f"{origin}: no observation records")
    return ObservationSet(records=tuple(records))


def load_observations(source) -> ObservationSet:
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as err:
        raise MalformedObservationFile(f"cannot read {path}: {err}")
    return loads_observations(text, origin=str(path))


def serialize_observations(obs: ObservationSet) -> str:
    lines = [_OBS_HEADER]
    for r in obs.records:
        band = "" if r.band is None else repr(r.band)
        lines.append(f"{r.time!r},{r.target},{r.value!r},{band}")
    return "\n".join(lines) + "\n"


def save_observations(obs: ObservationSet, path) -> None:
    Path(path).write_text(serialize_observations(obs))


def bundled_data_path(name: str) -> Path:
    """Path of a data file shipped inside the package."""
    path = Path(__file__).resolve().parent / "data" / name
    if not path.is_file():
        raise FileNotFoundError(f"no bundled data file named {name!r}")
    return path


def bundled_model_ids() -> list[str]:
    data = Path(__file__).resolve().parent / "data"
    return sorted(p.stem for p in data.glob("*.model"))


def load_bundled_model(name: str) -> ModelDatabase:
    return load_model_db(bundled_data_path(f"{name}.model"))


def generate_synthetic_observations(
    model_db: ModelDatabase,
    true_parameters: dict,
    sample_times: Iterable[float],
    noise_fraction: float,
    seed: int,
    targets: Optional[Iterable[str]] = None,
) -> ObservationSet:
    """Run the model at known-true parameters and sample noisy observations.

    Noise is multiplicative: value = exact * (1 + noise_fraction * g) with g
    drawn from a seeded standard normal, so noise_fraction 0 reproduces the
    trajectory exactly. Default targets are the variables that declare a
    range.
    """
    if noise_fraction < 0:
        raise OutOfRange(f"noise_fraction {noise_fraction!r} is negative")
    clock = model_db.clock
    sample_times = [float(t) for t in sample_times]
    for t in sample_times:
        if not (clock.t0 <= t <= clock.horizon):
            raise OutOfRange(
                f"sample time {t!r} outside [{clock.t0!r}, {clock.horizon!r}]"
            )
    model = model_db.build()
    for (cls, pname), value in true_parameters.items():
        model.set_parameter(cls, pname, value)
    trajectory = model.run(clock)
    if targets is None:
        targets = model_db.range_targets()
    times = trajectory.times
    rng = random.Random(seed)
    records = []
    for target in targets:
        cls, _, var = target.partition(".")
        code = trajectory.code_of(cls)
        series = trajectory.get(code, var)
        for t in sample_times:
            exact = interpolate(times, series, t)
            g = rng.gauss(0.0, 1.0)
            records.append(
                ObservationRecord(time=t, target=target, value=exact * (1.0 + noise_fraction * g))
            )
    return ObservationSet(records=tuple(records))
