"""Deterministic discrete-time simulation kernel.

Model classes own parameters and variables and interact only through the
mediating shell, via Inquiry (read) and Update (write) messages, so every
cross-class influence is observable in the message trace.

Stepping is two-phase: behaviors read start-of-step committed values, all
writes are buffered, and the buffer is committed after the last class has
run. Clamped variables swallow writes and are reapplied before the next
step, so their series stay constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import (
    DuplicateClassCode,
    EmptyModel,
    InvalidSpec,
    NumericalDivergence,
    OutOfRange,
    UnknownClass,
    UnknownParameter,
    UnknownVariable,
)

SECONDS_PER_DAY = 86400.0

_NAME_FORBIDDEN = set(" \t\n\r.,=")


def _check_name(kind: str, name: str) -> None:
    # names travel through dotted targets and key=value file lines
    if not name or any(ch in _NAME_FORBIDDEN for ch in name):
        raise InvalidSpec(f"{kind} name {name!r} is empty or contains whitespace/./,/=")


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    baseline: float
    min: float
    max: float
    unit: str = ""

    def validate(self) -> None:
        _check_name("parameter", self.name)
        if not (self.min < self.max):
            raise InvalidSpec(f"parameter {self.name}: min {self.min!r} must be < max {self.max!r}")
        if not (self.min <= self.baseline <= self.max):
            raise InvalidSpec(
                f"parameter {self.name}: baseline {self.baseline!r} outside [{self.min!r}, {self.max!r}]"
            )


@dataclass(frozen=True)
class VariableSpec:
    name: str
    initial: float
    min: Optional[float] = None
    max: Optional[float] = None
    unit: str = ""

    @property
    def has_range(self) -> bool:
        return self.min is not None and self.max is not None

    def validate(self) -> None:
        _check_name("variable", self.name)
        if (self.min is None) != (self.max is None):
            raise InvalidSpec(f"variable {self.name}: range must give both min and max")
        if self.has_range and not (self.min <= self.initial <= self.max):
            raise InvalidSpec(
                f"variable {self.name}: initial {self.initial!r} outside [{self.min!r}, {self.max!r}]"
            )


@dataclass(frozen=True)
class ClassSpec:
    name: str
    code: int
    parameters: tuple[ParameterSpec, ...]
    variables: tuple[VariableSpec, ...]
    behavior: Callable[["BehaviorContext"], None]
    behavior_name: str = ""

    def validate(self) -> None:
        _check_name("class", self.name)
        if not isinstance(self.code, int) or self.code <= 0:
            raise InvalidSpec(f"class {self.name}: code must be a positive integer")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise InvalidSpec(f"class {self.name}: duplicate parameter names")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise InvalidSpec(f"class {self.name}: duplicate variable names")
        for p in self.parameters:
            p.validate()
        for v in self.variables:
            v.validate()


@dataclass(frozen=True)
class SimClock:
    t0: float
    dt: float
    horizon: float

    def validate(self) -> None:
        if self.dt <= 0:
            raise InvalidSpec(f"clock: dt must be positive, got {self.dt!r}")
        if self.horizon < self.dt:
            raise InvalidSpec(f"clock: horizon {self.horizon!r} must be >= dt {self.dt!r}")

    @property
    def steps(self) -> int:
        n = math.floor((self.horizon - self.t0) / self.dt)
        if not math.isfinite(n):
            raise InvalidSpec("clock: non-finite step count")
        return int(n)

    def times(self, nsteps: int) -> list[float]:
        return [self.t0 + i * self.dt for i in range(nsteps + 1)]


@dataclass(frozen=True)
class Message:
    kind: str  # "Inquiry" | "Update"
    caller: int
    callee: int
    variable: str
    value: float
    step_index: int


@dataclass(frozen=True)
class ClampDirective:
    target: tuple[int, str]  # (class code, variable name)
    value: float


@dataclass
class Trajectory:
    clock: SimClock
    series: dict[tuple[int, str], list[float]]
    names: dict[int, str]  # class code -> class name

    def __len__(self) -> int:
        for s in self.series.values():
            return len(s)
        return 0

    @property
    def times(self) -> list[float]:
        return self.clock.times(len(self) - 1)

    def get(self, code: int, variable: str) -> list[float]:
        try:
            return self.series[(code, variable)]
        except KeyError:
            raise UnknownVariable(f"no series for class {code} variable {variable!r}")

    def code_of(self, class_name: str) -> int:
        for code, name in self.names.items():
            if name == class_name:
                return code
        raise UnknownClass(f"no class named {class_name!r} in trajectory")


class BehaviorContext:
    """The only handle a behavior receives: its own state plus the shell."""

    __slots__ = ("_model", "_index", "dt", "step")

    def __init__(self, model: "Model", index: int):
        self._model = model
        self._index = index
        self.dt = 0.0
        self.step = 0

    def param(self, name: str) -> float:
        try:
            return self._model._params[self._index][name]
        except KeyError:
            raise UnknownParameter(
                f"class {self._model._specs[self._index].name} has no parameter {name!r}"
            )

    def get(self, name: str) -> float:
        try:
            return self._model._values[self._index][name]
        except KeyError:
            raise UnknownVariable(
                f"class {self._model._specs[self._index].name} has no variable {name!r}"
            )

    def set(self, name: str, value: float) -> None:
        # own-class write: buffered to the commit point, not a shell message
        model = self._model
        if name not in model._values[self._index]:
            raise UnknownVariable(
                f"class {model._specs[self._index].name} has no variable {name!r}"
            )
        if (self._index, name) in model._clamps:
            model._absorb(self._index, self._index, name, value)
            return
        model._pending.append((self._index, name, value))

    def inquire(self, class_name: str, variable: str) -> float:
        model = self._model
        try:
            callee = model._index_by_name[class_name]
        except KeyError:
            raise UnknownClass(f"no class named {class_name!r}")
        return model._inquiry_by_index(self._index, callee, variable)

    def update(self, class_name: str, variable: str, value: float) -> None:
        model = self._model
        try:
            callee = model._index_by_name[class_name]
        except KeyError:
            raise UnknownClass(f"no class named {class_name!r}")
        model._update_by_index(self._index, callee, variable, value)


class Model:
    """A registered set of classes plus the mediating shell state."""

    def __init__(self) -> None:
        self._specs: list[ClassSpec] = []
        self._params: list[dict[str, float]] = []
        self._values: list[dict[str, float]] = []
        self._pending: list[tuple[int, str, float]] = []
        self._clamps: dict[tuple[int, str], float] = {}  # (index, var) -> value
        self._index_by_code: dict[int, int] = {}
        self._index_by_name: dict[str, int] = {}
        self._contexts: list[BehaviorContext] = []
        self.step_index = 0
        self.spy = False
        self.trace: list[Message] = []
        self.clamp_overrides: list[tuple[int, int, str, float, int]] = []
        self.default_clock: Optional[SimClock] = None

    # -- registration ------------------------------------------------------

    def register_class(self, spec: ClassSpec) -> None:
        spec.validate()
        if spec.code in self._index_by_code:
            raise DuplicateClassCode(f"class code {spec.code} already registered")
        if spec.name in self._index_by_name:
            raise InvalidSpec(f"class name {spec.name!r} already registered")
        index = len(self._specs)
        self._specs.append(spec)
        self._params.append({p.name: p.baseline for p in spec.parameters})
        self._values.append({v.name: v.initial for v in spec.variables})
        self._index_by_code[spec.code] = index
        self._index_by_name[spec.name] = index
        self._contexts.append(BehaviorContext(self, index))

    @property
    def specs(self) -> tuple[ClassSpec, ...]:
        return tuple(self._specs)

    def clone(self) -> "Model":
        """Fresh instance from the same specs, carrying current parameters."""
        other = Model()
        for spec in self._specs:
            other.register_class(spec)
        for idx, params in enumerate(self._params):
            other._params[idx] = dict(params)
        other.default_clock = self.default_clock
        return other

    # -- addressing helpers --------------------------------------------------

    def _index_of_code(self, code: int) -> int:
        try:
            return self._index_by_code[code]
        except KeyError:
            raise UnknownClass(f"no class with code {code}")

    def index_of(self, class_id: "int | str") -> int:
        if isinstance(class_id, str):
            try:
                return self._index_by_name[class_id]
            except KeyError:
                raise UnknownClass(f"no class named {class_id!r}")
        return self._index_of_code(class_id)

    def class_name(self, code: int) -> str:
        return self._specs[self._index_of_code(code)].name

    def class_codes(self) -> list[int]:
        return [s.code for s in self._specs]

    # -- shell verbs ---------------------------------------------------------

    def _inquiry_by_index(self, caller: int, callee: int, variable: str) -> float:
        try:
            value = self._values[callee][variable]
        except KeyError:
            raise UnknownVariable(
                f"class {self._specs[callee].name} has no variable {variable!r}"
            )
        if self.spy and caller != callee:
            self.trace.append(
                Message("Inquiry", self._specs[caller].code, self._specs[callee].code,
                        variable, value, self.step_index)
            )
        return value

    def _update_by_index(self, caller: int, callee: int, variable: str, value: float) -> None:
        if variable not in self._values[callee]:
            raise UnknownVariable(
                f"class {self._specs[callee].name} has no variable {variable!r}"
            )
        if self.spy and caller != callee:
            self.trace.append(
                Message("Update", self._specs[caller].code, self._specs[callee].code,
                        variable, value, self.step_index)
            )
        if (callee, variable) in self._clamps:
            self._absorb(caller, callee, variable, value)
            return
        self._pending.append((callee, variable, value))

    def _absorb(self, caller: int, callee: int, variable: str, value: float) -> None:
        # a write aimed at a clamped variable: swallowed, noted while spying
        if self.spy:
            self.clamp_overrides.append(
                (self._specs[caller].code, self._specs[callee].code,
                 variable, value, self.step_index)
            )

    def inquiry(self, caller_code: int, callee_code: int, variable: str) -> float:
        return self._inquiry_by_index(
            self._index_of_code(caller_code), self._index_of_code(callee_code), variable
        )

    def update(self, caller_code: int, callee_code: int, variable: str, value: float) -> None:
        self._update_by_index(
            self._index_of_code(caller_code), self._index_of_code(callee_code), variable, value
        )

    # -- state access ----------------------------------------------------------

    def value(self, class_id: "int | str", variable: str) -> float:
        idx = self.index_of(class_id)
        try:
            return self._values[idx][variable]
        except KeyError:
            raise UnknownVariable(f"class {self._specs[idx].name} has no variable {variable!r}")

    def parameter(self, class_id: "int | str", name: str) -> float:
        idx = self.index_of(class_id)
        try:
            return self._params[idx][name]
        except KeyError:
            raise UnknownParameter(f"class {self._specs[idx].name} has no parameter {name!r}")

    def set_parameter(self, class_id: "int | str", name: str, value: float) -> None:
        idx = self.index_of(class_id)
        spec = next((p for p in self._specs[idx].parameters if p.name == name), None)
        if spec is None:
            raise UnknownParameter(f"class {self._specs[idx].name} has no parameter {name!r}")
        if not (spec.min <= value <= spec.max):
            raise OutOfRange(
                f"{self._specs[idx].name}.{name} = {value!r} outside [{spec.min!r}, {spec.max!r}]"
            )
        self._params[idx][name] = value

    def parameter_vector(self) -> dict[tuple[str, str], float]:
        out = {}
        for idx, spec in enumerate(self._specs):
            for p in spec.parameters:
                out[(spec.name, p.name)] = self._params[idx][p.name]
        return out

    def apply_parameter_vector(self, vector: dict[tuple[str, str], float]) -> None:
        for (class_name, pname), value in vector.items():
            self.set_parameter(class_name, pname, value)

    # -- clamps -----------------------------------------------------------------

    def install_clamps(self, clamps: Iterable[ClampDirective]) -> None:
        for c in clamps:
            idx = self._index_of_code(c.target[0])
            var = c.target[1]
            if var not in self._values[idx]:
                raise UnknownVariable(
                    f"class {self._specs[idx].name} has no variable {var!r}"
                )
            self._clamps[(idx, var)] = c.value
            self._values[idx][var] = c.value

    def clear_clamps(self) -> None:
        self._clamps.clear()

    def bind_clock(self, clock: SimClock) -> None:
        """Give behaviors their dt without running; used for bare stepping."""
        clock.validate()
        for ctx in self._contexts:
            ctx.dt = clock.dt

    # -- stepping ------------------------------------------------------------

    def step(self) -> None:
        if not self._specs:
            raise EmptyModel("no classes registered")
        values = self._values
        for index, spec in enumerate(self._specs):
            ctx = self._contexts[index]
            ctx.step = self.step_index
            spec.behavior(ctx)
        # commit phase: clamped writes were absorbed at enqueue time
        for index, var, value in self._pending:
            values[index][var] = value
        self._pending.clear()
        for (index, var), value in self._clamps.items():
            values[index][var] = value
        self.step_index += 1
        # divergence check: a single non-finite value poisons the sum
        total = 0.0
        for vals in values:
            for v in vals.values():
                total += v
        if not math.isfinite(total):
            for index, vals in enumerate(values):
                for var, v in vals.items():
                    if not math.isfinite(v):
                        raise NumericalDivergence(self._specs[index].name, var, self.step_index - 1)
            raise NumericalDivergence("<unknown>", "<unknown>", self.step_index - 1)

    def run(self, clock: SimClock, clamps: Iterable[ClampDirective] = ()) -> Trajectory:
        """Run from the current state for the clock's horizon.

        The trajectory includes the state at call time as sample zero. The
        model is left at its end state. Bit-identical for identical inputs.
        """
        if not self._specs:
            raise EmptyModel("no classes registered")
        clock.validate()
        self.install_clamps(clamps)
        nsteps = clock.steps
        order: list[tuple[int, str]] = []
        names: dict[int, str] = {}
        for spec in self._specs:
            names[spec.code] = spec.name
            for v in spec.variables:
                order.append((spec.code, v.name))
        series: dict[tuple[int, str], list[float]] = {key: [0.0] * (nsteps + 1) for key in order}
        values = self._values
        index_of = self._index_of_code
        columns = [(series[(code, var)], index_of(code), var) for code, var in order]
        for lst, idx, var in columns:
            lst[0] = values[idx][var]
        dt = clock.dt
        for ctx in self._contexts:
            ctx.dt = dt
        for i in range(1, nsteps + 1):
            self.step()
            for lst, idx, var in columns:
                lst[i] = values[idx][var]
        return Trajectory(clock=clock, series=series, names=names)

    def reset(self) -> None:
        """Variables back to initials, clamps cleared, parameters kept."""
        for idx, spec in enumerate(self._specs):
            self._values[idx] = {v.name: v.initial for v in spec.variables}
        self._pending.clear()
        self._clamps.clear()
        self.step_index = 0


# module-level operation spellings used throughout the package

def register_class(model: Model, spec: ClassSpec) -> Model:
    model.register_class(spec)
    return model


def inquiry(shell: Model, caller: int, callee: int, variable: str) -> float:
    return shell.inquiry(caller, callee, variable)


def update(shell: Model, caller: int, callee: int, variable: str, value: float) -> None:
    shell.update(caller, callee, variable, value)


def step(model: Model) -> Model:
    if model._contexts and model._contexts[0].dt == 0.0:
        raise InvalidSpec("step: contexts carry no dt; use Model.run or set a clock first")
    model.step()
    return model


def set_parameter(model: Model, class_id: "int | str", name: str, value: float) -> None:
    model.set_parameter(class_id, name, value)


def reset(model: Model) -> None:
    model.reset()
