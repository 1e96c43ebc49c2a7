"""Influence discovery: learn who influences whom by watching messages.

A training run executes with spying enabled; the trace condenses into a
square class-by-class matrix. An Inquiry by class j of class i means i
influences j (the reader is influenced by what it reads); an Update by
class i to class j means i influences j. Rows are influencers, columns the
influenced; the diagonal is marked SELF.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    EmptyModel,
    InvalidSpec,
    MalformedKnowledgeFile,
    StorageFailure,
    UnknownClass,
)
from .kernel import Model, SimClock

NONE = "NONE"
INFLUENCES = "INFLUENCES"
SELF = "SELF"

_TOKEN = {NONE: "0", INFLUENCES: "1", SELF: "S"}
_VALUE = {"0": NONE, "1": INFLUENCES, "S": SELF}

DEFAULT_TRAINING_STEPS = 100


@dataclass
class RelationshipMatrix:
    classes: list[int]  # class codes, matrix order
    names: dict[int, str]  # code -> class name
    cells: list[list[str]]  # cells[i][j]: does classes[i] influence classes[j]
    edges: dict[tuple[int, int], dict[str, int]] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.classes)
        if len(self.cells) != n or any(len(row) != n for row in self.cells):
            raise InvalidSpec("relationship matrix is not square over its class list")
        for i in range(n):
            for j in range(n):
                if (i == j) != (self.cells[i][j] == SELF):
                    raise InvalidSpec("SELF must appear on the diagonal and only there")

    def index_of(self, code: int) -> int:
        try:
            return self.classes.index(code)
        except ValueError:
            raise UnknownClass(f"class code {code} not in relationship matrix")

    def influences(self, src: int, dst: int) -> bool:
        return self.cells[self.index_of(src)][self.index_of(dst)] == INFLUENCES

    def influence_pairs(self) -> list[tuple[int, int]]:
        out = []
        for i, src in enumerate(self.classes):
            for j, dst in enumerate(self.classes):
                if self.cells[i][j] == INFLUENCES:
                    out.append((src, dst))
        return out


def default_training_clock(clock: SimClock, steps: int = DEFAULT_TRAINING_STEPS) -> SimClock:
    """A short clock for discovery: `steps` steps at the model's own dt."""
    steps = max(2, min(steps, clock.steps))
    return SimClock(t0=clock.t0, dt=clock.dt, horizon=clock.t0 + steps * clock.dt)


def discover(model: Model, clock: SimClock) -> RelationshipMatrix:
    """Train on a dedicated clone and condense its trace into the matrix."""
    if not model.specs:
        raise EmptyModel("no classes registered")
    clock.validate()
    if clock.steps < 2:
        raise InvalidSpec(f"training clock must cover at least 2 steps, got {clock.steps}")
    probe = model.clone()
    probe.spy = True
    probe.run(clock)

    codes = [spec.code for spec in probe.specs]
    names = {spec.code: spec.name for spec in probe.specs}
    index = {code: i for i, code in enumerate(codes)}
    n = len(codes)
    cells = [[SELF if i == j else NONE for j in range(n)] for i in range(n)]
    edges: dict[tuple[int, int], dict[str, int]] = {}
    for msg in probe.trace:
        if msg.kind == "Inquiry":
            src, dst = msg.callee, msg.caller
            key = "inquiry"
        else:
            src, dst = msg.caller, msg.callee
            key = "update"
        if src == dst:
            continue
        cells[index[src]][index[dst]] = INFLUENCES
        counts = edges.setdefault((src, dst), {"inquiry": 0, "update": 0})
        counts[key] += 1
    return RelationshipMatrix(classes=codes, names=names, cells=cells, edges=edges)


def influencers_of(matrix: RelationshipMatrix, code: int) -> list[int]:
    """Class codes that influence `code`, in matrix order."""
    j = matrix.index_of(code)
    return [
        matrix.classes[i]
        for i in range(len(matrix.classes))
        if i != j and matrix.cells[i][j] == INFLUENCES
    ]


def serialize_matrix(matrix: RelationshipMatrix) -> str:
    lines = [f"relationships {len(matrix.classes)}"]
    for code in matrix.classes:
        lines.append(f"class {code} {matrix.names[code]}")
    for row in matrix.cells:
        lines.append(" ".join(_TOKEN[c] for c in row))
    return "\n".join(lines) + "\n"


def save_matrix(matrix: RelationshipMatrix, destination) -> None:
    try:
        Path(destination).write_text(serialize_matrix(matrix))
    except OSError as err:
        raise StorageFailure(f"cannot write {destination}: {err}")


def loads_matrix(text: str, origin: str = "<string>") -> RelationshipMatrix:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise MalformedKnowledgeFile(f"{origin}: empty relationships file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "relationships":
        raise MalformedKnowledgeFile(f"{origin}:1: expected 'relationships <n>'")
    try:
        n = int(head[1])
    except ValueError:
        raise MalformedKnowledgeFile(f"{origin}:1: {head[1]!r} is not an integer")
    if n < 0 or len(lines) != 1 + n + n:
        raise MalformedKnowledgeFile(
            f"{origin}: expected {1 + 2 * max(n, 0)} lines for n={n}, got {len(lines)}"
        )
    codes: list[int] = []
    names: dict[int, str] = {}
    for k in range(n):
        parts = lines[1 + k].split()
        if len(parts) != 3 or parts[0] != "class":
            raise MalformedKnowledgeFile(f"{origin}: bad class line {lines[1 + k]!r}")
        try:
            code = int(parts[1])
        except ValueError:
            raise MalformedKnowledgeFile(f"{origin}: class code {parts[1]!r} is not an integer")
        if code in names:
            raise MalformedKnowledgeFile(f"{origin}: duplicate class code {code}")
        codes.append(code)
        names[code] = parts[2]
    cells: list[list[str]] = []
    for k in range(n):
        tokens = lines[1 + n + k].split()
        if len(tokens) != n:
            raise MalformedKnowledgeFile(
                f"{origin}: row {k} has {len(tokens)} cells, expected {n} (non-square)"
            )
        row = []
        for tok in tokens:
            if tok not in _VALUE:
                raise MalformedKnowledgeFile(f"{origin}: unknown cell token {tok!r}")
            row.append(_VALUE[tok])
        cells.append(row)
    try:
        return RelationshipMatrix(classes=codes, names=names, cells=cells)
    except InvalidSpec as err:
        raise MalformedKnowledgeFile(f"{origin}: {err}")


def load_matrix(source) -> RelationshipMatrix:
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as err:
        raise StorageFailure(f"cannot read {path}: {err}")
    return loads_matrix(text, origin=str(path))


def stale_report(matrix: RelationshipMatrix, model: Model) -> list[str]:
    """Differences between the matrix's class census and the model's.

    Empty list means fresh. A stale matrix is still usable for reading;
    callers decide whether staleness is acceptable.
    """
    issues = []
    model_codes = {spec.code: spec.name for spec in model.specs}
    for code in matrix.classes:
        if code not in model_codes:
            issues.append(f"matrix class {code} ({matrix.names[code]}) not in model")
        elif model_codes[code] != matrix.names[code]:
            issues.append(
                f"class {code} renamed: matrix says {matrix.names[code]!r}, "
                f"model says {model_codes[code]!r}"
            )
    for code, name in model_codes.items():
        if code not in matrix.names:
            issues.append(f"model class {code} ({name}) missing from matrix")
    return issues
