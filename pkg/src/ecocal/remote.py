"""Line-oriented TCP remote control for a single model instance.

Wire grammar: commands are UTF-8 lines, tokens separated by single spaces.
Replies are either one inline line (`OK [args]` / `ERR <code> <message>`) or,
for the payload verbs EVENTS and FIT?, an `OK` line followed by payload lines
and a lone `.` terminator. Every command gets exactly one reply, in order.

Verbs:
    HELLO                      -> OK ecocal <protocol-version>
    TAKE / RELEASE             acquire or give up exclusive control
    LOAD <model-id>            build a fresh instance of a registered model
    START / STOP / PAUSE       background run toward the horizon, halt it
    RESTART                    state back to initials, parameters kept
    STEP <n>                   advance n steps synchronously
    GET <Class>.<name>         read a variable (or parameter) value
    SET <Class>.<param> <v>    write a parameter, range checked
    SPY ON|OFF                 toggle message tracing
    EVENTS                     drain traced messages since the last drain
    FIT?                       fit report of the recorded samples
    BYE                        close the session

The server owns one kernel instance; every touch of it is serialized through
one lock. Control is advisory-free when no session holds it: any session may
mutate. Once a session TAKEs control, other sessions (and local callers) get
ERR 409 until RELEASE. Error codes: 400 malformed, 404 unknown name, 409
state or control conflict, 422 value out of range.
"""
from __future__ import annotations

import socket
import socketserver
import threading
from typing import Optional

from .errors import (
    BindFailure,
    ControlHeld,
    NumericalDivergence,
    OutOfRange,
    UnknownClass,
    UnknownParameter,
    UnknownVariable,
)
from .fitness import ObservationSet, evaluate
from .kernel import Model, Trajectory
from .modeldb import ModelDatabase, bundled_model_ids, load_bundled_model

PROTOCOL_VERSION = 1
PAYLOAD_VERBS = {"EVENTS", "FIT?"}

LOCAL_SESSION = "local"


class _Err(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message
        super().__init__(f"{code} {message}")


class _Core:
    """All model state and verb semantics; the handler is transport only."""

    def __init__(self, registry: dict[str, ModelDatabase], observations: Optional[ObservationSet]):
        self.lock = threading.RLock()
        self.registry = {key.lower(): db for key, db in registry.items()}
        self.observations = observations
        self.controller: Optional[str] = None
        self.db: Optional[ModelDatabase] = None
        self.model: Optional[Model] = None
        self.trace_cursor = 0
        self.sample_keys: list[tuple[int, str]] = []
        self.samples: dict[tuple[int, str], list[float]] = {}
        self.run_stop = threading.Event()
        self.runner: Optional[threading.Thread] = None
        self.run_error: Optional[str] = None

    # -- control arbitration ------------------------------------------------

    def _require_control(self, session: str) -> None:
        if self.controller is not None and self.controller != session:
            raise _Err(409, "no-control")

    def take(self, session: str) -> None:
        with self.lock:
            if self.controller is None or self.controller == session:
                self.controller = session
            else:
                raise _Err(409, "control-held")

    def release(self, session: str) -> None:
        with self.lock:
            if self.controller is None or self.controller == session:
                self.controller = None
            else:
                raise _Err(409, "no-control")

    def forget(self, session: str) -> None:
        with self.lock:
            if self.controller == session:
                self.controller = None

    # -- model lifecycle ------------------------------------------------------

    def _require_model(self) -> Model:
        if self.model is None:
            raise _Err(409, "no-model")
        return self.model

    def _record_sample(self) -> None:
        for key in self.sample_keys:
            self.samples[key].append(self.model.value(*key))

    def load(self, session: str, model_id: str) -> None:
        key = model_id.lower()
        with self.lock:
            self._require_control(session)
            if key not in self.registry:
                raise _Err(404, f"unknown model {model_id}")
        self._halt_runner()
        with self.lock:
            self._require_control(session)
            db = self.registry[key]
            self.db = db
            self.model = db.build()
            self.model.bind_clock(db.clock)
            self.trace_cursor = 0
            self.sample_keys = [
                (spec.code, v.name) for spec in db.specs for v in spec.variables
            ]
            self.samples = {k: [] for k in self.sample_keys}
            self._record_sample()
            self.run_error = None

    def restart(self, session: str) -> None:
        with self.lock:
            self._require_control(session)
            self._require_model()
        self._halt_runner()
        with self.lock:
            self._require_control(session)
            model = self._require_model()
            model.reset()
            self.samples = {k: [] for k in self.sample_keys}
            self._record_sample()
            self.run_error = None

    # -- running ------------------------------------------------------------

    def _halt_runner(self) -> None:
        # never called with the lock held: the runner needs it to finish a step
        self.run_stop.set()
        runner = self.runner
        if runner is not None and runner is not threading.current_thread():
            runner.join(timeout=10.0)
        self.runner = None

    def _running(self) -> bool:
        return self.runner is not None and self.runner.is_alive()

    def _run_loop(self) -> None:
        while not self.run_stop.is_set():
            with self.lock:
                assert self.model is not None and self.db is not None
                if self.model.step_index >= self.db.clock.steps:
                    break
                try:
                    self.model.step()
                    self._record_sample()
                except NumericalDivergence as err:
                    self.run_error = str(err)
                    break

    def start(self, session: str) -> None:
        with self.lock:
            self._require_control(session)
            self._require_model()
            if self._running():
                raise _Err(409, "running")
            self.run_stop.clear()
            self.runner = threading.Thread(target=self._run_loop, daemon=True)
            self.runner.start()

    def halt(self, session: str) -> int:
        with self.lock:
            self._require_control(session)
            self._require_model()
        self._halt_runner()
        with self.lock:
            model = self._require_model()
            if self.run_error is not None:
                message, self.run_error = self.run_error, None
                raise _Err(422, message)
            return model.step_index

    def step_n(self, session: str, n: int) -> int:
        with self.lock:
            self._require_control(session)
            model = self._require_model()
            if self._running():
                raise _Err(409, "running")
            for _ in range(n):
                try:
                    model.step()
                except NumericalDivergence as err:
                    raise _Err(422, str(err))
                self._record_sample()
            return model.step_index

    # -- values ---------------------------------------------------------------

    def _resolve(self, name: str) -> tuple[str, str]:
        parts = name.split(".")
        if (
            len(parts) == 3
            and self.db is not None
            and parts[0].lower() == self.db.model_id.lower()
        ):
            parts = parts[1:]
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise _Err(400, f"name wants Class.name, got {name!r}")
        return parts[0], parts[1]

    def get(self, session: str, name: str) -> float:
        with self.lock:
            model = self._require_model()
            cls, member = self._resolve(name)
            try:
                return model.value(cls, member)
            except (UnknownClass, UnknownVariable):
                pass
            try:
                return model.parameter(cls, member)
            except (UnknownClass, UnknownParameter):
                raise _Err(404, f"unknown name {name}")

    def set(self, session: str, name: str, raw: str) -> None:
        with self.lock:
            self._require_control(session)
            model = self._require_model()
            cls, member = self._resolve(name)
            try:
                value = float(raw)
            except ValueError:
                raise _Err(400, f"not a number: {raw!r}")
            try:
                model.set_parameter(cls, member, value)
            except (UnknownClass, UnknownParameter) as err:
                raise _Err(404, str(err))
            except OutOfRange as err:
                raise _Err(422, str(err))

    def spy(self, session: str, arg: str) -> None:
        with self.lock:
            self._require_control(session)
            model = self._require_model()
            flag = arg.upper()
            if flag not in ("ON", "OFF"):
                raise _Err(400, f"SPY wants ON or OFF, got {arg!r}")
            model.spy = flag == "ON"

    # -- observation streams ----------------------------------------------------

    def events(self, session: str) -> list[str]:
        with self.lock:
            model = self._require_model()
            new = model.trace[self.trace_cursor :]
            self.trace_cursor = len(model.trace)
            lines = []
            for msg in new:
                tag = "I" if msg.kind == "Inquiry" else "U"
                lines.append(
                    f"{tag} {model.class_name(msg.caller)} {model.class_name(msg.callee)} "
                    f"{msg.variable} {msg.value!r} {msg.step_index}"
                )
            return lines

    def trajectory(self) -> Trajectory:
        with self.lock:
            self._require_model()
            assert self.db is not None
            names = {spec.code: spec.name for spec in self.db.specs}
            series = {key: list(column) for key, column in self.samples.items()}
            return Trajectory(clock=self.db.clock, series=series, names=names)

    def fit(self, session: str) -> list[str]:
        with self.lock:
            self._require_model()
            if self.observations is None:
                raise _Err(409, "no-observations")
            trajectory = self.trajectory()
            report = evaluate(trajectory, self.observations)
            lines = [
                f"aggregate {report.aggregate_lof!r}",
                f"adequacy {report.adequacy!r}",
                f"reliability {report.reliability!r}",
                f"matched {report.matched}",
                f"total {report.total}",
            ]
            for target in sorted(report.per_variable_lof):
                lines.append(f"lof {target} {report.per_variable_lof[target]!r}")
            for target in sorted(report.per_variable_bias):
                lines.append(f"bias {target} {report.per_variable_bias[target]!r}")
            return lines

    # -- dispatch ----------------------------------------------------------------

    def dispatch(self, session: str, line: str) -> tuple[str, bool]:
        """Returns (reply text, close_after)."""
        tokens = line.split()
        verb = tokens[0].upper()
        args = tokens[1:]
        try:
            if verb == "HELLO" and not args:
                return f"OK ecocal {PROTOCOL_VERSION}\n", False
            if verb == "TAKE" and not args:
                self.take(session)
                return "OK\n", False
            if verb == "RELEASE" and not args:
                self.release(session)
                return "OK\n", False
            if verb == "LOAD" and len(args) == 1:
                self.load(session, args[0])
                return "OK\n", False
            if verb == "START" and not args:
                self.start(session)
                return "OK\n", False
            if verb in ("STOP", "PAUSE") and not args:
                return f"OK {self.halt(session)}\n", False
            if verb == "RESTART" and not args:
                self.restart(session)
                return "OK\n", False
            if verb == "STEP" and len(args) == 1:
                if not args[0].isdigit() or int(args[0]) < 1:
                    raise _Err(400, f"STEP wants a positive count, got {args[0]!r}")
                return f"OK {self.step_n(session, int(args[0]))}\n", False
            if verb == "GET" and len(args) == 1:
                return f"OK {self.get(session, args[0])!r}\n", False
            if verb == "SET" and len(args) == 2:
                self.set(session, args[0], args[1])
                return "OK\n", False
            if verb == "SPY" and len(args) == 1:
                self.spy(session, args[0])
                return "OK\n", False
            if verb == "EVENTS" and not args:
                lines = self.events(session)
                return "OK\n" + "".join(f"{l}\n" for l in lines) + ".\n", False
            if verb == "FIT?" and not args:
                lines = self.fit(session)
                return "OK\n" + "".join(f"{l}\n" for l in lines) + ".\n", False
            if verb == "BYE" and not args:
                return "OK\n", True
            raise _Err(400, f"malformed command {line!r}")
        except _Err as err:
            return f"ERR {err.code} {err.message}\n", False


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        core: _Core = self.server.core  # type: ignore[attr-defined]
        session = f"{self.client_address[0]}:{self.client_address[1]}:{id(self)}"
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8", "replace").strip()
                if not line:
                    continue
                reply, close = core.dispatch(session, line)
                self.wfile.write(reply.encode("utf-8"))
                self.wfile.flush()
                if close:
                    break
        finally:
            core.forget(session)


class RemoteServer(socketserver.ThreadingTCPServer):
    """Serves the registry of bundled models plus an optional extra database.

    Local (in-process) callers go through the local_* methods; they obey the
    same arbitration as wire sessions except they can never TAKE, so a remote
    controller always has precedence.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        extra_db: Optional[ModelDatabase] = None,
        observations: Optional[ObservationSet] = None,
    ):
        registry = {name: load_bundled_model(name) for name in bundled_model_ids()}
        if extra_db is not None:
            registry[extra_db.model_id] = extra_db
        # core must exist before bind: a failed bind closes the server, and
        # server_close reaches into core to stop any runner
        self.core = _Core(registry, observations)
        try:
            super().__init__(address, _Handler)
        except OSError as err:
            raise BindFailure(f"cannot bind {address[0]}:{address[1]}: {err}")

    def server_close(self) -> None:
        self.core.run_stop.set()
        super().server_close()

    # -- local access, subordinate to remote control -------------------------

    def _local(self, fn, *args):
        try:
            return fn(LOCAL_SESSION, *args)
        except _Err as err:
            if err.code == 409 and err.message in ("no-control", "control-held"):
                raise ControlHeld("a remote session holds control")
            raise

    def local_load(self, model_id: str) -> None:
        self._local(self.core.load, model_id)

    def local_set_parameter(self, name: str, value: float) -> None:
        self._local(self.core.set, name, repr(value))

    def local_step(self, n: int) -> int:
        return self._local(self.core.step_n, n)

    def local_value(self, name: str) -> float:
        # reads never conflict with remote control
        return self.core.get(LOCAL_SESSION, name)


class RemoteClient:
    """Minimal blocking client for scripts and tests."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")

    def close(self) -> None:
        try:
            self.rfile.close()
        finally:
            self.sock.close()

    def __enter__(self) -> "RemoteClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def send(self, command: str) -> tuple[bool, str, list[str]]:
        """Returns (ok, inline args, payload lines)."""
        self.sock.sendall((command + "\n").encode("utf-8"))
        head = self.rfile.readline().decode("utf-8").rstrip("\n")
        if head.startswith("ERR"):
            return False, head[4:], []
        inline = head[2:].strip()
        verb = command.split(None, 1)[0].upper() if command.split() else ""
        payload: list[str] = []
        if verb in PAYLOAD_VERBS:
            while True:
                line = self.rfile.readline().decode("utf-8").rstrip("\n")
                if line == ".":
                    break
                payload.append(line)
        return True, inline, payload

    def must(self, command: str) -> tuple[str, list[str]]:
        ok, inline, payload = self.send(command)
        if not ok:
            raise RuntimeError(f"{command!r} failed: ERR {inline}")
        return inline, payload
