"""TCP remote-control protocol: wire grammar, control, and equivalence."""
import socket
import threading
import time

import pytest

from ecocal.errors import BindFailure, ControlHeld
from ecocal.kernel import SimClock
from ecocal.modeldb import (
    ModelDatabase,
    bundled_data_path,
    load_bundled_model,
    load_observations,
)
from ecocal.remote import RemoteClient, RemoteServer

HOST = "127.0.0.1"


@pytest.fixture(scope="module")
def server():
    npz = load_bundled_model("npz")
    boom = ModelDatabase("boom", SimClock(0.0, 8.64e7, 8.64e10), npz.specs)
    obs = load_observations(bundled_data_path("npz_recovery.obs"))
    srv = RemoteServer((HOST, 0), extra_db=boom, observations=obs)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()
    thread.join(timeout=5.0)


@pytest.fixture()
def client(server):
    with RemoteClient(HOST, server.server_address[1]) as c:
        yield c
        # leave the shared server unlocked and empty-handed for the next test
        c.send("RELEASE")


def test_handshake(client):
    inline, payload = client.must("HELLO")
    assert inline == "ecocal 1"
    assert payload == []
    # verbs are case-insensitive
    ok, inline, _ = client.send("hello")
    assert ok and inline == "ecocal 1"


def test_malformed_commands(client):
    for bad in ("NOPE", "HELLO extra", "GET", "GET a b", "SET onlyname", "STEP"):
        ok, inline, _ = client.send(bad)
        assert not ok and inline.startswith("400"), (bad, inline)


def test_verbs_require_a_loaded_model(server):
    with RemoteClient(HOST, server.server_address[1]) as fresh:
        fresh.must("TAKE")
        for cmd in ("GET Nutrients.n", "STEP 1", "FIT?", "RESTART", "START", "STOP"):
            ok, inline, _ = fresh.send(cmd)
            assert not ok and inline == "409 no-model", (cmd, inline)
        fresh.must("RELEASE")


def test_load_get_set_step(client):
    ok, inline, _ = client.send("LOAD nosuch")
    assert not ok and inline.startswith("404")

    client.must("LOAD npz")
    assert client.must("GET Nutrients.n")[0] == "2.5"
    # model-qualified, case-insensitive addressing
    assert client.must("GET npz.Nutrients.n")[0] == "2.5"
    assert client.must("GET NPZ.Nutrients.n")[0] == "2.5"
    # parameters answer GET too
    assert client.must("GET Phytoplankton.mumax")[0] == "0.8"

    ok, inline, _ = client.send("GET Nutrients.bogus")
    assert not ok and inline.startswith("404")
    ok, inline, _ = client.send("GET justoneword")
    assert not ok and inline.startswith("400")

    client.must("SET Phytoplankton.mumax 0.9")
    assert client.must("GET Phytoplankton.mumax")[0] == "0.9"
    ok, inline, _ = client.send("SET Phytoplankton.mumax 99.0")
    assert not ok and inline.startswith("422")
    ok, inline, _ = client.send("SET Phytoplankton.nosuch 0.5")
    assert not ok and inline.startswith("404")
    ok, inline, _ = client.send("SET Phytoplankton.mumax abc")
    assert not ok and inline.startswith("400")

    assert client.must("STEP 10")[0] == "10"
    assert client.must("STEP 5")[0] == "15"
    for bad in ("STEP 0", "STEP -3", "STEP abc"):
        ok, inline, _ = client.send(bad)
        assert not ok and inline.startswith("400")


def test_wire_session_matches_in_process_run(client):
    client.must("LOAD npz")
    client.must("SET Phytoplankton.mumax 0.9")
    client.must("SET Zooplankton.mz 0.3")
    client.must("STEP 100")

    db = load_bundled_model("npz")
    mirror = db.build()
    mirror.bind_clock(db.clock)
    mirror.set_parameter("Phytoplankton", "mumax", 0.9)
    mirror.set_parameter("Zooplankton", "mz", 0.3)
    for _ in range(100):
        mirror.step()

    for spec in db.specs:
        for v in spec.variables:
            inline, _ = client.must(f"GET {spec.name}.{v.name}")
            assert inline == repr(mirror.value(spec.code, v.name)), (spec.name, v.name)


def test_events_drain_exactly_once_across_sessions(server):
    with RemoteClient(HOST, server.server_address[1]) as a, RemoteClient(
        HOST, server.server_address[1]
    ) as b:
        a.must("LOAD npz")
        a.must("SPY ON")
        a.must("STEP 1")

        db = load_bundled_model("npz")
        mirror = db.build()
        mirror.bind_clock(db.clock)
        mirror.spy = True
        mirror.step()
        expected = [
            f"{'I' if m.kind == 'Inquiry' else 'U'} {mirror.class_name(m.caller)} "
            f"{mirror.class_name(m.callee)} {m.variable} {m.value!r} {m.step_index}"
            for m in mirror.trace
        ]
        assert len(expected) == 8

        _, first = a.must("EVENTS")
        assert first == expected
        # the stream is global: another session sees nothing new
        _, second = b.must("EVENTS")
        assert second == []

        a.must("STEP 2")
        mirror.step()
        mirror.step()
        _, third = b.must("EVENTS")
        assert third == [
            f"{'I' if m.kind == 'Inquiry' else 'U'} {mirror.class_name(m.caller)} "
            f"{mirror.class_name(m.callee)} {m.variable} {m.value!r} {m.step_index}"
            for m in mirror.trace[8:]
        ]
        _, fourth = a.must("EVENTS")
        assert fourth == []
        a.must("SPY OFF")

        ok, inline, _ = a.send("SPY sideways")
        assert not ok and inline.startswith("400")


def test_restart_keeps_parameters_and_drained_events(client):
    client.must("LOAD npz")
    client.must("SPY ON")
    client.must("SET Phytoplankton.mumax 1.0")
    client.must("STEP 3")
    client.must("EVENTS")

    client.must("RESTART")
    assert client.must("GET Nutrients.n")[0] == "2.5"
    assert client.must("GET Phytoplankton.mumax")[0] == "1.0"
    # already-drained messages stay drained across the restart
    _, payload = client.must("EVENTS")
    assert payload == []


def test_fit_before_and_after_a_full_run(client):
    client.must("LOAD npz")
    _, payload = client.must("FIT?")
    head = dict(line.split(None, 1) for line in payload if " " in line)
    assert head["aggregate"] == "inf"
    assert head["matched"] == "0"
    assert head["total"] == "180"

    client.must("STEP 1500")
    _, payload = client.must("FIT?")
    head = dict(line.split(None, 1) for line in payload if " " in line)
    # the bundled observations were sampled from this very model
    assert head["aggregate"] == "0.0"
    assert head["adequacy"] == "1.0"
    assert head["reliability"] == "1.0"
    assert head["matched"] == "180"
    lof_lines = [l for l in payload if l.startswith("lof ")]
    bias_lines = [l for l in payload if l.startswith("bias ")]
    assert len(lof_lines) == 9 and len(bias_lines) == 9
    assert all(l.split()[2] == "0.0" for l in lof_lines)


def test_fit_needs_observations():
    srv = RemoteServer((HOST, 0), observations=None)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    try:
        with RemoteClient(HOST, srv.server_address[1]) as c:
            c.must("LOAD npz")
            ok, inline, _ = c.send("FIT?")
            assert not ok and inline == "409 no-observations"
    finally:
        srv.shutdown()
        srv.server_close()
        thread.join(timeout=5.0)


def test_control_is_exclusive_once_taken(server):
    with RemoteClient(HOST, server.server_address[1]) as a, RemoteClient(
        HOST, server.server_address[1]
    ) as b:
        a.must("LOAD npz")
        # free-for-all before anyone takes control
        b.must("SET Phytoplankton.mumax 0.85")

        a.must("TAKE")
        ok, inline, _ = b.send("SET Phytoplankton.mumax 0.9")
        assert not ok and inline == "409 no-control"
        ok, inline, _ = b.send("TAKE")
        assert not ok and inline == "409 control-held"
        ok, inline, _ = b.send("RELEASE")
        assert not ok and inline == "409 no-control"
        # reads stay open to everyone
        assert b.must("GET Phytoplankton.mumax")[0] == "0.85"

        # the holder can re-TAKE idempotently and free the lock
        a.must("TAKE")
        a.must("RELEASE")
        b.must("TAKE")
        b.must("RELEASE")


def test_disconnect_releases_control(server):
    a = RemoteClient(HOST, server.server_address[1])
    a.must("TAKE")
    a.close()
    with RemoteClient(HOST, server.server_address[1]) as b:
        deadline = time.time() + 5.0
        while True:
            ok, inline, _ = b.send("TAKE")
            if ok:
                break
            assert inline == "409 control-held"
            assert time.time() < deadline, "control was never released"
            time.sleep(0.02)
        b.must("RELEASE")


def test_bye_closes_the_connection(server):
    sock = socket.create_connection((HOST, server.server_address[1]), timeout=5.0)
    try:
        sock.sendall(b"BYE\n")
        f = sock.makefile("rb")
        assert f.readline() == b"OK\n"
        assert f.readline() == b""  # server closed the stream
    finally:
        sock.close()


def test_local_calls_yield_to_a_remote_controller(server):
    with RemoteClient(HOST, server.server_address[1]) as c:
        c.must("LOAD npz")
        server.local_set_parameter("Phytoplankton.mumax", 0.7)
        assert c.must("GET Phytoplankton.mumax")[0] == "0.7"

        c.must("TAKE")
        with pytest.raises(ControlHeld):
            server.local_set_parameter("Phytoplankton.mumax", 0.8)
        with pytest.raises(ControlHeld):
            server.local_step(1)
        with pytest.raises(ControlHeld):
            server.local_load("npz")
        # reads never need control
        assert server.local_value("Phytoplankton.mumax") == 0.7

        c.must("RELEASE")
        server.local_step(1)
        assert server.local_value("Phytoplankton.uptake") != 0.0


def test_background_run_reaches_the_horizon(client):
    client.must("LOAD npz")
    client.must("START")
    deadline = time.time() + 10.0
    while True:
        inline, _ = client.must("STOP")
        if inline == "1500":
            break
        assert time.time() < deadline, f"stalled at step {inline}"
        client.must("START")
        time.sleep(0.05)
    # at the horizon a fresh START is legal and immediately idle
    client.must("START")
    assert client.must("STOP")[0] == "1500"


def test_step_and_start_conflict_with_a_live_runner(server):
    with RemoteClient(HOST, server.server_address[1]) as c:
        c.must("LOAD npz")
        # pin a fake live runner so the race is deterministic
        release = threading.Event()
        dummy = threading.Thread(target=release.wait)
        dummy.start()
        server.core.runner = dummy
        try:
            ok, inline, _ = c.send("START")
            assert not ok and inline == "409 running"
            ok, inline, _ = c.send("STEP 1")
            assert not ok and inline == "409 running"
        finally:
            release.set()
            dummy.join(timeout=5.0)
            server.core.runner = None


def test_divergence_maps_to_422(client):
    client.must("LOAD boom")
    ok, inline, _ = client.send("STEP 200")
    assert not ok
    assert inline.startswith("422")
    assert "non-finite" in inline

    # a background run parks the failure until the next halt
    client.must("LOAD boom")
    client.must("START")
    time.sleep(0.5)
    ok, inline, _ = client.send("STOP")
    assert not ok and inline.startswith("422")
    # the error is consumed; the next halt reports the stuck step index
    inline, _ = client.must("STOP")
    assert inline.isdigit()


def test_bind_conflict_raises(server):
    with pytest.raises(BindFailure):
        RemoteServer((HOST, server.server_address[1]))
