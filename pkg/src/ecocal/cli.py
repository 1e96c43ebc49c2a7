"""Command-line entry point.

Subcommands cover the whole pipeline: simulate a model database, discover
its influence graph, analyse sensitivities, calibrate against observations
(optionally racing the random-search baseline), and serve the remote-control
protocol. Every command validates its input files before doing any work and
is reproducible from its arguments plus seed; wall-clock metadata goes to
run_meta.json so the data files can be compared byte for byte.

Exit codes: 0 for success (calibrate: GoalReached or Stabilized), 2 when a
limit stopped calibration (MaxRounds, BudgetExhausted), 130 on interrupt,
1 on any load or runtime error. Set ECOCAL_LOG=debug|info|warning|error to
control diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Optional

from . import __version__, report
from .calibrate import (
    BUDGET_EXHAUSTED,
    GOAL_REACHED,
    MAX_ROUNDS,
    STABILIZED,
    USER_ABORT,
    AgentConfig,
    KnowledgeBundle,
    calibrate,
    random_search,
)
from .errors import EcocalError, MissingRelationships
from .kernel import Model, SimClock
from .knowledge import (
    default_training_clock,
    discover,
    load_matrix,
    save_matrix,
    serialize_matrix,
    stale_report,
)
from .modeldb import ModelDatabase, load_model_db, load_observations
from .sensitivity import (
    PerturbationPlan,
    analyze_intra_all,
    inter_sensitivity,
    load_sensitivities,
    save_sensitivities,
)

log = logging.getLogger("ecocal")

RELATIONSHIPS_FILE = "relationships.txt"
SENSITIVITY_FILE = "sensitivity.txt"

EXIT_CODES = {
    GOAL_REACHED: 0,
    STABILIZED: 0,
    MAX_ROUNDS: 2,
    BUDGET_EXHAUSTED: 2,
    USER_ABORT: 130,
}


def setup_logging() -> None:
    name = os.environ.get("ECOCAL_LOG", "warning").strip().lower()
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
    }.get(name, logging.WARNING)
    logging.basicConfig(
        stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def _require_files(*paths: Optional[Path]) -> None:
    # fail fast: every referenced input must exist before any work starts
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise EcocalError(f"missing input file: {path}")


def _overridden_clock(clock: SimClock, dt: Optional[float], horizon: Optional[float]) -> SimClock:
    if dt is None and horizon is None:
        return clock
    return SimClock(
        t0=clock.t0,
        dt=clock.dt if dt is None else dt,
        horizon=clock.horizon if horizon is None else horizon,
    )


def _load_db(path) -> ModelDatabase:
    db = load_model_db(path)
    for w in db.warnings:
        log.warning("%s", w)
    return db


def _print_matrix(db_id: str, matrix) -> None:
    print(f"relationship matrix for {db_id} ({len(matrix.classes)} classes)")
    for code in matrix.classes:
        print(f"  {code} = {matrix.names[code]}")
    body = serialize_matrix(matrix).rstrip("\n").split("\n")
    for line in body[1:]:
        print(f"  {line}")


def cmd_simulate(args) -> int:
    _require_files(args.model)
    db = _load_db(args.model)
    model = db.build()
    clock = _overridden_clock(db.clock, args.dt, args.horizon)
    log.info("simulating %s: %d steps of %r s", db.model_id, clock.steps, clock.dt)
    trajectory = model.run(clock)
    files = report.write_series_files(trajectory, args.out)
    figure = report.render_trajectory_figure(trajectory, args.out)
    report.write_run_meta(args.out, sys.argv[1:], {"model_id": db.model_id})
    print(f"wrote {len(files)} series files and {figure.name} to {args.out}")
    return 0


def cmd_discover(args) -> int:
    _require_files(args.model)
    db = _load_db(args.model)
    model = db.build()
    clock = _overridden_clock(db.clock, args.dt, args.horizon)
    matrix = discover(model, default_training_clock(clock))
    kb = report.ensure_dir(args.knowledge_dir)
    save_matrix(matrix, kb / RELATIONSHIPS_FILE)
    _print_matrix(db.model_id, matrix)
    print(f"wrote {kb / RELATIONSHIPS_FILE}")
    return 0


def _load_or_discover_matrix(db: ModelDatabase, model: Model, args):
    kb = Path(args.knowledge_dir)
    rel_path = kb / RELATIONSHIPS_FILE
    if rel_path.is_file():
        matrix = load_matrix(rel_path)
        for line in stale_report(matrix, model):
            log.warning("stale knowledge: %s", line)
        return matrix, False
    if args.discover:
        matrix = discover(model, default_training_clock(db.clock))
        report.ensure_dir(kb)
        save_matrix(matrix, rel_path)
        return matrix, True
    raise MissingRelationships(
        f"no relationships file at {rel_path}; run `ecocal discover` or pass --discover"
    )


def cmd_sensitivity(args) -> int:
    _require_files(args.model)
    db = _load_db(args.model)
    model = db.build()
    matrix, _ = _load_or_discover_matrix(db, model, args)
    plan = PerturbationPlan()
    print("analysing intra-class sensitivities", file=sys.stderr)
    intra = analyze_intra_all(model, plan)
    print("analysing inter-class sensitivities", file=sys.stderr)
    inter = inter_sensitivity(model, matrix, plan)
    kb = report.ensure_dir(args.knowledge_dir)
    save_sensitivities(intra, inter, kb / SENSITIVITY_FILE)
    for code in matrix.classes:
        m = intra[code]
        if not m.cols:
            print(f"{matrix.names[code]}: no parameters")
            continue
        flat = [(abs(m.cells[i][j]), v, p) for i, v in enumerate(m.rows) for j, p in enumerate(m.cols)]
        mag, var, pname = max(flat)
        print(f"{matrix.names[code]}: strongest cell {var}/{pname} = {m.cell(var, pname)!r}")
    print(f"inter-class entries: {len(inter.entries)}, skipped sources: {len(inter.skipped)}")
    print(f"wrote {kb / SENSITIVITY_FILE}")
    return 0


def _load_bundle(db: ModelDatabase, model: Model, args) -> KnowledgeBundle:
    matrix, fresh = _load_or_discover_matrix(db, model, args)
    kb = Path(args.knowledge_dir)
    sens_path = kb / SENSITIVITY_FILE
    if sens_path.is_file() and not fresh:
        intra, inter = load_sensitivities(sens_path)
        if inter is None:
            raise MissingRelationships(
                f"{sens_path} has no inter-class section; rerun with --discover"
            )
    elif args.discover:
        plan = PerturbationPlan()
        print("analysing sensitivities (pass --knowledge-dir to reuse them)", file=sys.stderr)
        intra = analyze_intra_all(model, plan)
        inter = inter_sensitivity(model, matrix, plan)
        report.ensure_dir(kb)
        save_sensitivities(intra, inter, sens_path)
    else:
        raise MissingRelationships(
            f"no sensitivity file at {sens_path}; run `ecocal sensitivity` or pass --discover"
        )
    return KnowledgeBundle(relationships=matrix, intra=intra, inter=inter)


def cmd_calibrate(args) -> int:
    _require_files(args.model, args.obs)
    db = _load_db(args.model)
    model = db.build()
    observations = load_observations(args.obs)
    bundle = _load_bundle(db, model, args)

    config = AgentConfig(
        sweep_samples=args.sweep_samples,
        lof_goal=args.lof_goal,
        max_rounds=args.max_rounds,
        run_budget=args.budget,
    )
    abort = threading.Event()
    previous_handler = signal.signal(signal.SIGINT, lambda signum, frame: abort.set())

    def progress(phase: str, detail: str, runs: int) -> None:
        print(f"[{phase.lower()}] {detail} (runs={runs})", file=sys.stderr)

    try:
        result = calibrate(
            model,
            observations,
            bundle=bundle,
            config=config,
            abort_signal=abort,
            progress=progress,
        )
    finally:
        signal.signal(signal.SIGINT, previous_handler)

    names = {spec.code: spec.name for spec in db.specs}
    report.write_calibration_files(result, args.out, names)
    report.render_calibration_figure(result, args.out)
    meta = {"model_id": db.model_id, "stop_reason": result.stop_reason}
    if not result.rounds:
        # aborted before the baseline run finished
        report.write_run_meta(args.out, sys.argv[1:], meta)
        print(f"{result.stop_reason}: stopped before the baseline evaluation")
        return EXIT_CODES[result.stop_reason]
    final = result.rounds[-1]
    print(
        f"{result.stop_reason}: aggregate LOF {result.rounds[0].aggregate_lof!r} -> "
        f"{final.aggregate_lof!r} in {result.total_runs} runs "
        f"({max(len(result.rounds) - 1, 0)} rounds, {len(result.sweeps)} sweeps)"
    )

    if args.baseline == "random":
        budget = args.budget if args.budget is not None else 300
        rows = []
        for i in range(args.seeds):
            seed = args.seed + i
            fresh = db.build()
            rs = random_search(
                fresh,
                observations,
                budget=budget,
                seed=seed,
                stop_at_lof=final.aggregate_lof,
            )
            best = rs.rounds[-1].aggregate_lof if rs.rounds else float("inf")
            rows.append(
                {
                    "seed": seed,
                    "runs": rs.total_runs,
                    "reached": rs.stop_reason == GOAL_REACHED,
                    "best_lof": best,
                }
            )
            print(
                f"[baseline] seed {seed}: {rs.total_runs} runs, best {best!r}, "
                f"reached={rows[-1]['reached']}",
                file=sys.stderr,
            )
        table = report.write_baseline_comparison(rows, result.total_runs, final.aggregate_lof, args.out)
        counted = sorted(r["runs"] for r in rows)
        median = counted[len(counted) // 2]
        censored = any(not r["reached"] for r in rows)
        note = " (censored at budget)" if censored else ""
        print(
            f"baseline random search: median {median} runs{note} to reach "
            f"LOF {final.aggregate_lof!r} vs agent {result.total_runs}; table in {table}"
        )
        meta["baseline_median_runs"] = median

    report.write_run_meta(args.out, sys.argv[1:], meta)
    return EXIT_CODES[result.stop_reason]


def cmd_serve(args) -> int:
    from .remote import RemoteServer

    host, _, port_text = args.listen.rpartition(":")
    if not host or not port_text.isdigit():
        raise EcocalError(f"--listen wants host:port, got {args.listen!r}")
    extra = None
    if args.model is not None:
        _require_files(args.model)
        extra = _load_db(args.model)
    observations = None
    if args.obs is not None:
        _require_files(args.obs)
        observations = load_observations(args.obs)

    server = RemoteServer((host, int(port_text)), extra_db=extra, observations=observations)
    stop = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda signum, frame: stop.set())
    try:
        with server:
            print(f"ecocal serving on {server.server_address[0]}:{server.server_address[1]}")
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            while not stop.wait(0.2):
                pass
            server.shutdown()
            thread.join()
    finally:
        signal.signal(signal.SIGINT, previous)
    print("server stopped")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecocal",
        description="calibration engine for coupled box-ecosystem models",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, model_required=True):
        p.add_argument("--model", type=Path, required=model_required, help="model database file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    p = sub.add_parser("simulate", help="run a model and write per-variable series files")
    add_common(p)
    p.add_argument("--dt", type=float, default=None, help="override step length in seconds")
    p.add_argument("--horizon", type=float, default=None, help="override horizon in seconds")

    p = sub.add_parser("discover", help="train the influence graph and write the matrix file")
    add_common(p)
    p.add_argument("--knowledge-dir", type=Path, default=Path("knowledge"))
    p.add_argument("--dt", type=float, default=None, help="override step length in seconds")
    p.add_argument("--horizon", type=float, default=None, help="override training horizon in seconds")

    p = sub.add_parser("sensitivity", help="analyse steady-state sensitivities")
    add_common(p)
    p.add_argument("--knowledge-dir", type=Path, default=Path("knowledge"))
    p.add_argument("--discover", action="store_true", help="train relationships first if missing")

    p = sub.add_parser("calibrate", help="fit parameters against an observation file")
    add_common(p)
    p.add_argument("--obs", type=Path, required=True, help="observation file")
    p.add_argument("--knowledge-dir", type=Path, default=Path("knowledge"))
    p.add_argument("--discover", action="store_true", help="build missing knowledge files first")
    p.add_argument("--sweep-samples", type=int, default=7)
    p.add_argument("--lof-goal", type=float, default=0.1)
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--budget", type=int, default=None, help="model-run budget (agent and baseline)")
    p.add_argument("--baseline", choices=["random"], default=None, help="race an uninformed baseline")
    p.add_argument("--seeds", type=int, default=11, help="baseline seed count")
    p.add_argument("--seed", type=int, default=0, help="first baseline seed")

    p = sub.add_parser("serve", help="serve the line-oriented remote-control protocol")
    add_common(p, model_required=False)
    p.add_argument("--obs", type=Path, default=None, help="observation file for FIT?")
    p.add_argument("--listen", default="127.0.0.1:7667", help="host:port to bind")

    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "sensitivity": cmd_sensitivity,
    "calibrate": cmd_calibrate,
    "serve": cmd_serve,
}


def main(argv: Optional[list[str]] = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except EcocalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
