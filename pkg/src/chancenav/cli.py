"""Command-line pipeline over scenario files.

Verbs: validate, plan, fuse, synthesize, simulate, compare,
update-covariance.  Artifacts (JSON, CSV, SVG) are byte-stable: rerunning
a verb with the same inputs and seed rewrites identical files.

Exit codes: 0 success, 2 validation failure, 3 infeasible synthesis,
4 runtime/numerics failure.
"""

import argparse
import dataclasses
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .landmarks import fuse_min_variance, lme_sequence
from .scenario import (ScenarioError, describe, load_scenario,
                       scenario_digest, virtual_landmark_from_document,
                       virtual_landmark_to_document)
from .safety import ChanceSpec
from .sim import SimulationError, monte_carlo, run_episode
from .svgplot import PHYSICAL_COLOR, VIRTUAL_COLOR, render_scene
from .synthesis import (SynthesisInfeasibleError, controller_from_document,
                        controller_to_document, synthesize,
                        update_on_new_covariance, verify_at_vertices)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_RUNTIME = 4

SCHEMA_VERSION = 1
FLOAT_FMT = "%.12g"
TRAJECTORY_COLORS = (PHYSICAL_COLOR, VIRTUAL_COLOR, "#2ca02c", "#9467bd",
                     "#8c564b", "#e377c2")


# --------------------------------------------------------------------------
# shared plumbing

def _load_json(path) -> dict:
    path = str(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ScenarioError(str(exc), source=path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc.msg}", where="document",
                            line=exc.lineno, source=path) from exc


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def _out_dir(args, scenario) -> Path:
    if args.out is not None:
        return Path(args.out)
    if scenario.out_dir is not None:
        return Path(scenario.out_dir)
    return Path(".")


def _cell_id(args, scenario) -> str:
    cell = args.cell if args.cell is not None else scenario.start_cell
    scenario.cell_plan(cell)  # raises KeyError on unknown ids
    return cell


def _chance_spec(args, scenario) -> ChanceSpec:
    spec = scenario.spec
    if getattr(args, "eta0", None) is not None:
        spec = replace(spec, eta0=args.eta0)
    if getattr(args, "mode", None) is not None:
        spec = replace(spec, mode=args.mode)
    return spec


def _sim_config(args, scenario):
    config = scenario.sim
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        config = replace(config, trials=args.trials)
    return config


def _controller_bundle(path, scenario, plan):
    """Load a controller artifact and bind it to the cell's landmarks.

    Returns (label, controller, virtual-or-None); virtual controllers carry
    their fused landmark in provenance so simulation can mix the same
    physical measurement draws.
    """
    doc = _load_json(path)
    controller = controller_from_document(doc)
    vdoc = doc.get("provenance", {}).get("virtual_landmark")
    if vdoc is not None:
        virtual, source_ids = virtual_landmark_from_document(vdoc)
        if tuple(source_ids) != tuple(plan.landmark_ids):
            raise ValueError(
                f"{path}: fused landmark mixes sources {list(source_ids)} "
                f"but cell {plan.cell.id!r} provides "
                f"{list(plan.landmark_ids)}")
    else:
        virtual = None
        if tuple(controller.landmark_ids) != tuple(plan.landmark_ids):
            raise ValueError(
                f"{path}: controller feeds back on landmarks "
                f"{list(controller.landmark_ids)} but cell "
                f"{plan.cell.id!r} provides {list(plan.landmark_ids)}")
    return Path(path).stem, controller, virtual


def _episode_csv(record, dt: float) -> str:
    """One row per control step: time, state at the step, applied input."""
    states = record.states
    inputs = record.inputs
    n, m = states.shape[1], inputs.shape[1]
    header = ["t"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
    rows = [",".join(header)]
    for k in range(inputs.shape[0]):
        cells = [FLOAT_FMT % (k * dt)]
        cells += [FLOAT_FMT % v for v in states[k]]
        cells += [FLOAT_FMT % v for v in inputs[k]]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def _stats_document(label, stats, config, scenario, cell_id) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "stats",
           "controller": label, "scenario": scenario.name, "cell": cell_id,
           "seed": config.seed, "dt": config.dt}
    doc.update(dataclasses.asdict(stats))
    doc["step_violation_rates"] = list(doc["step_violation_rates"])
    return doc


def _outcome(record) -> str:
    if record.collided:
        return "collided"
    if record.exit_time is None:
        return "timed out"
    return f"exit {record.exit_time:.2f}s"


def _scene(scenario, cell_id, virtuals=(), trajectories=(), legend=()):
    plan = scenario.cell_plan(cell_id)
    return render_scene(cells=[plan.cell],
                        landmarks=scenario.landmarks_for(cell_id),
                        virtual_landmarks=list(virtuals),
                        trajectories=list(trajectories),
                        legend=list(legend))


def _run_batch(scenario, plan, controller, config, virtual):
    return monte_carlo(scenario.system, controller,
                       scenario.landmarks_for(plan.cell.id), plan.walls,
                       plan.exit_face, config, start=_start_for(scenario, plan),
                       virtual=virtual)


def _run_one(scenario, plan, controller, config, virtual):
    return run_episode(scenario.system, controller,
                       scenario.landmarks_for(plan.cell.id), plan.walls,
                       plan.exit_face, config, start=_start_for(scenario, plan),
                       virtual=virtual)


def _start_for(scenario, plan):
    # the scenario start state only applies inside its own cell
    if plan.cell.id == scenario.start_cell:
        return scenario.start_state
    return None


# --------------------------------------------------------------------------
# verbs

def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    for line in describe(scenario):
        print(line)
    print(f"digest: sha256:{scenario_digest(scenario.document)}")
    print("scenario OK")
    return EXIT_OK


def cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    route = scenario.route()
    print(" -> ".join(route))
    doc = {"schema_version": SCHEMA_VERSION, "kind": "route",
           "scenario": scenario.name, "start": scenario.start_cell,
           "goal": scenario.goal_cell, "cells": list(route)}
    _emit(_out_dir(args, scenario) / "route.json", _json_text(doc))
    return EXIT_OK


def cmd_fuse(args) -> int:
    scenario = load_scenario(args.scenario)
    cell_id = _cell_id(args, scenario)
    landmarks = scenario.landmarks_for(cell_id)
    plan = scenario.cell_plan(cell_id)
    if args.lme is not None:
        if args.kbar2 is None:
            raise ValueError("--lme requires --kbar2 (one weight per "
                             "measurement dimension)")
        dim = landmarks[0].dim
        if len(args.kbar2) != dim:
            raise ValueError(f"--kbar2 needs {dim} values (one per "
                             f"measurement dimension); got "
                             f"{len(args.kbar2)}")
        virtuals = lme_sequence(landmarks, np.array(args.kbar2), args.lme)
        method = "lme"
    else:
        virtuals = [fuse_min_variance(landmarks)]
        method = "min-variance"

    provenance = {"scenario_sha256": scenario_digest(scenario.document),
                  "cell": cell_id, "method": method}
    docs = [virtual_landmark_to_document(v, plan.landmark_ids,
                                         provenance=provenance)
            for v in virtuals]
    doc = {"schema_version": SCHEMA_VERSION, "kind": "virtual-landmark-set",
           "scenario": scenario.name, "cell": cell_id, "method": method,
           "landmarks": docs}

    for rank, virtual in enumerate(virtuals):
        print(f"virtual landmark {rank}: position "
              f"{np.array2string(virtual.position, precision=4)}")
    first = virtuals[0]
    for lid, lm in zip(plan.landmark_ids, landmarks):
        # Loewner check: fused covariance never exceeds any source
        margin = float(np.linalg.eigvalsh(lm.covariance
                                          - first.covariance).min())
        verdict = "<=" if margin >= -1e-12 else "NOT <="
        print(f"covariance check: fused {verdict} {lid} "
              f"(min eigenvalue margin {margin:.3e})")

    out = _out_dir(args, scenario)
    _emit(out / "virtual_landmarks.json", _json_text(doc))
    legend = [f"cell {cell_id}: {len(landmarks)} landmarks -> "
              f"{len(virtuals)} fused ({method})"]
    _emit(out / "fusion.svg",
          _scene(scenario, cell_id, virtuals=virtuals, legend=legend))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    scenario = load_scenario(args.scenario)
    cell_id = _cell_id(args, scenario)
    plan = scenario.cell_plan(cell_id)
    spec = _chance_spec(args, scenario)
    if args.landmarks == "virtual":
        virtual = scenario.fused_landmark(cell_id)
        problem = scenario.synthesis_problem(cell_id, landmarks=virtual,
                                             spec=spec)
    else:
        virtual = None
        problem = scenario.synthesis_problem(cell_id, spec=spec)

    controller, report = synthesize(problem, return_report=True)
    audit = verify_at_vertices(controller, problem)
    provenance = {
        "scenario_sha256": scenario_digest(scenario.document),
        "scenario": scenario.name,
        "cell": cell_id,
        "landmarks": args.landmarks,
        "eta0": spec.eta0,
        "mode": spec.mode,
        "solver": {"status": report.status,
                   "iterations": report.iterations,
                   "objective_value": report.objective_value,
                   "kkt_residual": report.kkt_residual,
                   "duality_gap": report.duality_gap},
        "vertex_report": {"max_violation": audit.max_violation,
                          "worst_constraint": audit.worst_constraint,
                          "violations": audit.violations,
                          "sigma_k2": audit.sigma_k2},
    }
    if virtual is not None:
        provenance["virtual_landmark"] = virtual_landmark_to_document(
            virtual, plan.landmark_ids)
    doc = controller_to_document(controller, provenance=provenance)

    print(f"cell {cell_id}: {args.landmarks} design, "
          f"{len(controller.blocks)} feedback block(s)")
    print(f"solver: {report.status} in {report.iterations} iterations, "
          f"objective {report.objective_value:.6g}")
    print(f"vertex check: worst constraint {audit.worst_constraint} at "
          f"{audit.max_violation:.3e}")
    _emit(_out_dir(args, scenario) / f"controller_{args.landmarks}.json",
          _json_text(doc))
    return EXIT_OK


def _evaluate(args, want_table: bool) -> int:
    scenario = load_scenario(args.scenario)
    cell_id = _cell_id(args, scenario)
    plan = scenario.cell_plan(cell_id)
    config = _sim_config(args, scenario)
    out = _out_dir(args, scenario)

    bundles = [_controller_bundle(p, scenario, plan) for p in args.controllers]
    rows = []
    trajectories = []
    legend = []
    virtual_markers = []
    for i, (label, controller, virtual) in enumerate(bundles):
        stats = _run_batch(scenario, plan, controller, config, virtual)
        record = _run_one(scenario, plan, controller, config, virtual)
        color = TRAJECTORY_COLORS[i % len(TRAJECTORY_COLORS)]
        rows.append((label, stats))
        trajectories.append((record.states, color))
        legend.append(f"{label}: {_outcome(record)}, violation rate "
                      f"{stats.violation_rate:.4f}")
        if virtual is not None and not any(
                np.array_equal(virtual.position, v.position)
                for v in virtual_markers):
            virtual_markers.append(virtual)
        if not want_table:
            _emit(out / f"trajectory_{label}.csv",
                  _episode_csv(record, config.dt))
            _emit(out / f"stats_{label}.json", _json_text(
                _stats_document(label, stats, config, scenario, cell_id)))
            _emit(out / f"trajectory_{label}.svg",
                  _scene(scenario, cell_id,
                         virtuals=[virtual] if virtual is not None else [],
                         trajectories=[(record.states, color)],
                         legend=[legend[-1]]))
            print(f"{label}: exited {stats.n_exited}/{stats.trials}, "
                  f"median exit {stats.median_exit_time:.3f}s, "
                  f"median jitter {stats.median_jitter:.4f}, "
                  f"violation rate {stats.violation_rate:.4f}")

    if want_table:
        width = max(len(label) for label, _ in rows)
        header = (f"{'controller':<{width}}  {'exit(med)':>9}  "
                  f"{'jitter(med)':>11}  {'violations':>10}")
        print(header)
        for label, stats in rows:
            print(f"{label:<{width}}  {stats.median_exit_time:>9.3f}  "
                  f"{stats.median_jitter:>11.5f}  "
                  f"{stats.violation_rate:>10.4f}")
        doc = {"schema_version": SCHEMA_VERSION, "kind": "comparison",
               "scenario": scenario.name, "cell": cell_id,
               "seed": config.seed, "trials": config.trials,
               "rows": [_stats_document(label, stats, config, scenario,
                                        cell_id)
                        for label, stats in rows]}
        _emit(out / "compare.json", _json_text(doc))
        _emit(out / "compare.svg",
              _scene(scenario, cell_id, virtuals=virtual_markers,
                     trajectories=trajectories, legend=legend))
    return EXIT_OK


def cmd_simulate(args) -> int:
    return _evaluate(args, want_table=False)


def cmd_compare(args) -> int:
    if len(args.controllers) < 2:
        raise ValueError("compare needs at least two controller files")
    return _evaluate(args, want_table=True)


def cmd_update_covariance(args) -> int:
    scenario = load_scenario(args.scenario)
    doc = _load_json(args.controller)
    controller = controller_from_document(doc)
    vdoc = doc.get("provenance", {}).get("virtual_landmark")
    if vdoc is None:
        raise ValueError(f"{args.controller}: not a fused-landmark "
                         "controller (no virtual landmark in provenance)")
    old_virtual, source_ids = virtual_landmark_from_document(vdoc)

    update = _load_json(args.covariances)
    if update.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("unsupported covariance-update schema "
                         f"{update.get('schema_version')!r}")
    if update.get("kind") != "covariance-update":
        raise ValueError("not a covariance-update document: kind="
                         f"{update.get('kind')!r}")
    table = update.get("covariances", {})
    missing = [lid for lid in source_ids if lid not in table]
    if missing:
        raise ValueError(f"missing covariances for landmarks {missing}")

    new_landmarks = []
    for lid in source_ids:
        old = scenario.landmark_table.get(lid)
        if old is None:
            raise ValueError(f"landmark {lid!r} is not in scenario "
                             f"{scenario.name!r}")
        new_landmarks.append(dataclasses.replace(
            old, covariance=np.array(table[lid], dtype=float)))

    new_virtual, new_controller = update_on_new_covariance(
        controller, old_virtual, new_landmarks)
    provenance = dict(doc.get("provenance", {}))
    provenance["virtual_landmark"] = virtual_landmark_to_document(
        new_virtual, source_ids)
    provenance["updated_from"] = str(args.controller)
    provenance["update"] = "remixed weights on new covariances; no re-solve"
    out_doc = controller_to_document(new_controller, provenance=provenance)

    old_trace = float(np.trace(old_virtual.covariance))
    new_trace = float(np.trace(new_virtual.covariance))
    print(f"fused covariance trace: {old_trace:.6g} -> {new_trace:.6g}")
    _emit(_out_dir(args, scenario)
          / f"{Path(args.controller).stem}_updated.json",
          _json_text(out_doc))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chancenav",
        description="Fuse noisy landmarks and synthesize chance-constrained "
                    "cell-to-cell navigation controllers.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario JSON file")
    common.add_argument("--out", default=None,
                        help="artifact directory (default: scenario out_dir)")

    cell = argparse.ArgumentParser(add_help=False)
    cell.add_argument("--cell", default=None,
                      help="cell id (default: the scenario's start cell)")

    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument("--seed", type=int, default=None,
                      help="override the scenario seed")
    runs.add_argument("--trials", type=int, default=None,
                      help="override the scenario trial count")

    p = sub.add_parser("validate", parents=[common],
                       help="parse and check a scenario file")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("plan", parents=[common],
                       help="print the start-to-goal cell route")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("fuse", parents=[common, cell],
                       help="fuse a cell's landmarks into virtual landmarks")
    p.add_argument("--lme", type=int, default=None, metavar="N",
                   help="emit N sequentially uncorrelated virtual landmarks "
                        "instead of the minimum-variance fusion")
    p.add_argument("--kbar2", type=float, nargs="+", default=None,
                   metavar="W", help="squared gain weights for --lme, one "
                                     "per measurement dimension")
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("synthesize", parents=[common, cell],
                       help="solve for a safe output-feedback controller")
    p.add_argument("--landmarks", choices=("physical", "virtual"),
                   default="physical",
                   help="feed back on the raw landmarks or on their "
                        "minimum-variance fusion")
    p.add_argument("--eta0", type=float, default=None,
                   help="override the per-step violation budget")
    p.add_argument("--mode", choices=("variance", "stddev"), default=None,
                   help="override the constraint-tightening mode")
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("simulate", parents=[common, cell, runs],
                       help="Monte Carlo one or more controllers")
    p.add_argument("controllers", nargs="+",
                   help="controller JSON files from `synthesize`")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("compare", parents=[common, cell, runs],
                       help="matched-seed side-by-side controller stats")
    p.add_argument("controllers", nargs="+",
                   help="two or more controller JSON files")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("update-covariance", parents=[common, cell],
                       help="remix a fused-landmark controller onto new "
                            "covariances without re-solving")
    p.add_argument("controller", help="controller JSON from "
                                      "`synthesize --landmarks virtual`")
    p.add_argument("--covariances", required=True,
                   help="covariance-update JSON file")
    p.set_defaults(handler=cmd_update_covariance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except SynthesisInfeasibleError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SimulationError, FloatingPointError,
            np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ScenarioError, ValueError, KeyError, OSError) as err:
        message = err.args[0] if isinstance(err, KeyError) else err
        print(f"error: {message}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
