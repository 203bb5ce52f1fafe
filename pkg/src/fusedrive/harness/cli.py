"""Command line entry point: ``fusedrive {synth,train,eval,optimize,report,pipeline}``.

Failures print one JSON object ``{"error": ..., "message": ...}`` on stderr and exit 1;
malformed command lines print usage and exit 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..heads.io import dumps, plan_from_dict, plan_to_dict
from ..heads.newton import NewtonOptions, newton_optimize
from ..metrics.report import report_to_csv, report_to_json, validate_report
from ..scene.generate import generate_scene
from ..scene.geometry import to_frame
from ..scene.occupancy import occupancy_from_json, rasterize_occupancy
from ..scene.types import SceneConfig, scene_from_json
from .config import ExperimentConfig, dump_config, load_config
from .data import load_scene_dir, occupancy_target, write_scenes
from .pipeline import (
    evaluate_models,
    heldout_scenes,
    load_models,
    run_experiment,
    train_models,
    training_scenes,
    write_report,
)

log = logging.getLogger("fusedrive")


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig.from_dict({})


def cmd_synth(args) -> dict:
    scene_cfg = _config(args.config).scene if args.config else SceneConfig()
    scenes = [generate_scene(args.seed + i, scene_cfg) for i in range(args.count)]
    paths = write_scenes(scenes, args.out)
    return {"written": [str(p) for p in paths]}


def cmd_train(args) -> dict:
    cfg = _config(args.config)
    hcfg = cfg.head_config(cfg.variants[0].name)
    train = load_scene_dir(args.scenes, hcfg) if args.scenes else training_scenes(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    _, training = train_models(cfg, train, out)
    return {"run": str(out), "variants": [v.name for v in cfg.variants], "stage1": training["stage1"]}


def cmd_eval(args) -> dict:
    cfg = _config(args.config)
    hcfg = cfg.head_config(cfg.variants[0].name)
    heldout = load_scene_dir(args.scenes, hcfg) if args.scenes else heldout_scenes(cfg)
    if args.oracle:
        models, training = {}, None
    else:
        if not args.run:
            raise ValueError("eval needs --run (a train output directory) unless --oracle is given")
        models, training = load_models(cfg, args.run)
    report = evaluate_models(cfg, models, heldout, training, keep_samples=args.samples, oracle=args.oracle)
    j, c = write_report(report, args.out)
    return {"report": str(j), "csv": str(c)}


def cmd_pipeline(args) -> dict:
    cfg = _config(args.config)
    report = run_experiment(cfg, args.out, keep_samples=args.samples)
    return {"report": str(Path(args.out) / "report.json"), "runs": list(report["runs"])}


def cmd_optimize(args) -> dict:
    scene_id, plan = plan_from_dict(json.loads(Path(args.plan).read_text()))
    if args.occupancy:
        occ = occupancy_from_json(Path(args.occupancy).read_text())
    elif args.scene:
        occ = rasterize_occupancy(scene_from_json(Path(args.scene).read_text()), steps=len(plan))
    else:
        raise ValueError("optimize needs --occupancy or --scene")
    opts = NewtonOptions(w_occ=args.w_occ, softening=args.softening, tol=args.tol, max_iter=args.max_iter)
    res = newton_optimize(plan, occ, opts)
    doc = json.loads(Path(args.plan).read_text())
    out = plan_to_dict(scene_id, res.x, doc.get("command", "forward"), doc.get("dt", 0.5))
    out["newton"] = {"iterations": res.iterations, "converged": bool(res.converged),
                     "objective": [float(v) for v in res.values]}
    Path(args.out).write_text(dumps(out) + "\n")
    return {"plan": args.out, "iterations": res.iterations, "objective": float(res.values[-1])}


def cmd_report(args) -> dict:
    from .plots import plot_bev, render_report

    report = json.loads(Path(args.report).read_text())
    validate_report(report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_to_json(report))
    (out / "report.csv").write_text(report_to_csv(report))
    history = None
    hpath = Path(args.history) if args.history else Path(args.report).parent / "history.json"
    if hpath.exists():
        history = json.loads(hpath.read_text())
    written = render_report(report, out, history)
    if args.scenes:
        for f in sorted(Path(args.scenes).glob("*.json"))[: args.max_scenes]:
            scene = scene_from_json(f.read_text())
            pose = scene.ego_poses[scene.n_past]
            # tracks are stored in the world frame, the grid in the current ego frame
            paths = [to_frame(a.future(scene.n_past), pose) for a in scene.agents]
            written.append(plot_bev(occupancy_target(scene), scene.config.extent, out / f"bev_{scene.scene_id}.png",
                                    paths, scene.scene_id))
    return {"written": [str(p) for p in written]}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusedrive", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a scene corpus")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="experiment YAML whose scene section is used")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="run the three training stages for every variant")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", help="directory of scene JSON files (default: generated from config seeds)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate trained variants on held-out scenes")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--run", help="output directory of a train run")
    s.add_argument("--scenes", help="directory of held-out scene JSON files")
    s.add_argument("--oracle", action="store_true", help="pass ground truth through instead of the model")
    s.add_argument("--samples", type=int, default=4, help="scenes kept in the report for plotting")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="train and evaluate in one process")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--samples", type=int, default=4)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("optimize", help="refine a plan/1 file against an occupancy field")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--occupancy", help="occupancy JSON")
    s.add_argument("--scene", help="scene JSON; its ground-truth future occupancy is used")
    s.add_argument("--w-occ", type=float, default=1.0)
    s.add_argument("--softening", type=float, default=1.0)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=50)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("report", help="re-emit a report as JSON/CSV and render plots")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="history.json from a train run (default: next to the report)")
    s.add_argument("--scenes", help="scene directory for BEV occupancy plots")
    s.add_argument("--max-scenes", type=int, default=4)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except Exception as e:  # noqa: BLE001 - every failure becomes a JSON diagnostic
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}) + "\n")
        return 1
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
