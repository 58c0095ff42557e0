"""Command-line interface.

Subcommands: prune, train, eval, map, simulate, compare, report. Reports are
written as JSON/CSV with matplotlib figures alongside.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ExperimentConfig, analyze, in_shape_for
from .nn_core import evaluate
from .perf_sim import allocate_replication, stages_from_report
from .pruner import load_checkpoint
from .xbar_map import model_footprint


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train = dataclasses.replace(cfg.train, rng_seed=args.seed)
        cfg.prune = dataclasses.replace(cfg.prune, train=cfg.train)
    if getattr(args, "budget", None) is not None:
        cfg.sim.budget = args.budget
    return cfg


def _checkpointed_model(cfg: ExperimentConfig, ckpt_path):
    model = harness.build_model(cfg)
    return load_checkpoint(ckpt_path, model)


def cmd_prune(args) -> int:
    cfg = _load_config(args)
    train_set, test_set = harness.load_data(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, state = harness.run_prune(cfg, args.method, train_set, test_set)
    from .pruner import save_checkpoint
    ckpt = out / f"{args.method}.mask.json"
    save_checkpoint(ckpt, model, state, {"method": args.method})
    (out / f"{args.method}.history.json").write_text(
        json.dumps(state.history, indent=2, default=float))
    print(f"sparsity={model.sparsity():.4f} baseline={state.baseline_accuracy:.4f} "
          f"checkpoint={ckpt}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    model = _checkpointed_model(cfg, args.checkpoint)
    train_set, test_set = harness.load_data(cfg)
    model, acc, history = harness.retrain_final(cfg, model, train_set, test_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "trained_weights.npz",
             **{str(i): w for i, w in model.weights.items()})
    (out / "train_history.json").write_text(json.dumps(
        {"test_accuracy": acc, "history": history}, indent=2))
    print(f"test_accuracy={acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = _checkpointed_model(cfg, args.checkpoint)
    if args.weights:
        with np.load(args.weights) as npz:
            for key in npz.files:
                model.weights[int(key)] = npz[key]
        model.apply_masks()
    _, test_set = harness.load_data(cfg)
    print(f"test_accuracy={evaluate(model, test_set):.4f}")
    return 0


def cmd_map(args) -> int:
    cfg = _load_config(args)
    model = _checkpointed_model(cfg, args.checkpoint)
    report = model_footprint(model, cfg.crossbar, in_shape_for(cfg), cfg.sim.in_flight)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "savings.json").write_text(report.to_json())
    report.write_csv(out / "savings.csv")
    from .plots import render_savings_per_layer
    render_savings_per_layer(report, out / "savings_per_layer.png")
    print(f"savings_fraction={report.savings_fraction:.4f} "
          f"xbars {report.total_unpruned} -> {report.total_pruned}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    model = _checkpointed_model(cfg, args.checkpoint)
    report, speedup = analyze(cfg, model)
    pruned = stages_from_report(report, pruned=True)
    unpruned = stages_from_report(report, pruned=False)
    budget = cfg.sim.budget or sum(s.weight_xbars + s.act_xbars for s in unpruned)
    plan = allocate_replication(pruned, budget, cfg.sim.kappa, cfg.crossbar.freq_hz)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan.write_csv(out / "pipeline.csv")
    summary = json.loads(plan.summary_json())
    summary["iso_area_speedup"] = speedup
    (out / "pipeline.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    from .plots import render_layer_profile
    render_layer_profile(plan, out / "pipeline.png")
    print(f"pipeline_time_us={plan.pipeline_time * 1e6:.2f} speedup={speedup:.2f}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    report = harness.run_compare(cfg, args.out)
    formats = ("json", "csv") if args.format == "both" else (args.format,)
    harness.emit_report(report, args.out, formats)
    for r in report.results:
        print(f"{r.method}: sparsity={r.sparsity:.3f} acc={r.final_accuracy:.3f} "
              f"savings={r.savings_fraction:.3f} speedup={r.iso_area_speedup:.2f}")
    return 0


def cmd_report(args) -> int:
    report = harness.RunReport.from_json(Path(args.input).read_text())
    formats = ("json", "csv") if args.format == "both" else (args.format,)
    written = harness.emit_report(report, args.out, formats)
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xbarprune")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--budget", type=int)
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="mask checkpoint file")

    p = sub.add_parser("prune", help="run a pruning method, write a mask checkpoint")
    common(p)
    p.add_argument("--method", default="realprune", choices=harness.METHODS)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("train", help="retrain a checkpointed mask from scratch")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpointed model")
    common(p, checkpoint=True)
    p.add_argument("--weights", help="trained_weights.npz from the train step")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("map", help="emit the crossbar savings report")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("simulate", help="emit replication plans and speedups")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", help="run all methods under one config")
    common(p)
    p.add_argument("--format", default="both", choices=["json", "csv", "both"])
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="re-emit a report in another format")
    p.add_argument("--input", required=True, help="report.json path")
    p.add_argument("--out", default="out")
    p.add_argument("--format", default="both", choices=["json", "csv", "both"])
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
