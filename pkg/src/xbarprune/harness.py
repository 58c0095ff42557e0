"""Experiment configuration and orchestration: prune -> retrain from scratch
-> map to crossbars -> simulate the training pipeline -> compare methods."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from .nn_core import Dataset, ModelGraph, TrainConfig, evaluate, train, xavier_init
from .presets import build_preset
from .pruner import (
    Granularity,
    PruneConfig,
    PruneState,
    load_checkpoint,
    run_group_baseline,
    run_ltp,
    run_realprune,
    save_checkpoint,
)
from .perf_sim import allocate_replication, iso_area_speedup, stages_from_report
from .xbar_map import CrossbarConfig, model_footprint

METHODS = ("realprune", "ltp", "column", "block")


@dataclass
class DatasetConfig:
    name: str = "mnist"
    path: str | None = None
    train_subset: int = 5000
    test_subset: int = 1000


@dataclass
class SimConfig:
    budget: int | None = None   # None -> unpruned minimal footprint
    kappa: int = 3
    in_flight: int = 1


@dataclass
class ExperimentConfig:
    preset: str = "mini-vgg"
    classes: int = 10
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    crossbar: CrossbarConfig = field(default_factory=CrossbarConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        """Build from a JSON file; any subset of fields may be present."""
        with open(path) as fh:
            doc = json.load(fh)
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        cfg = cls()
        nested = {
            "dataset": DatasetConfig, "train": TrainConfig,
            "prune": PruneConfig, "crossbar": CrossbarConfig, "sim": SimConfig,
        }
        for key, val in doc.items():
            if key in nested:
                overrides = dict(val)
                if key == "prune":
                    overrides.pop("train", None)  # prune.train mirrors cfg.train
                    if "block_shape" in overrides:
                        overrides["block_shape"] = tuple(overrides["block_shape"])
                setattr(cfg, key, dataclasses.replace(getattr(cfg, key), **overrides))
            elif hasattr(cfg, key):
                setattr(cfg, key, val)
            else:
                raise ValueError(f"unknown config key {key!r}")
        cfg.train = dataclasses.replace(cfg.train, rng_seed=cfg.seed)
        cfg.prune = dataclasses.replace(cfg.prune, train=cfg.train)
        return cfg

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def in_shape_for(cfg: ExperimentConfig) -> tuple[int, int, int]:
    name = cfg.dataset.name
    if name == "cifar10":
        return (3, 32, 32)
    if name == "mnist":
        return (1, 28, 28)
    return (1, 8, 8)  # synthetic-blobs default


def build_model(cfg: ExperimentConfig) -> ModelGraph:
    c, h, _ = in_shape_for(cfg)
    model = build_preset(cfg.preset, c, h, cfg.classes)
    return xavier_init(model, cfg.seed)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    return data_mod.load_dataset(d.name, d.path, d.train_subset, d.test_subset, cfg.seed)


def run_prune(cfg: ExperimentConfig, method: str, train_set, test_set):
    """One pruning run; returns (pruned model rewound to init, PruneState)."""
    model = build_model(cfg)
    if method == "realprune":
        return run_realprune(model, train_set, test_set, cfg.prune)
    if method == "ltp":
        return run_ltp(model, train_set, test_set, cfg.prune)
    if method == "column":
        return run_group_baseline(model, train_set, test_set, cfg.prune,
                                  Granularity.COLUMN_GROUP)
    if method == "block":
        return run_group_baseline(model, train_set, test_set, cfg.prune,
                                  Granularity.BLOCK_GROUP)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def retrain_final(cfg: ExperimentConfig, model: ModelGraph, train_set, test_set):
    """Deployment-phase retrain from scratch (rewound init) for F epochs."""
    tcfg = dataclasses.replace(cfg.train, epochs=cfg.prune.final_epochs)
    model, history = train(model, train_set, tcfg)
    return model, evaluate(model, test_set), history


@dataclass
class MethodResult:
    method: str
    sparsity: float
    baseline_accuracy: float
    final_accuracy: float
    weight_xbars_unpruned: int
    weight_xbars_pruned: int
    act_xbars_unpruned: int
    act_xbars_pruned: int
    savings_fraction: float
    iso_area_speedup: float


@dataclass
class RunReport:
    results: list[MethodResult] = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    timestamp: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "timestamp": self.timestamp,
            "results": [asdict(r) for r in self.results],
        }, indent=2, sort_keys=True)

    CSV_COLUMNS = [
        "method", "sparsity", "baseline_accuracy", "final_accuracy",
        "weight_xbars_unpruned", "weight_xbars_pruned",
        "act_xbars_unpruned", "act_xbars_pruned",
        "savings_fraction", "iso_area_speedup",
    ]

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.results:
            d = asdict(r)
            lines.append(",".join(str(d[c]) for c in self.CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        doc = json.loads(text)
        rep = cls(config_hash=doc["config_hash"], seed=doc["seed"],
                  timestamp=doc["timestamp"])
        rep.results = [MethodResult(**r) for r in doc["results"]]
        return rep


def analyze(cfg: ExperimentConfig, model: ModelGraph):
    """Footprint + iso-area speedup of a pruned model vs its unpruned self."""
    report = model_footprint(model, cfg.crossbar, in_shape_for(cfg), cfg.sim.in_flight)
    unpruned = stages_from_report(report, pruned=False)
    pruned = stages_from_report(report, pruned=True)
    budget = cfg.sim.budget or sum(s.weight_xbars + s.act_xbars for s in unpruned)
    speedup, _, _ = iso_area_speedup(
        unpruned, pruned, budget, cfg.sim.kappa, cfg.crossbar.freq_hz
    )
    return report, speedup


def run_method(cfg: ExperimentConfig, method: str, train_set, test_set,
               checkpoint_path=None) -> MethodResult:
    model, state = run_prune(cfg, method, train_set, test_set)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, state, {"method": method})
    report, speedup = analyze(cfg, model)
    _, final_acc, _ = retrain_final(cfg, model.clone(), train_set, test_set)
    return MethodResult(
        method=method,
        sparsity=model.sparsity(),
        baseline_accuracy=state.baseline_accuracy,
        final_accuracy=final_acc,
        weight_xbars_unpruned=report.weight_xbars_unpruned,
        weight_xbars_pruned=report.weight_xbars_pruned,
        act_xbars_unpruned=report.act_xbars_unpruned,
        act_xbars_pruned=report.act_xbars_pruned,
        savings_fraction=report.savings_fraction,
        iso_area_speedup=speedup,
    )


def run_compare(cfg: ExperimentConfig, out_dir, methods=METHODS) -> RunReport:
    train_set, test_set = load_data(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    for method in methods:
        ckpt = out_dir / f"{method}.mask.json"
        report.results.append(run_method(cfg, method, train_set, test_set, ckpt))
    return report


def emit_report(report: RunReport, out_dir, formats=("json", "csv"),
                figures: bool = True) -> list[Path]:
    """Write the report in the requested delimited formats plus figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out_dir / "report.json"
        p.write_text(report.to_json())
        written.append(p)
    if "csv" in formats:
        p = out_dir / "report.csv"
        p.write_text(report.to_csv())
        written.append(p)
    if figures and report.results:
        from . import plots
        written.extend(plots.render_report_figures(report, out_dir))
    return written
