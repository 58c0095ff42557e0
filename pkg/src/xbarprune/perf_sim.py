"""Pipelined-training performance model over a crossbar footprint.

Every layer is a pipeline stage processing one image's worth of MVM windows
per pass; the slowest stage sets the training throughput. Spare crossbars in
the budget are spent greedily replicating the weights of the slowest stage.
Activations are shared between replicas and are never replicated.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

from .xbar_map import CrossbarConfig, SavingsReport


@dataclass
class StageSpec:
    layer: str
    out_dim: int          # O; windows per image = O^2
    weight_xbars: int     # W, crossbars per replica
    act_xbars: int        # A, stored once

    @property
    def windows(self) -> int:
        return self.out_dim * self.out_dim


@dataclass
class LayerTiming:
    layer: str
    windows: int
    replication: int
    cycles: int
    time_s: float


@dataclass
class ReplicationPlan:
    stages: list[StageSpec]
    replication: list[int]
    kappa: int
    freq_hz: float
    budget: int

    @property
    def xbars_used(self) -> int:
        return sum(
            r * s.weight_xbars + s.act_xbars
            for r, s in zip(self.replication, self.stages)
        )

    def timings(self) -> list[LayerTiming]:
        out = []
        for r, s in zip(self.replication, self.stages):
            cyc = layer_cycles(s.windows, r, self.kappa)
            out.append(LayerTiming(s.layer, s.windows, r, cyc, cyc / self.freq_hz))
        return out

    @property
    def pipeline_time(self) -> float:
        return max(t.time_s for t in self.timings())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "O", "windows", "W", "A", "r", "cycles", "time_us"])
            for s, t in zip(self.stages, self.timings()):
                w.writerow([
                    s.layer, s.out_dim, s.windows, s.weight_xbars, s.act_xbars,
                    t.replication, t.cycles, t.time_s * 1e6,
                ])

    def summary_json(self) -> str:
        return json.dumps({
            "pipeline_time_us": self.pipeline_time * 1e6,
            "xbars_used": self.xbars_used,
            "budget": self.budget,
            "replication": self.replication,
        }, indent=2, sort_keys=True)


def layer_cycles(windows: int, r: int, kappa: int) -> int:
    """kappa * ceil(windows / r) cycles per image for one stage."""
    if r < 1:
        raise ValueError(f"replication must be >= 1, got {r}")
    return kappa * math.ceil(windows / r)


def stages_from_report(report: SavingsReport, pruned: bool = True) -> list[StageSpec]:
    return [
        StageSpec(
            layer=l.name,
            out_dim=l.out_dim,
            weight_xbars=l.xbars_pruned if pruned else l.xbars_unpruned,
            act_xbars=l.act_xbars_pruned if pruned else l.act_xbars_unpruned,
        )
        for l in report.layers
    ]


def allocate_replication(
    stages: list[StageSpec],
    budget: int,
    kappa: int = 3,
    freq_hz: float = 1e7,
) -> ReplicationPlan:
    """Greedy replication under a crossbar budget.

    Repeatedly picks the slowest stage (ties to the lowest index) and grows its
    replica count to the next value that strictly reduces the stage's cycle
    count, when the extra replicas fit the remaining budget. Skipping across
    ceil plateaus matters: with 4 windows, r=3 is no faster than r=2 but r=4
    halves the cycles, and stepping one replica at a time would stall there.
    Stops when the slowest stage has no affordable improving move.
    """
    minimal = sum(s.weight_xbars + s.act_xbars for s in stages)
    if budget < minimal:
        raise ValueError(f"budget {budget} below minimal footprint {minimal}")
    r = [1] * len(stages)
    remaining = budget - minimal
    while True:
        cycles = [layer_cycles(s.windows, ri, kappa) for s, ri in zip(stages, r)]
        slow = max(range(len(stages)), key=lambda i: (cycles[i], -i))
        s = stages[slow]
        if s.weight_xbars == 0 or r[slow] >= s.windows:
            break
        target = r[slow] + 1
        while layer_cycles(s.windows, target, kappa) >= cycles[slow]:
            target += 1
        cost = (target - r[slow]) * s.weight_xbars
        if cost > remaining:
            break
        r[slow] = target
        remaining -= cost
    return ReplicationPlan(stages, r, kappa, freq_hz, budget)


def iso_area_speedup(
    unpruned: list[StageSpec],
    pruned: list[StageSpec],
    budget: int,
    kappa: int = 3,
    freq_hz: float = 1e7,
) -> tuple[float, ReplicationPlan, ReplicationPlan]:
    """Pipeline-time ratio at equal crossbar budget (unpruned / pruned)."""
    plan_u = allocate_replication(unpruned, budget, kappa, freq_hz)
    plan_p = allocate_replication(pruned, budget, kappa, freq_hz)
    return plan_u.pipeline_time / plan_p.pipeline_time, plan_u, plan_p


def iso_perf_xbars(
    unpruned: list[StageSpec],
    pruned: list[StageSpec],
    replication: list[int],
) -> tuple[int, int, float]:
    """Crossbar counts at a shared replication vector (equal parallelism and
    hence equal pipeline time); returns (unpruned, pruned, savings)."""
    xu = sum(r * s.weight_xbars + s.act_xbars for r, s in zip(replication, unpruned))
    xp = sum(r * s.weight_xbars + s.act_xbars for r, s in zip(replication, pruned))
    return xu, xp, (1.0 - xp / xu) if xu else 0.0
