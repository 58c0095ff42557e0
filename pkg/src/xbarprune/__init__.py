"""Crossbar-aware lottery-ticket pruning for CNN training on ReRAM-style
crossbar accelerators, with footprint accounting and a pipelined-training
performance model."""

from .nn_core import (
    Conv,
    ConvSpec,
    Dataset,
    Flatten,
    Linear,
    MaxPool,
    ModelGraph,
    ReLU,
    ResidualAddFrom,
    TrainConfig,
    evaluate,
    forward,
    backward,
    sgd_step,
    train,
    xavier_init,
)
from .xbar_map import (
    CrossbarConfig,
    LayerMatrix,
    SavingsReport,
    activation_cells,
    layer_to_matrix,
    matrix_to_layer,
    model_footprint,
    saved_rows_cols,
    weight_xbars,
)
from .pruner import (
    Granularity,
    Group,
    PruneConfig,
    PruneState,
    group_scores,
    prune_step,
    rewind,
    run_group_baseline,
    run_ltp,
    run_realprune,
    undo_last,
)
from .perf_sim import (
    ReplicationPlan,
    StageSpec,
    allocate_replication,
    iso_area_speedup,
    iso_perf_xbars,
    layer_cycles,
)

__version__ = "0.1.0"
