"""Low-rank Hankel signal approximation under multiple rank constraints.

A penalty method with pseudo-projection subproblems, refined by alternating
pseudo-projections between the per-channel and coupled constraint sets.
"""

from .errors import (
    ConditioningError,
    DimensionError,
    GenerationError,
    HankelFitError,
    LineSearchError,
)
from .hankel import (
    ChannelStack,
    HankelShape,
    RankSpec,
    block_hankel_adjoint,
    block_hankel_map,
    hankel_adjoint,
    hankel_map,
    numerical_rank,
    rank_distance,
    rank_project,
)
from .projection import (
    KernelVector,
    ProjectionOptions,
    PseudoProjectionResult,
    StructureSetting,
    constraint_matrix,
    inner_solve,
    kkt_check,
    pseudo_project,
    pseudo_project_channels,
    psi_value_and_gradient,
    rank1_improve,
)
from .penalty import (
    PenaltyObjective,
    PenaltyVariant,
    VnpgOptions,
    VnpgTrace,
    penalty_value,
    smooth_part_grad,
    vnpg_major,
    vnpg_step,
    xi_subgradient,
)
from .driver import (
    HybridConfig,
    HybridReport,
    penalty_stage,
    post_process,
    run_ap_baseline,
    run_hybrid,
)
from .signals import (
    ExperimentInstance,
    SystemSpec,
    WeightedLoss,
    add_noise,
    constraint_violation,
    default_weights,
    generate_signals,
    make_instance,
    violation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
