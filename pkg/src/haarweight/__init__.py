"""haarweight: dyadic Haar systems with matrix weights, at desk scale."""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    CoverageError,
    DomainError,
    EllipsoidFitError,
    HaarweightError,
    MatrixDomainError,
    ParameterError,
    ShapeError,
)
from .dyadic import (
    DyadicCube,
    GridFunction,
    HaarCoefficients,
    HaarSignature,
    haar_eval,
    haar_reconstruct,
    haar_transform,
    lp_norm,
)
from .weights import (
    MatrixWeight,
    WeightFamily,
    make_weight,
    spd_power,
    weight_average,
    weighted_lp_norm,
)
from .reducing import (
    DualityReport,
    FitConfig,
    ReducingFamily,
    ap_characteristic,
    build_reducing_family,
    conjugate_exponent,
    direction_norm,
    dual_reducing_operator,
    duality_check,
    op_norm_stack,
    quasi_uniform_directions,
    reducing_operator,
    scalar_ap_characteristic,
)
from .stopping import (
    CalibrationResult,
    GenerationTree,
    StoppingConfig,
    build_generations,
    calibrate_lambdas,
    decay_ratio,
    delta_projection,
    generation_mask,
    restrict_coefficients,
    stopping_children,
)
from .multipliers import (
    cross_term,
    haar_multiplier,
    multiplier_apply,
    t_block,
    t_blocks,
    t_operator,
)
from .analysis import (
    CrossTermReport,
    EquivalenceReport,
    SharpnessProbe,
    block_bound_quotients,
    block_partition_constant,
    cross_term_rate,
    dual_square_norm,
    equivalence_ratios,
    loglog_slope,
    p2_sequence_norm,
    random_mean_zero_coefficients,
    sharpness_probe,
    square_function,
    square_norm,
)
from .errors import ConfigError, SerializationError
from .serialization import (
    export_reducing_family,
    load_grid_function,
    load_weight,
    save_generation_tree,
    save_grid_function,
    save_weight,
    write_manifest,
)
from .config import (
    ExperimentConfig,
    WeightSpec,
    default_config,
    load_config,
    suite_weight_specs,
)
from .experiments import RunContext, RunResult, alpha_sweep_report, run_experiments
from .acceptance import AcceptanceContext, CriterionResult, run_all
