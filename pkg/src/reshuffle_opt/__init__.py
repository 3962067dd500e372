"""Random reshuffling optimizers with a stopping criterion, saddle escape,
and Monte-Carlo checks of the concentration bounds that justify them."""

from .concentration import (
    TailEstimate,
    bernstein_bound,
    empirical_partial_sum_tail,
    epoch_error_certificate,
    gradient_error_certificate,
    partial_sum_tail_sweep,
    wilson_interval,
)
from .data_ingest import (
    DatasetHandle,
    IdxError,
    IdxFormatError,
    IdxLengthError,
    IdxValueError,
    load_idx_dataset,
    make_gaussian_blobs,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    NumericError,
    ParameterError,
    UnsupportedProblemError,
)
from .harness import (
    RunConfig,
    TrialResult,
    build_problem,
    cli_main,
    compare_rr_sgd,
    emit_csv,
    escape_demo,
    main,
    parse_config_text,
    run_experiment,
    write_json,
)
from .optimizers import (
    EpochRecord,
    PrrState,
    ScheduleParams,
    compute_alpha_complexity,
    compute_alpha_sc,
    compute_complexity_constants,
    compute_prr_certificate,
    compute_prr_params,
    decayed_schedule,
    default_prr_epoch_cap,
    grad_mean_square_bound,
    rr_epoch,
    run_prr,
    run_rr,
    run_rr_sc,
    run_sgd,
    solve_T_sc,
    t_sc_certificate,
)
from .problems import (
    FiniteSumProblem,
    VarianceConstants,
    compute_variance_constants,
    make_logistic,
    make_mean_quadratic,
    make_quartic_saddle,
    make_tanh_mlp,
)
from .samplers import (
    RngStream,
    permutation_digest,
    sample_ball,
    sample_permutation,
    sample_permutations,
    sample_with_replacement,
)
from .stationarity import StationarityReport, classify, min_eigenvalue

__version__ = "0.1.0"
