"""Monte Carlo laboratory for excited random walks in cookie environments."""

from .cookie_env import (
    CookieStack,
    Environment,
    StackDistribution,
    delta_of,
    expected_first_cookie,
    flip,
    preset,
)
from .walk import (
    ExcursionRecord,
    WalkRecord,
    WalkState,
    crossing_counts,
    excursion_from_one,
    first_passage,
    inverse_occupation_path,
    negative_clock_value,
    occupation_series,
    phi_functional,
    psi_functional,
    return_time,
    step,
    walk_path,
)
from .branching import (
    BPRecord,
    CouplingViolation,
    coupled_excursion,
    failures_before_mth_success,
    hitting,
    lifetime_ratio_stats,
    run_bp,
    squeeze_audit,
    successes_before_mth_failure,
)
from .diffusion import (
    PBMState,
    SDEPath,
    path_integral,
    pbm_beta_zero_closed_form,
    running_max_process,
    simulate_drift_bessel,
    simulate_pbm,
    time_changed_pbm,
)
from .stats import (
    EmpiricalSample,
    TestReport,
    beta_cdf,
    ks_statistic,
    loglog_slope,
    ret1_consistency,
    tail_constant_sequence,
    two_sample_ks,
)
from .harness import ExperimentConfig, run_experiment, summarize

__version__ = "0.1.0"
