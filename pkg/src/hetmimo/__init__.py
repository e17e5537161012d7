"""MSE-based precoding and Monte Carlo evaluation for two-tier MIMO downlinks."""

from .channel import (
    Assignment,
    BetaTable,
    ChannelSet,
    ConfigurationError,
    CsiView,
    Geometry,
    LargeScaleMap,
    LinkSet,
    PowerConfig,
    SystemDims,
    Topology,
    apply_csi_error,
    assign_users,
    build_topology,
    canonical_assignment,
    compute_beta_table,
    effective_gains,
    large_scale_beta,
    large_scale_map,
    noise_variance,
    pathloss_db,
    sample_channels,
)
from .montecarlo import (
    SCHEMES,
    ScenarioConfig,
    SweepReport,
    SweepSpec,
    desk_scenario,
    estimate_ber,
    gen_qpsk,
    learning_curve,
    paper_scenario,
    realize_gains,
    run_sweep,
    simulate_link,
)
from .robust import (
    RobustContext,
    robust_eval_sum_mse,
    robust_separate_design,
    robust_update_precoders_constrained,
    robust_update_receivers,
    run_robust_rao,
    run_robust_uaon,
)
from .separate_mse import (
    BdInfeasibleError,
    bd_null_basis,
    build_lp,
    design_bs_precoders,
    design_sc_precoders,
    design_separate,
    reconstruct_precoder,
    separate_receiver,
    solve_lp,
    whiten_and_svd,
)
from .sum_mse import (
    AlgoConfig,
    DegenerateDesignError,
    IterTrace,
    MultiplierProblem,
    NumericalError,
    PrecoderSet,
    ReceiverSet,
    SumMseBreakdown,
    bisect_multiplier,
    build_multiplier_problem,
    chi,
    eval_sum_mse,
    init_transceivers,
    normalize_precoders,
    run_rao,
    run_uaon,
    update_precoders_constrained,
    update_precoders_unconstrained,
    update_receivers,
)

__version__ = "0.1.0"
