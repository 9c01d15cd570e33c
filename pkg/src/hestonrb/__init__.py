"""Certified reduced-basis solver for parametric parabolic problems in
space-time form, specialized to the Heston pricing PDE with payoff-valued
initial conditions."""

from .bundle import ModelBundle, ModelFormatError, load_model, save_model
from .config import ConfigError, RunConfig
from .fem2d import (
    AffineSpatialForms,
    HestonCoefficients,
    Rectangle,
    SpatialMesh,
    StabilityConstants,
    assemble_heston_affine,
    assemble_laplace,
    assemble_mass,
    assemble_operator,
    assemble_v_gramian,
    build_rect_mesh,
)
from .payoff import (
    BezierKnots,
    PayoffSpec,
    assemble_N_LM,
    bernstein_hat_eval,
    hat_matrix,
    payoff_coeffs,
    snap_knots,
)
from .pipeline import (
    OfflineResult,
    Problem,
    WindowNorm,
    assemble_problem,
    candidate_projection_errors,
    hat_candidates,
    query_payoff,
    run_scenarios,
    train_offline,
    true_error_nodal,
)
from .rbm import (
    EvolRB,
    InitRB,
    OnlineInitMap,
    ReducedSolution,
    TrainingSet,
    build_online_init,
    compute_supremizers,
    error_estimator,
    evolution_greedy,
    infsup_lower_bound,
    init_greedy,
    pod_init,
    rb_init_project,
    rb_online_solve,
)
from .timegrid import (
    CouplingMatrices,
    SpaceTimeOperator,
    TimeGrid,
    ZGramian,
    assemble_coupling,
    temporal_matrices,
)
from .truth import (
    ErrorBreakdown,
    RhsSpec,
    TruthSolver,
    TruthTrajectory,
    export_trajectory,
    project_initial,
)

__version__ = "0.1.0"
