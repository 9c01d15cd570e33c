"""End-to-end drivers tying mesh, truth solver, and reduction together.

Everything the command line does goes through the functions here, so that
scripted runs and tests exercise exactly the shipped pipeline.  The split
is: ``assemble_problem`` builds all parameter-independent discrete objects
from a configuration, ``train_offline`` runs the two-stage reduction, and
the small query helpers evaluate trained models with or without a truth
comparison.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .config import RunConfig
from .fem2d import (
    HestonCoefficients,
    Rectangle,
    SpatialMesh,
    assemble_heston_affine,
    assemble_mass,
    assemble_v_gramian,
    build_rect_mesh,
)
from .payoff import (
    BezierKnots,
    PayoffSpec,
    assemble_N_LM,
    payoff_coeffs,
    snap_knots,
)
from .rbm import (
    EvolRB,
    InitRB,
    OnlineInitMap,
    TrainingSet,
    build_online_init,
    evolution_greedy,
    init_greedy,
    pod_init,
    rb_init_project,
    rb_online_solve,
)
from .timegrid import TimeGrid, assemble_coupling
from .truth import TruthSolver, project_initial

__all__ = [
    "Problem",
    "OfflineResult",
    "ScenarioRow",
    "WindowNorm",
    "assemble_problem",
    "hat_candidates",
    "candidate_projection_errors",
    "slice_pod",
    "train_offline",
    "run_scenarios",
    "query_payoff",
    "true_error_nodal",
]


@dataclass
class Problem:
    """All parameter-independent discrete objects for one configuration."""

    config: RunConfig
    knots: BezierKnots
    mesh: SpatialMesh
    forms: object
    mass: object
    gramian: object
    grid: TimeGrid
    coupling: object
    solver: TruthSolver
    N_LM: np.ndarray


def assemble_problem(config: RunConfig) -> Problem:
    """Build mesh, affine forms, truth solver, and payoff Gramian."""
    config.validate()
    knots = BezierKnots.from_strikes(config.knot_strikes())
    y_min, y_max = config.y_bounds(knots)
    rect = Rectangle(y_min, y_max, config.get("mesh", "nu_min"), config.get("mesh", "nu_max"))
    mesh = build_rect_mesh(rect, config.get("mesh", "nx"), config.get("mesh", "ny"))
    if config.get("knots", "quadrature") == "snap":
        knots = snap_knots(knots, mesh)
    coeffs = HestonCoefficients(
        kappa=config.get("heston", "kappa"),
        theta=config.get("heston", "theta"),
        sigma=config.get("heston", "sigma"),
        r=config.get("heston", "r"),
    )
    forms = assemble_heston_affine(mesh, coeffs)
    mass = assemble_mass(mesh)
    gramian = assemble_v_gramian(mesh)
    grid = TimeGrid(config.get("time", "t_final"), config.get("time", "k_steps"))
    coupling = assemble_coupling(grid, mass, forms)
    solver = TruthSolver(grid, mass, forms, gramian=gramian, coupling=coupling)
    N_LM = assemble_N_LM(knots, mesh)
    return Problem(
        config=config, knots=knots, mesh=mesh, forms=forms, mass=mass,
        gramian=gramian, grid=grid, coupling=coupling, solver=solver, N_LM=N_LM,
    )


def hat_candidates(problem: Problem) -> np.ndarray:
    """Discrete projections of all payoff hats: the reduction candidates."""
    L = problem.knots.L
    return np.array(
        [project_initial(np.eye(L)[l], problem.N_LM, problem.coupling.M_init) for l in range(L)]
    )


def candidate_projection_errors(candidates, init_rb: InitRB, M_init) -> np.ndarray:
    """Relative H-projection error of each candidate onto the reduced space.

    The mean of these is the headline quality number of the initial-value
    reduction; it complements the eigenvalue-tail statistic stored on the
    basis itself.
    """
    out = np.empty(len(candidates))
    for i, c in enumerate(candidates):
        _, R = rb_init_project(c, init_rb, M_init)
        nrm = float(np.sqrt(max(c @ (M_init @ c), 0.0)))
        out[i] = R / nrm if nrm > 0 else 0.0
    return out


def slice_pod(full: InitRB, n: int) -> InitRB:
    """Top-``n`` modes of a POD basis as a reduced space of their own."""
    n = min(n, full.N0)
    lam = full.eigenvalues
    rel = float(np.sqrt(max(lam[n:].sum(), 0.0) / lam.sum())) if lam is not None else 0.0
    return InitRB(
        basis=full.basis[:n], provenance=full.provenance,
        eigenvalues=lam, rel_truncation=rel,
    )


@dataclass
class OfflineResult:
    """Trained model pieces plus the run record."""

    problem: Problem
    init_rb: InitRB
    evol: EvolRB
    online_init: OnlineInitMap
    candidates: np.ndarray
    cand_errors: np.ndarray
    beta_LB: float
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def rho_trained(self) -> tuple:
        cfg = self.problem.config
        return (cfg.get("training", "rho_min"), cfg.get("training", "rho_max"))


def train_offline(config: RunConfig, problem: Problem | None = None) -> OfflineResult:
    """Two-stage offline phase: initial-value reduction, then evolution greedy.

    The initial stage reduces the projected payoff hats (POD by default,
    greedy on request); the evolution stage trains on the product of the
    leading initial modes with the correlation grid.
    """
    timings = {}
    t0 = time.time()
    if problem is None:
        problem = assemble_problem(config)
    timings["assemble"] = time.time() - t0

    caught: list = []
    t0 = time.time()
    cands = hat_candidates(problem)
    M_init = problem.coupling.M_init
    n_modes = config.get("training", "init_modes")
    with warnings.catch_warnings(record=True) as wlog:
        warnings.simplefilter("always")
        if config.get("training", "init_method") == "greedy":
            full = init_greedy(
                cands, M_init, tol0=config.get("training", "init_tol"), n_max=n_modes
            )
            init_rb = full
        else:
            full = pod_init(cands, M_init, n_keep=max(n_modes, cands.shape[0]))
            init_rb = slice_pod(full, n_modes)
    caught.extend(str(w.message) for w in wlog)
    cand_errors = candidate_projection_errors(cands, init_rb, M_init)
    timings["init_stage"] = time.time() - t0

    t0 = time.time()
    n_train = config.get("training", "train_candidates")
    train_cands = full.basis[: min(n_train, full.N0)]
    train = TrainingSet(
        init_candidates=train_cands,
        rho_values=np.linspace(
            config.get("training", "rho_min"),
            config.get("training", "rho_max"),
            config.get("training", "rho_count"),
        ),
    )
    beta_LB = config.get("estimator", "beta_lb")
    with warnings.catch_warnings(record=True) as wlog:
        warnings.simplefilter("always")
        evol = evolution_greedy(
            problem.solver,
            init_rb,
            train,
            tol1=config.get("training", "tol_evol"),
            n_max=config.get("training", "n1_max"),
            beta_LB=beta_LB,
            selector=config.get("training", "selector"),
        )
    caught.extend(str(w.message) for w in wlog)
    timings["evolution_stage"] = time.time() - t0

    t0 = time.time()
    online_init = build_online_init(init_rb, problem.N_LM, M_init)
    timings["online_init"] = time.time() - t0

    return OfflineResult(
        problem=problem, init_rb=init_rb, evol=evol, online_init=online_init,
        candidates=cands, cand_errors=cand_errors, beta_LB=beta_LB,
        timings=timings, warnings=caught,
    )


# ---------------------------------------------------------------------------
# restricted-window error
# ---------------------------------------------------------------------------

class WindowNorm:
    """Discrete space-time norm restricted to a rectangle in (S, nu).

    Works on the principal submatrices of the mass and energy Gramians for
    the interior degrees of freedom inside the window, i.e. measures the
    trajectory as a function on the window only.
    """

    def __init__(self, mesh: SpatialMesh, gramian, mass, grid: TimeGrid, window):
        s_min, s_max, nu_min, nu_max = window
        coords = mesh.interior_coords()
        s_vals = np.exp(coords[:, 0])
        mask = (
            (s_vals >= s_min) & (s_vals <= s_max)
            & (coords[:, 1] >= nu_min) & (coords[:, 1] <= nu_max)
        )
        self.index = np.where(mask)[0]
        if self.index.size == 0:
            raise ValueError("restriction window contains no interior mesh vertices")
        ix = np.ix_(self.index, self.index)
        self.M_w = mass.tocsr()[ix].tocsc()
        self.G_w = gramian.tocsr()[ix].tocsc()
        self._solve = spla.factorized(self.G_w)
        self.dt = grid.dt

    def norm(self, nodal: np.ndarray) -> float:
        """Windowed trajectory norm of a (K+1, J) nodal array."""
        sub = np.asarray(nodal)[:, self.index]
        ubar = 0.5 * (sub[:-1] + sub[1:])
        val = self.dt * float(np.sum(ubar * (self.G_w @ ubar.T).T))
        du = (self.M_w @ (sub[1:] - sub[:-1]).T).T
        val += float(np.sum(du * self._solve(du.T).T)) / self.dt
        val += float(sub[-1] @ (self.M_w @ sub[-1]))
        return float(np.sqrt(max(val, 0.0)))


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def payoff_mu0(problem: Problem, config: RunConfig | None = None):
    """Payoff hat coefficients and their discrete projection for a query."""
    cfg = config if config is not None else problem.config
    spec = PayoffSpec(
        kind=cfg.get("payoff", "kind"),
        strike=cfg.get("payoff", "strike"),
        values=cfg.get("payoff", "values") or None,
    )
    beta = payoff_coeffs(spec, problem.knots)
    mu0 = project_initial(beta, problem.N_LM, problem.coupling.M_init)
    return beta, mu0


def query_payoff(result: OfflineResult, rho: float, beta=None):
    """One reduced query in the payoff frame; returns the online solution."""
    if beta is None:
        beta, _ = payoff_mu0(result.problem)
    alpha0, R_init, norm_mu0 = result.online_init.project(beta)
    sol = rb_online_solve(alpha0, rho, result.evol, R_init=R_init, norm_mu0=norm_mu0)
    lo, hi = result.rho_trained
    sol.out_of_range = not (lo <= rho <= hi)
    return sol


def reduced_nodal(result: OfflineResult, sol) -> np.ndarray:
    """Nodal (K+1, J) trajectory of a reduced solution, initial value first."""
    u0 = sol.alpha0 @ result.init_rb.basis
    steps = result.evol.reconstruct_steps(sol.coeffs)
    if steps is None:
        steps = np.zeros((result.problem.grid.K, u0.size))
    P = result.problem.coupling.P
    row0 = np.asarray(P.T @ u0).ravel()
    return np.vstack([row0[None, :], steps])


def true_error_nodal(result: OfflineResult, rho: float, beta=None) -> np.ndarray:
    """Nodal difference between a truth solve and the reduced solution."""
    if beta is None:
        beta, mu0 = payoff_mu0(result.problem)
    else:
        mu0 = project_initial(beta, result.problem.N_LM, result.problem.coupling.M_init)
    truth = result.problem.solver.cn_solve(rho, mu0)
    sol = query_payoff(result, rho, beta=beta)
    return truth.nodal(result.problem.coupling) - reduced_nodal(result, sol)


# ---------------------------------------------------------------------------
# training-set comparison scenarios
# ---------------------------------------------------------------------------

@dataclass
class ScenarioRow:
    """One row of the training-set comparison table."""

    scenario: int
    span_requested: int
    span_used: int
    train_requested: int
    train_used: int
    N1: int
    status: str
    err_window: float
    err_full: float
    R_init: float


def run_scenarios(config: RunConfig, problem: Problem | None = None,
                  verbose: bool = False) -> list:
    """Compare reduced spaces built from different training sets.

    Four runs over (initial modes kept, initial modes trained on) in
    {5, 7} x {5, 7}; all draw their modes from one POD of the full hat
    candidate set, so run 2 differs from run 1 only by training candidates
    that are H-orthogonal to the kept space.  Each run is scored by the
    true error of the configured payoff query on the restricted window.
    """
    if problem is None:
        config.validate()
        problem = assemble_problem(config)
    cands = hat_candidates(problem)
    M_init = problem.coupling.M_init
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        full = pod_init(cands, M_init, n_keep=cands.shape[0])
    rho_grid = np.linspace(
        config.get("training", "rho_min"),
        config.get("training", "rho_max"),
        config.get("training", "rho_count"),
    )
    beta, mu0 = payoff_mu0(problem)
    rho_query = config.get("query", "rho")
    truth = problem.solver.cn_solve(rho_query, mu0)
    truth_nodal = truth.nodal(problem.coupling)
    wnorm = WindowNorm(
        problem.mesh, problem.gramian, problem.mass, problem.grid,
        problem.config.get("output", "window"),
    )

    rows = []
    for i, (nspan, ntrain) in enumerate([(5, 5), (5, 7), (7, 5), (7, 7)], start=1):
        irb = slice_pod(full, nspan)
        train = TrainingSet(
            init_candidates=full.basis[: min(ntrain, full.N0)], rho_values=rho_grid
        )
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            evol = evolution_greedy(
                problem.solver, irb, train,
                tol1=config.get("training", "tol_evol"),
                n_max=config.get("training", "n1_max"),
                beta_LB=config.get("estimator", "beta_lb"),
            )
        alpha0, R_init = rb_init_project(mu0, irb, M_init)
        coeffs, _ = evol.solve(rho_query, alpha0)
        steps = evol.reconstruct_steps(coeffs)
        if steps is None:
            steps = np.zeros((problem.grid.K, mu0.size))
        row0 = np.asarray(problem.coupling.P.T @ (alpha0 @ irb.basis)).ravel()
        diff = truth_nodal - np.vstack([row0[None, :], steps])
        row = ScenarioRow(
            scenario=i, span_requested=nspan, span_used=irb.N0,
            train_requested=ntrain, train_used=train.init_candidates.shape[0],
            N1=evol.N1, status=evol.status,
            err_window=wnorm.norm(diff), err_full=problem.solver.xbar_norm(diff),
            R_init=R_init,
        )
        rows.append(row)
        if verbose:
            print(
                f"  scenario {i}: N0={row.span_used} trained on {row.train_used} "
                f"modes -> N1={row.N1} ({row.status}), window error {row.err_window:.4e}"
            )
    return rows
