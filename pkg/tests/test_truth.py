"""Crank-Nicolson truth solver: stepping, residuals, trajectory norms."""

import numpy as np
import pytest

from hestonrb.fem2d import (
    HestonCoefficients,
    Rectangle,
    assemble_heston_affine,
    assemble_mass,
    assemble_v_gramian,
    build_rect_mesh,
    evaluate_affine,
)
from hestonrb.fem2d import AffineSpatialForms
from hestonrb.timegrid import TimeGrid, assemble_coupling
from hestonrb.truth import (
    ErrorBreakdown,
    RhsSpec,
    TruthSolver,
    export_trajectory,
    project_initial,
)
from oracles import dense_spacetime_matrix, dense_xbar_sq

COEFFS = HestonCoefficients(kappa=0.8, theta=0.2, sigma=0.6, r=0.001)


def heston_solver(nx=5, ny=4, K=6, T=0.5, gramian=True):
    mesh = build_rect_mesh(Rectangle(-1.5, 2.0, 0.0, 1.0), nx, ny)
    mass = assemble_mass(mesh)
    forms = assemble_heston_affine(mesh, COEFFS)
    grid = TimeGrid(T=T, K=K)
    G = assemble_v_gramian(mesh) if gramian else None
    return mesh, TruthSolver(grid, mass, forms, gramian=G)


def test_scalar_decay_factor():
    """A 1x1 system reproduces the textbook trapezoidal amplification."""
    mesh = build_rect_mesh(Rectangle(0.0, 1.0, 0.0, 1.0), 2, 2)
    assert mesh.J == 1
    mass = assemble_mass(mesh)
    lam = 3.0
    forms = AffineSpatialForms(matrices=[lam * mass.tocsr()], theta_names=["one"])
    grid = TimeGrid(T=1.0, K=8)
    solver = TruthSolver(grid, mass, forms)
    traj = solver.cn_solve(0.0, np.array([1.0]))
    ratio = (1.0 - 0.5 * lam * grid.dt) / (1.0 + 0.5 * lam * grid.dt)
    expect = ratio ** np.arange(1, grid.K + 1)
    assert np.abs(traj.steps[:, 0] - expect).max() < 1e-14


def test_marching_solves_one_shot_system():
    """The stepped trajectory satisfies B(rho)^T w = breve f to round-off."""
    mesh, solver = heston_solver()
    rng = np.random.default_rng(5)
    u0 = rng.standard_normal(mesh.J)
    for rho in (-0.4, 0.25):
        traj = solver.cn_solve(rho, u0)
        B = dense_spacetime_matrix(
            solver.grid, solver.mass, evaluate_affine(solver.forms, rho)
        )
        f = solver.breve_rhs(rho, u0).ravel()
        res = f - B.T @ traj.steps.ravel()
        assert np.abs(res).max() <= 1e-11 * np.abs(f).max()
        w_ref = np.linalg.solve(B.T, f).reshape(solver.grid.K, mesh.J)
        assert np.abs(traj.steps - w_ref).max() <= 1e-9 * np.abs(w_ref).max()


def test_spacetime_residual_of_truth_is_zero():
    mesh, solver = heston_solver()
    rng = np.random.default_rng(9)
    u0 = rng.standard_normal(mesh.J)
    traj = solver.cn_solve(0.3, u0)
    res = solver.spacetime_residual(traj, 0.3)
    assert res.shape == (solver.grid.K, mesh.J)
    scale = solver.dual_norm_Z(solver.breve_rhs(0.3, u0))
    assert solver.dual_norm_Z(res) <= 1e-11 * scale


def test_solver_linearity():
    mesh, solver = heston_solver(gramian=False)
    rng = np.random.default_rng(13)
    u0, v0 = rng.standard_normal((2, mesh.J))
    a, b = 1.7, -0.4
    lhs = solver.cn_solve(0.1, a * u0 + b * v0).steps
    rhs = a * solver.cn_solve(0.1, u0).steps + b * solver.cn_solve(0.1, v0).steps
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


def test_affine_source_term():
    mesh, solver = heston_solver(nx=4, ny=3, K=4)
    rng = np.random.default_rng(17)
    K, J = solver.grid.K, mesh.J
    g1 = rng.standard_normal((K + 1, J))
    g2 = rng.standard_normal((K + 1, J))
    rhs = RhsSpec(nodal=[g1, g2], thetas=[lambda r: 1.0, lambda r: r])
    rho = 0.6
    assert np.allclose(rhs.sample(rho), g1 + rho * g2)
    traj = solver.cn_solve(rho, np.zeros(J), rhs=rhs)
    B = dense_spacetime_matrix(
        solver.grid, solver.mass, evaluate_affine(solver.forms, rho)
    )
    f = solver.breve_rhs(rho, np.zeros(J), rhs=rhs).ravel()
    # breve rhs carries dt * interval averages of the nodal source
    f_ref = 0.5 * solver.grid.dt * ((g1 + rho * g2)[:-1] + (g1 + rho * g2)[1:])
    assert np.allclose(f, f_ref.ravel(), atol=1e-14)
    assert np.abs(f - B.T @ traj.steps.ravel()).max() <= 1e-11 * np.abs(f).max()
    with pytest.raises(ValueError):
        RhsSpec(nodal=[g1], thetas=[])
    assert RhsSpec().sample(0.0) is None


def test_empty_source_equals_no_source():
    mesh, solver = heston_solver(nx=4, ny=3, K=3, gramian=False)
    u0 = np.ones(mesh.J)
    a = solver.cn_solve(0.2, u0)
    b = solver.cn_solve(0.2, u0, rhs=RhsSpec())
    assert np.array_equal(a.steps, b.steps)


def test_xbar_norm_dense_oracle():
    mesh, solver = heston_solver(nx=4, ny=4, K=5)
    rng = np.random.default_rng(21)
    nodal = rng.standard_normal((solver.grid.K + 1, mesh.J))
    ref = dense_xbar_sq(
        solver.grid, solver.mass, assemble_v_gramian(mesh), nodal
    )
    got = solver.xbar_norm(nodal) ** 2
    assert abs(got - ref) <= 1e-12 * ref
    # inner product polarization against two distinct trajectories
    other = rng.standard_normal((solver.grid.K + 1, mesh.J))
    pol = 0.25 * (
        solver.xbar_norm(nodal + other) ** 2 - solver.xbar_norm(nodal - other) ** 2
    )
    assert abs(solver.xbar_inner(nodal, other) - pol) <= 1e-10 * abs(pol)


def test_xbar_norm_constant_trajectory():
    """Constant-in-time data: norm^2 = T |c|_V^2 + |c|_H^2 exactly."""
    mesh, solver = heston_solver(nx=5, ny=4, K=7, T=0.8)
    rng = np.random.default_rng(25)
    c = rng.standard_normal(mesh.J)
    nodal = np.tile(c, (solver.grid.K + 1, 1))
    G = assemble_v_gramian(mesh)
    ref = solver.grid.T * (c @ (G @ c)) + c @ (solver.mass @ c)
    assert abs(solver.xbar_norm(nodal) ** 2 - ref) <= 1e-12 * ref


def test_xbar_requires_gramian():
    mesh, solver = heston_solver(gramian=False)
    with pytest.raises(ValueError, match="V-Gramian"):
        solver.xbar_norm(np.zeros((solver.grid.K + 1, mesh.J)))


def test_project_initial_identity_frame():
    rng = np.random.default_rng(29)
    L = 4
    B = rng.standard_normal((L, L))
    M_init = B @ B.T + L * np.eye(L)  # SPD Gramian doubling as N_LM
    mu0 = rng.standard_normal(L)
    u0 = project_initial(mu0, M_init, M_init)
    assert np.abs(u0 - mu0).max() < 1e-10
    with pytest.raises(ValueError, match="payoff coefficients"):
        project_initial(mu0[:2], M_init, M_init)


def test_project_initial_h_orthogonality():
    """The projection residual is H-orthogonal to the initial space."""
    mesh, solver = heston_solver(nx=6, ny=5, gramian=False)
    rng = np.random.default_rng(31)
    Md = solver.mass.toarray()
    P = rng.standard_normal((3, mesh.J))  # initial space frame
    Bp = rng.standard_normal((5, mesh.J))  # payoff frame
    N_LM = Bp @ Md @ P.T
    M_init = P @ Md @ P.T
    mu0 = rng.standard_normal(5)
    u0 = project_initial(mu0, N_LM, M_init)
    target = Bp.T @ mu0
    resid = target - P.T @ u0
    assert np.abs(P @ Md @ resid).max() < 1e-9 * np.abs(P @ Md @ target).max()


def test_trajectory_nodal_through_coupling():
    mesh, solver = heston_solver(nx=4, ny=4, K=3, gramian=False)
    rng = np.random.default_rng(33)
    P = rng.standard_normal((2, mesh.J))
    cpl = assemble_coupling(solver.grid, solver.mass, solver.forms, init_basis=P)
    red = TruthSolver(solver.grid, solver.mass, solver.forms, coupling=cpl)
    u0 = np.array([0.3, -1.1])
    traj = red.cn_solve(0.0, u0)
    nodal = traj.nodal(cpl)
    assert nodal.shape == (solver.grid.K + 1, mesh.J)
    assert np.allclose(nodal[0], P.T @ u0, atol=1e-14)
    with pytest.raises(ValueError, match="coupling"):
        traj.nodal()
    with pytest.raises(ValueError, match="length"):
        red.cn_solve(0.0, np.zeros(mesh.J))


def test_reduced_initial_space_consistency():
    """Stepping from a coupled H^M datum equals stepping from its V^J image."""
    mesh, solver = heston_solver(nx=5, ny=4, K=4, gramian=False)
    rng = np.random.default_rng(37)
    P = rng.standard_normal((3, mesh.J))
    cpl = assemble_coupling(solver.grid, solver.mass, solver.forms, init_basis=P)
    red = TruthSolver(solver.grid, solver.mass, solver.forms, coupling=cpl)
    u0 = rng.standard_normal(3)
    a = red.cn_solve(-0.3, u0).steps
    b = solver.cn_solve(-0.3, P.T @ u0).steps
    assert np.abs(a - b).max() <= 1e-11 * np.abs(b).max()


def test_determinism():
    mesh, solver = heston_solver(gramian=False)
    u0 = np.linspace(-1.0, 1.0, mesh.J)
    a = solver.cn_solve(0.15, u0).steps
    b = solver.cn_solve(0.15, u0).steps
    assert np.array_equal(a, b)


def test_error_breakdown_arithmetic():
    e = ErrorBreakdown(R_init=0.2, R_evol=0.3, beta_LB=0.005)
    assert abs(e.delta - 100.0) < 1e-12
    assert abs(e.delta_evol - 60.0) < 1e-12


def test_export_trajectory(tmp_path):
    mesh, solver = heston_solver(nx=4, ny=3, K=3, gramian=False)
    traj = solver.cn_solve(0.4, np.ones(mesh.J))
    path = tmp_path / "traj.txt"
    export_trajectory(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# time nodes {solver.grid.K + 1}, dofs {mesh.J}"
    data = np.loadtxt(path)
    assert np.array_equal(data, traj.nodal())
