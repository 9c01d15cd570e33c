"""Full-order solver: Crank-Nicolson time stepping in space-time residual form.

The space-time Petrov-Galerkin system ``B(rho)^T w = f`` with piecewise
linear trial / piecewise constant test functions in time is algebraically
equivalent to the trapezoidal (Crank-Nicolson) scheme

    (M/dt + A(rho)^T/2) u^l = (M/dt - A(rho)^T/2) u^{l-1} + g^{l-1/2},

marched from the H-orthogonal projection u^0 of the initial datum onto the
initial space H^M.  When H^M differs from V^J the first step instead pulls
u^0 through the coupling matrices.  The solver below implements the
stepping form (one factorization per parameter, reused across steps and
queries) and exposes the residual of the equivalent one-shot system, which
is what the error certification measures.

Norms: trajectories are measured in the norm combining the interval
averages in V, the time derivative in V', and the terminal value in H; all
three pieces are exact for the piecewise linear-in-time reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .timegrid import CouplingMatrices, SpaceTimeOperator, TimeGrid, ZGramian

__all__ = [
    "RhsSpec",
    "TruthTrajectory",
    "ErrorBreakdown",
    "TruthSolver",
    "project_initial",
    "export_trajectory",
]


@dataclass
class RhsSpec:
    """Affine source term ``g(t; rho) = sum_q theta_q(rho) g_q(t)``.

    Each ``g_q`` is an array of shape (K+1, J): the V' coefficients of the
    source sampled at the time nodes.  Interval midpoint values are taken as
    trapezoidal averages of the nodal samples, consistent with the
    quadrature the stepping scheme itself commits to.
    """

    nodal: list = field(default_factory=list)
    thetas: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.nodal) != len(self.thetas):
            raise ValueError("one theta callable per source term required")

    @property
    def n_terms(self) -> int:
        return len(self.nodal)

    def sample(self, rho: float):
        """Nodal samples of g at a parameter, or None for a zero source."""
        if not self.nodal:
            return None
        acc = None
        for g, th in zip(self.nodal, self.thetas):
            term = float(th(rho)) * np.asarray(g)
            acc = term if acc is None else acc + term
        return acc


@dataclass
class TruthTrajectory:
    """Solution of one full-order evolution.

    u0 lives in the initial space H^M (length M), the K step vectors in the
    Dirichlet space V^J.  ``nodal()`` maps everything to V^J coefficients,
    node 0 included.
    """

    u0: np.ndarray
    steps: np.ndarray
    grid: TimeGrid
    rho: float = float("nan")
    label: str = ""

    def nodal(self, coupling: CouplingMatrices | None = None) -> np.ndarray:
        u0 = self.u0
        J = self.steps.shape[1]
        if u0.size != J:
            if coupling is None:
                raise ValueError("need coupling matrices to express u0 in V^J")
            u0 = np.asarray(coupling.P.T @ u0).ravel()
        return np.vstack([u0[None, :], self.steps])


@dataclass
class ErrorBreakdown:
    """A posteriori error components of one reduced query."""

    R_init: float
    R_evol: float
    beta_LB: float

    @property
    def delta(self) -> float:
        """Certified bound on the space-time error."""
        return (self.R_init + self.R_evol) / self.beta_LB

    @property
    def delta_evol(self) -> float:
        """Evolution-only bound, the greedy training quantity."""
        return self.R_evol / self.beta_LB


def project_initial(mu0_coeffs, N_LM, M_init):
    """H-orthogonal projection of a payoff combination onto H^M.

    Solves ``M_init^T u0 = N_LM^T mu0`` for the coefficient vector u0 of the
    projection; ``mu0_coeffs`` are the payoff-frame coefficients paired with
    the rows of the rectangular Gramian N_LM.
    """
    mu0 = np.asarray(mu0_coeffs, dtype=float)
    if mu0.ndim != 1 or mu0.size != N_LM.shape[0]:
        raise ValueError(
            f"expected {N_LM.shape[0]} payoff coefficients, got shape {mu0.shape}"
        )
    rhs = np.asarray(N_LM.T @ mu0).ravel()
    if sps.issparse(M_init):
        return spla.spsolve(M_init.T.tocsc(), rhs)
    return np.linalg.solve(np.asarray(M_init).T, rhs)


class TruthSolver:
    """Crank-Nicolson marching plus residual and norm evaluations.

    Parameters
    ----------
    grid : TimeGrid
    mass : sparse J x J mass matrix of V^J
    forms : affine family of the spatial operator
    gramian : sparse J x J V-inner-product Gramian
    coupling : CouplingMatrices, or None for H^M = V^J
    """

    def __init__(self, grid, mass, forms, gramian=None, coupling=None):
        from .timegrid import assemble_coupling

        self.grid = grid
        self.mass = mass.tocsr()
        self.forms = forms
        self.op = SpaceTimeOperator(grid, self.mass, forms)
        self.coupling = (
            coupling if coupling is not None else assemble_coupling(grid, self.mass, forms)
        )
        self.gramian = gramian.tocsr() if gramian is not None else None
        self._zgram = ZGramian(grid, self.gramian) if gramian is not None else None
        self._gram_solve = (
            spla.factorized(self.gramian.tocsc()) if gramian is not None else None
        )
        self._step_lu = {}

    # -- stepping ----------------------------------------------------------

    def _factor(self, rho: float):
        lu = self._step_lu.get(rho)
        if lu is None:
            A = self.forms.evaluate(rho)
            lhs = (self.mass / self.grid.dt + 0.5 * A.T).tocsc()
            lu = spla.splu(lhs)
            self._step_lu[rho] = lu
        return lu

    def breve_rhs(self, rho: float, u0, rhs: RhsSpec | None = None) -> np.ndarray:
        """Right-hand side of the one-shot system ``B(rho)^T w = f``.

        Block l carries ``dt * g^{l-1/2}``; block 1 additionally receives
        ``-C_is(rho)^T u0`` from the initial datum.
        """
        K, J = self.grid.K, self.op.J
        out = np.zeros((K, J))
        if rhs is not None:
            g = rhs.sample(rho)
            if g is not None:
                out += 0.5 * self.grid.dt * (g[:-1] + g[1:])
        u0 = np.asarray(u0, dtype=float)
        out[0] -= np.asarray(self.coupling.C_is(rho).T @ u0).ravel()
        return out

    def cn_solve(self, rho: float, u0, rhs: RhsSpec | None = None) -> TruthTrajectory:
        """March the trapezoidal scheme from the initial coefficients u0.

        u0 has length M (H^M frame).  Steps l >= 2 use the standard
        two-level update; step 1 pulls u0 through the coupling matrices,
        which reduces to the same update when H^M = V^J.
        """
        K, J = self.grid.K, self.op.J
        dt = self.grid.dt
        u0 = np.asarray(u0, dtype=float)
        if u0.size != self.coupling.M:
            raise ValueError(f"initial vector must have length {self.coupling.M}")
        lu = self._factor(rho)
        g = rhs.sample(rho) if rhs is not None else None
        A_T = self.forms.evaluate(rho).T.tocsr()

        steps = np.empty((K, J))
        # first step through the coupling (handles H^M != V^J)
        b = -np.asarray(self.coupling.C_is(rho).T @ u0).ravel() / dt
        if g is not None:
            b = b + 0.5 * (g[0] + g[1])
        steps[0] = lu.solve(b)
        for l in range(1, K):
            b = (self.mass @ steps[l - 1]) / dt - 0.5 * (A_T @ steps[l - 1])
            if g is not None:
                b = b + 0.5 * (g[l] + g[l + 1])
            steps[l] = lu.solve(b)
        return TruthTrajectory(u0=u0, steps=steps, grid=self.grid, rho=rho)

    # -- residuals and norms ----------------------------------------------

    def spacetime_residual(
        self, traj: TruthTrajectory, rho: float, rhs: RhsSpec | None = None
    ) -> np.ndarray:
        """Residual ``f - B(rho)^T w`` of the one-shot system, shape (K, J)."""
        f = self.breve_rhs(rho, traj.u0, rhs)
        return f - self.op.apply_transpose(rho, traj.steps, flat=False)

    def dual_norm_Z(self, residual) -> float:
        """Norm of a test-space functional, blockwise G^{-1} weighted."""
        if self._zgram is None:
            raise ValueError("solver was built without a V-Gramian")
        return self._zgram.dual_norm(residual)

    @property
    def zgram(self) -> ZGramian:
        if self._zgram is None:
            raise ValueError("solver was built without a V-Gramian")
        return self._zgram

    def xbar_inner(self, nodal_u, nodal_v) -> float:
        """Inner product behind the trajectory norm.

        Arguments are (K+1, J) nodal coefficient arrays.  Sum of interval
        averages in V, discrete time derivative in V', terminal value in H;
        exact for piecewise linear reconstructions in time.
        """
        if self._gram_solve is None:
            raise ValueError("solver was built without a V-Gramian")
        U = np.asarray(nodal_u, dtype=float)
        V = np.asarray(nodal_v, dtype=float)
        dt = self.grid.dt
        Ubar = 0.5 * (U[:-1] + U[1:])
        Vbar = 0.5 * (V[:-1] + V[1:])
        avg = dt * np.sum(Ubar * (self.gramian @ Vbar.T).T)
        MdU = (self.mass @ np.diff(U, axis=0).T).T
        MdV = (self.mass @ np.diff(V, axis=0).T).T
        der = np.sum(MdU * self._gram_solve(MdV.T).T) / dt
        fin = float(U[-1] @ (self.mass @ V[-1]))
        return float(avg + der + fin)

    def xbar_norm(self, nodal) -> float:
        """Trajectory norm of a (K+1, J) nodal coefficient array."""
        return float(np.sqrt(max(self.xbar_inner(nodal, nodal), 0.0)))


def export_trajectory(traj: TruthTrajectory, path, coupling=None):
    """Plain-text dump: one line per time node, dof values in order."""
    nodal = traj.nodal(coupling)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# time nodes {nodal.shape[0]}, dofs {nodal.shape[1]}\n")
        for row in nodal:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")
