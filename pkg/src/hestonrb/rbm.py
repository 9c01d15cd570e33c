"""Reduced basis construction and certified online evaluation.

Two nested reductions:

* an initial-value basis ``h^1..h^N0`` in the spatial space H^M, built by
  POD or greedy selection from projected payoff candidates, and
* an evolution basis ``w^1..w^N1`` of space-time trajectories with zero
  initial value, grown by a greedy loop steered by a residual-based error
  estimator (or by the true trajectory error in the strong variant).

The online system is a least-squares Petrov-Galerkin solve: the test space
is spanned by parameter-dependent supremizers ``s^n(rho) = sum_q theta_q
z_q^n`` with Riesz pieces ``z_q^n = Z^{-1} B_q^T w^n`` precomputed offline.
The normal equations then involve only small Gram blocks

    G_yy[(q,n),(q',m)] = (B_q^T w^n)^T Z^{-1} (B_q'^T w^m)
    G_fy[p,(q,n)]      = F_p^T Z^{-1} (B_q^T w^n)
    G_ff[p,p']         = F_p^T Z^{-1} F_p'

where the F_p are the parameter-independent right-hand-side pieces (one per
affine operator term and initial basis function, plus any source terms).
Residual dual norms, and hence the error estimator, come from the same
blocks, so a trained model answers queries at a cost independent of the
mesh size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fem2d import StabilityConstants, theta_value
from .timegrid import ZGramian
from .truth import ErrorBreakdown, TruthSolver

__all__ = [
    "InitRB",
    "pod_init",
    "init_greedy",
    "rb_init_project",
    "OnlineInitMap",
    "build_online_init",
    "TrainingSet",
    "GreedyEntry",
    "EvolRB",
    "ReducedSolution",
    "compute_supremizers",
    "evolution_greedy",
    "rb_online_solve",
    "error_estimator",
    "infsup_lower_bound",
]

#: relative eigenvalue cutoff treated as numerical rank zero in the POD
RANK_TOL = 1e-13

#: guard for round-off negative squared residuals
NEG_TOL = 1e-12


# ---------------------------------------------------------------------------
# initial-value reduction
# ---------------------------------------------------------------------------

@dataclass
class InitRB:
    """Reduced initial-value space: H-orthonormal rows spanning S^0_N0."""

    basis: np.ndarray           # (N0, M)
    provenance: str             # "pod" or "greedy"
    eigenvalues: np.ndarray | None = None   # full POD spectrum, descending
    rel_truncation: float = 0.0  # sqrt(tail energy / total energy)
    select_log: list = field(default_factory=list)  # greedy picks (index, R)

    @property
    def N0(self) -> int:
        return self.basis.shape[0]


def _h_inner(M_init, u, v) -> float:
    return float(u @ (M_init @ v))


def pod_init(candidates, M_init, n_keep=None, energy_tol=None) -> InitRB:
    """Proper orthogonal decomposition of projected initial candidates.

    ``candidates`` holds the H^M coefficient rows of the projected payoff
    functions; the POD is the eigendecomposition of their H-Gramian.  Keep
    either ``n_keep`` modes (capped at the numerical rank, with a warning)
    or enough modes to push the relative truncation error below
    ``energy_tol``.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    gram = C @ (M_init @ C.T)
    gram = 0.5 * (gram + gram.T)
    lam, V = np.linalg.eigh(gram)
    lam, V = lam[::-1], V[:, ::-1]
    lam = np.maximum(lam, 0.0)
    total = lam.sum()
    if total <= 0:
        raise ValueError("candidate set is identically zero")
    rank = int(np.sum(lam > RANK_TOL * lam[0]))

    if n_keep is None and energy_tol is None:
        n0 = rank
    elif n_keep is not None:
        n0 = int(n_keep)
        if n0 < 1:
            raise ValueError("n_keep must be at least 1")
        if n0 > rank:
            warnings.warn(
                f"requested {n0} POD modes but numerical rank is {rank}; keeping {rank}"
            )
            n0 = rank
    else:
        tails = np.sqrt(np.maximum(total - np.cumsum(lam), 0.0) / total)
        n0 = int(np.searchsorted(-tails, -float(energy_tol)) + 1)
        n0 = min(max(n0, 1), rank)

    basis = (V[:, :n0] / np.sqrt(lam[:n0])).T @ C
    # eigenvector round-off leaves an O(eps * lam[0]/lam[n0-1]) defect in
    # (h_i, h_j)_H, which can breach the 1e-12 projection guard downstream;
    # two MGS passes in H restore orthonormality to machine precision and
    # leave every leading span (hence every slice) unchanged
    for _ in range(2):
        for i in range(n0):
            for j in range(i):
                basis[i] -= _h_inner(M_init, basis[i], basis[j]) * basis[j]
            nrm = float(np.sqrt(max(_h_inner(M_init, basis[i], basis[i]), 0.0)))
            if nrm > 0.0:
                basis[i] /= nrm
    rel = float(np.sqrt(max(lam[n0:].sum(), 0.0) / total))
    return InitRB(basis=basis, provenance="pod", eigenvalues=lam, rel_truncation=rel)


def init_greedy(candidates, M_init, tol0: float, n_max: int) -> InitRB:
    """Greedy alternative to the POD: pick the worst-approximated candidate,
    H-orthonormalize, repeat until the largest projection error drops below
    ``tol0`` (or the basis saturates)."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    nc = C.shape[0]
    norms2 = np.array([_h_inner(M_init, c, c) for c in C])
    scale = float(np.sqrt(norms2.max()))
    if scale == 0.0:
        raise ValueError("candidate set is identically zero")

    basis = []
    coeffs = np.zeros((nc, 0))
    log = []
    while len(basis) < min(n_max, nc):
        resid2 = norms2 - (coeffs**2).sum(axis=1)
        R = np.sqrt(np.maximum(resid2, 0.0))
        pick = int(np.argmax(R))
        if len(basis) > 0 and R[pick] < tol0:
            break
        if R[pick] <= RANK_TOL * scale:
            break
        h = C[pick] - coeffs[pick] @ np.asarray(basis)
        h = h / np.sqrt(max(_h_inner(M_init, h, h), 0.0))
        # re-orthogonalize once for stability
        proj = np.array([_h_inner(M_init, h, b) for b in basis])
        if proj.size:
            h = h - proj @ np.asarray(basis)
            h = h / np.sqrt(_h_inner(M_init, h, h))
        basis.append(h)
        log.append((pick, float(R[pick])))
        new_col = np.array([_h_inner(M_init, c, h) for c in C])
        coeffs = np.column_stack([coeffs, new_col])
    return InitRB(basis=np.asarray(basis), provenance="greedy", select_log=log)


def rb_init_project(mu0, init_rb: InitRB, M_init):
    """Project a spatial vector onto the initial RB space.

    Returns the coefficient vector alpha0 and the H-norm projection error;
    round-off negatives of the squared error are clamped within the 1e-12
    guard, anything worse raises.
    """
    mu0 = np.asarray(mu0, dtype=float)
    Mv = M_init @ mu0
    alpha0 = init_rb.basis @ Mv
    norm2 = float(mu0 @ Mv)
    r2 = norm2 - float(alpha0 @ alpha0)
    floor = -NEG_TOL * max(1.0, norm2)
    if r2 < floor:
        raise ArithmeticError(f"projection residual {r2} below round-off guard {floor}")
    return alpha0, float(np.sqrt(max(r2, 0.0)))


@dataclass
class OnlineInitMap:
    """Mesh-free initial projection for payoff-frame queries.

    Theta[l, i] = (B_l, h^i)_H and G_B[l, l'] = (P_H B_l, P_H B_l')_H, the
    Gramian of the projected payoff hats; together they give coefficients
    and projection error of any hat combination at O(L N0) cost.
    """

    Theta: np.ndarray
    G_B: np.ndarray

    def project(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.Theta.shape[0],):
            raise ValueError(f"expected {self.Theta.shape[0]} payoff coefficients")
        alpha0 = self.Theta.T @ beta
        norm2 = float(beta @ (self.G_B @ beta))
        r2 = norm2 - float(alpha0 @ alpha0)
        floor = -NEG_TOL * max(1.0, norm2)
        if r2 < floor:
            raise ArithmeticError(f"projection residual {r2} below round-off guard")
        return alpha0, float(np.sqrt(max(r2, 0.0))), float(np.sqrt(max(norm2, 0.0)))


def build_online_init(init_rb: InitRB, N_LM, M_init) -> OnlineInitMap:
    """Assemble the payoff-frame projection data from offline quantities.

    G_B is formed with M_init^{-1}, i.e. against the *discrete* projections
    of the hats, so that online errors certify distances to the discrete
    truth rather than to the unprojected payoff."""
    import scipy.sparse as sps
    import scipy.sparse.linalg as spla

    N = np.asarray(N_LM, dtype=float)
    Theta = N @ init_rb.basis.T
    if sps.issparse(M_init):
        X = spla.factorized(M_init.tocsc())(N.T)
    else:
        X = np.linalg.solve(np.asarray(M_init), N.T)
    G_B = N @ X
    G_B = 0.5 * (G_B + G_B.T)
    return OnlineInitMap(Theta=Theta, G_B=G_B)


# ---------------------------------------------------------------------------
# evolution reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingSet:
    """Cartesian training grid: initial candidates (H^M rows) x rho values.

    Products are enumerated candidate-major: sample p = (p // n_rho,
    p % n_rho); ties in greedy argmax resolve to the lowest index.
    """

    init_candidates: np.ndarray
    rho_values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "init_candidates", np.atleast_2d(np.asarray(self.init_candidates, float))
        )
        object.__setattr__(
            self, "rho_values", np.atleast_1d(np.asarray(self.rho_values, float))
        )
        if self.rho_values.size == 0 or self.init_candidates.shape[0] == 0:
            raise ValueError("training set must contain at least one sample")

    @property
    def n_products(self) -> int:
        return self.init_candidates.shape[0] * self.rho_values.size

    def unravel(self, p: int):
        nr = self.rho_values.size
        return p // nr, p % nr


@dataclass
class GreedyEntry:
    iteration: int
    cand_index: int
    rho: float
    estimator: float


def compute_supremizers(op, zgram: ZGramian, steps: np.ndarray) -> list:
    """Riesz pieces ``z_q = Z^{-1} B_q^T w`` of one evolution trajectory.

    The online test function at parameter rho is ``s(rho) = sum_q
    theta_q(rho) z_q``; it realizes the supremum of the inf-sup quotient
    for w up to the Gramian approximation."""
    pieces = []
    for q in range(op.n_terms):
        y = op.apply_term(q, steps, transpose=True, flat=False)
        pieces.append(zgram.apply_inverse(y))
    return pieces


@dataclass
class ReducedSolution:
    """Outcome of one online query."""

    alpha0: np.ndarray
    coeffs: np.ndarray
    rho: float
    R_init: float
    R_evol: float
    norm_mu0: float = float("nan")
    out_of_range: bool = False

    def breakdown(self, beta_LB: float) -> ErrorBreakdown:
        return ErrorBreakdown(R_init=self.R_init, R_evol=self.R_evol, beta_LB=beta_LB)


class EvolRB:
    """Evolution basis plus every Gram block the online phase needs.

    Holds the X-bar-orthonormal basis trajectories, the supremizer pieces,
    and the Riesz Gram blocks against the right-hand-side pieces.  The
    right-hand-side piece layout is: source terms first (Q_g of them), then
    one piece per (operator term q, initial basis function i), flattened
    q-major."""

    def __init__(self, solver: TruthSolver, init_rb: InitRB, rhs=None):
        self.solver = solver
        self.op = solver.op
        self.zgram = solver.zgram
        self.init_rb = init_rb
        self.Qb = self.op.n_terms
        self.theta_names = list(solver.forms.theta_names) + ["one"]
        self.N0 = init_rb.N0
        self.rhs = rhs
        self.basis = []          # list of (K, J) step arrays
        self.suprem = []         # per basis vector: list of Qb pieces (K, J)
        self.log: list[GreedyEntry] = []
        self.status = "empty"

        self._build_F_pieces()
        P = len(self.F)
        self.G_ff = np.empty((P, P))
        F_pre = [self.zgram.apply_inverse(f) for f in self.F]
        for a in range(P):
            for b in range(a, P):
                val = float(np.sum(self.F[a] * F_pre[b]))
                self.G_ff[a, b] = self.G_ff[b, a] = val
        self.G_fy = np.zeros((P, 0))
        self.G_yy = np.zeros((0, 0))
        self._xbar_cache = []

    @classmethod
    def from_blocks(cls, *, Qb: int, N0: int, theta_names, G_ff, G_fy, G_yy,
                    basis=None, log=None, status: str = "loaded") -> "EvolRB":
        """Rebuild the online-capable part from persisted Gram blocks.

        The result answers reduced queries (``solve``, ``reconstruct_steps``)
        but is frozen: it has no truth solver, so the basis cannot grow.
        Only source-free models round-trip this way (Q_g = 0).
        """
        obj = cls.__new__(cls)
        obj.solver = None
        obj.op = None
        obj.zgram = None
        obj.init_rb = None
        obj.rhs = None
        obj.Qb = int(Qb)
        obj.N0 = int(N0)
        obj.theta_names = list(theta_names)
        obj.Qg = 0
        obj.F = [None] * (obj.Qb * obj.N0)
        obj.G_ff = np.asarray(G_ff, dtype=float)
        obj.G_fy = np.asarray(G_fy, dtype=float)
        obj.G_yy = np.asarray(G_yy, dtype=float)
        obj.basis = [np.asarray(w, dtype=float) for w in basis] if basis is not None else []
        obj.suprem = []
        obj.log = list(log) if log is not None else []
        obj.status = status
        obj._xbar_cache = []
        return obj

    # -- right-hand-side pieces -------------------------------------------

    def _build_F_pieces(self):
        K, J = self.solver.grid.K, self.op.J
        dt = self.solver.grid.dt
        coup = self.solver.coupling
        self.F = []
        self.Qg = 0
        if self.rhs is not None and self.rhs.n_terms:
            self.Qg = self.rhs.n_terms
            for g in self.rhs.nodal:
                g = np.asarray(g, dtype=float)
                piece = np.zeros((K, J))
                piece += 0.5 * dt * (g[:-1] + g[1:])
                self.F.append(piece)
        for q in range(self.Qb):
            for i in range(self.N0):
                h = self.init_rb.basis[i]
                piece = np.zeros((K, J))
                if q < self.Qb - 1:
                    piece[0] = -0.5 * dt * np.asarray(coup.A_is[q].T @ h).ravel()
                else:
                    piece[0] = np.asarray(coup.M_is.T @ h).ravel()
                self.F.append(piece)

    def theta_F(self, rho: float, alpha0) -> np.ndarray:
        """Scalar factors of the rhs pieces for one query."""
        out = np.empty(len(self.F))
        if self.Qg:
            for p in range(self.Qg):
                out[p] = float(self.rhs.thetas[p](rho))
        th_b = self.theta_b(rho)
        out[self.Qg:] = np.outer(th_b, alpha0).ravel()
        return out

    def theta_b(self, rho: float) -> np.ndarray:
        return np.array([theta_value(nm, rho) for nm in self.theta_names])

    # -- basis growth ------------------------------------------------------

    @property
    def N1(self) -> int:
        return len(self.basis)

    def _xbar_inner_steps(self, a, b) -> float:
        z = np.zeros((1, a.shape[1]))
        return self.solver.xbar_inner(np.vstack([z, a]), np.vstack([z, b]))

    def add_snapshot(self, steps: np.ndarray, dep_tol: float = 1e-7) -> bool:
        """Orthonormalize a trajectory against the basis and append it.

        Returns False (and leaves the basis unchanged) when the snapshot is
        numerically dependent, i.e. the orthogonalized remainder has lost
        more than ``1/dep_tol`` of its length.
        """
        w = np.array(steps, dtype=float)
        norm_in = np.sqrt(max(self._xbar_inner_steps(w, w), 0.0))
        if norm_in == 0.0:
            return False
        for _ in range(2):  # modified Gram-Schmidt, repeated once
            for b in self.basis:
                w -= self._xbar_inner_steps(w, b) * b
        norm_out = np.sqrt(max(self._xbar_inner_steps(w, w), 0.0))
        if norm_out <= dep_tol * norm_in:
            return False
        w /= norm_out
        self._append(w)
        return True

    def _append(self, w: np.ndarray):
        pieces = compute_supremizers(self.op, self.zgram, w)
        ys = [self.op.apply_term(q, w, transpose=True, flat=False) for q in range(self.Qb)]
        n_old = self.N1
        Qb = self.Qb
        # grow G_yy: new rows/cols against all stored pieces, ordered (q, n)
        new_dim = Qb * (n_old + 1)
        G = np.zeros((new_dim, new_dim))
        if n_old:
            old = self.G_yy.reshape(Qb, n_old, Qb, n_old)
            Gv = G.reshape(Qb, n_old + 1, Qb, n_old + 1)
            Gv[:, :n_old, :, :n_old] = old
            for q in range(Qb):
                for qp in range(Qb):
                    for m in range(n_old):
                        val = float(np.sum(ys[q] * self.suprem[m][qp]))
                        Gv[q, n_old, qp, m] = val
                        Gv[qp, m, q, n_old] = val
        else:
            Gv = G.reshape(Qb, 1, Qb, 1)
        for q in range(Qb):
            for qp in range(q, Qb):
                val = float(np.sum(ys[q] * pieces[qp]))
                Gv[q, n_old, qp, n_old] = val
                Gv[qp, n_old, q, n_old] = val
        self.G_yy = G

        P = len(self.F)
        G_fy = np.zeros((P, new_dim)).reshape(P, Qb, n_old + 1)
        if n_old:
            G_fy[:, :, :n_old] = self.G_fy.reshape(P, Qb, n_old)
        for p in range(P):
            for q in range(Qb):
                G_fy[p, q, n_old] = float(np.sum(self.F[p] * pieces[q]))
        self.G_fy = G_fy.reshape(P, new_dim)

        self.basis.append(w)
        self.suprem.append(pieces)

    # -- online algebra ----------------------------------------------------

    def reduced_system(self, rho: float, alpha0):
        th = self.theta_b(rho)
        n = self.N1
        G4 = self.G_yy.reshape(self.Qb, n, self.Qb, n)
        K_red = np.einsum("q,qnpm,p->nm", th, G4, th)
        thF = self.theta_F(rho, alpha0)
        Gfy3 = self.G_fy.reshape(-1, self.Qb, n)
        rhs = np.einsum("p,pqn,q->n", thF, Gfy3, th)
        return K_red, rhs, th, thF

    def solve(self, rho: float, alpha0):
        """Reduced coefficients and evolution residual norm for one query."""
        if self.N1 == 0:
            thF = self.theta_F(rho, alpha0)
            r2 = float(thF @ (self.G_ff @ thF))
            return np.zeros(0), float(np.sqrt(max(r2, 0.0)))
        K_red, rhs, th, thF = self.reduced_system(rho, alpha0)
        try:
            cf = sla.cho_factor(K_red)
            c = sla.cho_solve(cf, rhs)
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(K_red)
            raise RuntimeError(
                f"reduced system singular at rho={rho}: condition estimate {cond:.3e}"
            ) from exc
        r2 = float(thF @ (self.G_ff @ thF)) - 2.0 * float(thF @ (self.G_fy @ np.kron(th, c)))
        r2 += float(c @ (K_red @ c))
        scale = max(1.0, float(thF @ (self.G_ff @ thF)))
        if r2 < -NEG_TOL * scale:
            raise ArithmeticError(f"residual square {r2} below round-off guard")
        return c, float(np.sqrt(max(r2, 0.0)))

    def reduced_smallest_sv(self, rho: float) -> float:
        """Diagnostic: smallest singular value of the reduced system."""
        if self.N1 == 0:
            return 0.0
        K_red, _, _, _ = self.reduced_system(rho, np.zeros(self.N0))
        return float(np.linalg.svd(K_red, compute_uv=False)[-1])

    def online_test_space(self, rho: float, n: int) -> np.ndarray:
        """Assembled supremizer ``s^n(rho)``, for inspection and tests."""
        th = self.theta_b(rho)
        acc = np.zeros_like(self.suprem[n][0])
        for q in range(self.Qb):
            acc += th[q] * self.suprem[n][q]
        return acc

    def reconstruct_steps(self, coeffs) -> np.ndarray:
        """Map reduced coefficients to the (K, J) trajectory part."""
        out = np.zeros_like(self.basis[0]) if self.basis else None
        for c, w in zip(coeffs, self.basis):
            out += c * w
        return out


def evolution_greedy(
    solver: TruthSolver,
    init_rb: InitRB,
    train: TrainingSet,
    tol1: float,
    n_max: int,
    beta_LB: float,
    rhs=None,
    selector: str = "estimator",
    verbose: bool = False,
) -> EvolRB:
    """Grow the evolution basis by worst-over-training greedy selection.

    ``selector`` picks the steering quantity: the online error estimator
    ``R_evol / beta_LB`` (cheap, certified) or the true trajectory error
    against cached full-order solves ("true_error", the strong variant).
    Stops at ``tol1``, at ``n_max`` vectors, on a numerically dependent
    snapshot, or on estimator stagnation (new maximum exceeding ten times
    the previous one).
    """
    if selector not in ("estimator", "true_error"):
        raise ValueError(f"unknown selector {selector!r}")
    evol = EvolRB(solver, init_rb, rhs=rhs)
    cands = train.init_candidates
    rhos = train.rho_values
    nc, nr = cands.shape[0], rhos.size

    # per-candidate reduced initial coefficients (training-time queries)
    M_init = solver.coupling.M_init
    A0 = np.array([rb_init_project(c, init_rb, M_init)[0] for c in cands])

    truth_cache = None
    if selector == "true_error":
        truth_cache = [
            [solver.cn_solve(r, c, rhs=rhs).steps for r in rhos] for c in cands
        ]
        init_nodal = A0 @ init_rb.basis  # H^M frame rows per candidate
        proj_P = solver.coupling.P

    prev_max = np.inf
    while True:
        scores = np.empty(nc * nr)
        for ic in range(nc):
            for ir in range(nr):
                c, R_evol = evol.solve(rhos[ir], A0[ic])
                if selector == "estimator":
                    scores[ic * nr + ir] = R_evol / beta_LB
                else:
                    red0 = np.asarray(proj_P.T @ init_nodal[ic]).ravel()
                    red = evol.reconstruct_steps(c) if evol.N1 else 0.0
                    diff_steps = truth_cache[ic][ir] - red
                    diff0 = np.asarray(proj_P.T @ cands[ic]).ravel() - red0
                    nodal = np.vstack([diff0[None, :], diff_steps])
                    scores[ic * nr + ir] = solver.xbar_norm(nodal)
        p = int(np.argmax(scores))
        top = float(scores[p])
        if evol.N1 > 0 and top < tol1:
            evol.status = "converged"
            break
        if evol.N1 > 0 and top > 10.0 * prev_max:
            evol.status = "stagnation"
            warnings.warn(
                f"greedy stagnation: estimator rose from {prev_max:.3e} to {top:.3e}"
            )
            break
        if evol.N1 >= n_max:
            evol.status = "max_size"
            break
        ic, ir = train.unravel(p)
        if selector == "true_error" and truth_cache is not None:
            steps = truth_cache[ic][ir]
        else:
            steps = solver.cn_solve(rhos[ir], cands[ic], rhs=rhs).steps
        if not evol.add_snapshot(steps):
            evol.status = "dependent"
            warnings.warn(
                f"greedy stopped: snapshot at (cand {ic}, rho {rhos[ir]:.4f}) "
                "is numerically dependent"
            )
            break
        prev_max = max(top, np.finfo(float).tiny)
        evol.log.append(
            GreedyEntry(iteration=evol.N1, cand_index=ic, rho=float(rhos[ir]), estimator=top)
        )
        if verbose:
            print(f"  greedy {evol.N1:3d}: cand {ic}, rho {rhos[ir]:+.4f}, score {top:.4e}")
    return evol


def rb_online_solve(mu0_alpha, rho: float, evol: EvolRB, R_init: float = 0.0,
                    norm_mu0: float = float("nan")) -> ReducedSolution:
    """Solve one reduced query from initial coefficients alpha0.

    The payoff-frame entry point goes through OnlineInitMap.project first;
    this function only touches reduced-size data.
    """
    alpha0 = np.asarray(mu0_alpha, dtype=float)
    if alpha0.shape != (evol.N0,):
        raise ValueError(f"expected {evol.N0} initial coefficients")
    coeffs, R_evol = evol.solve(rho, alpha0)
    return ReducedSolution(
        alpha0=alpha0, coeffs=coeffs, rho=float(rho),
        R_init=float(R_init), R_evol=R_evol, norm_mu0=norm_mu0,
    )


def error_estimator(solution: ReducedSolution, beta_LB: float) -> ErrorBreakdown:
    """Certified error components of a reduced solution."""
    if beta_LB <= 0:
        raise ValueError("beta_LB must be positive")
    return solution.breakdown(beta_LB)


# ---------------------------------------------------------------------------
# inf-sup lower bounds
# ---------------------------------------------------------------------------

def infsup_lower_bound(consts: StabilityConstants, T: float, mode: str = "auto") -> float:
    """Analytic lower bound for the space-time inf-sup constant.

    "coercive" requires the shifted coercivity margin alpha_a -
    lambda_a*varrho^2 to be positive; "time" trades that for an exp(-2
    lambda_a T) decay and only needs alpha_a > 0.  "auto" tries the
    coercive route first.  Returns 0.0 (with a warning) when no route
    applies; certification is then void.
    """
    if mode not in ("auto", "coercive", "time"):
        raise ValueError(f"unknown mode {mode!r}")

    def coercive(M_a, alpha_a, lam, M_e, varrho, beta_star):
        margin = alpha_a - lam * varrho**2
        if margin <= 0:
            return None
        num = min(min(1.0, M_a**-2) * margin, 1.0)
        den = np.sqrt(2.0 * max(1.0, beta_star**-2) + M_e**2)
        return num / den

    c = consts
    val = None
    if mode in ("auto", "coercive"):
        val = coercive(c.M_a, c.alpha_a, c.lambda_a, c.M_e, c.varrho, c.beta_a_star)
    if val is None and mode in ("auto", "time"):
        if c.alpha_a > 0:
            base = coercive(
                c.M_a + c.lambda_a * c.varrho**2, c.alpha_a, 0.0, c.M_e, c.varrho,
                c.beta_a_star,
            )
            if base is not None:
                decay = np.exp(-2.0 * c.lambda_a * T)
                den = np.sqrt(max(2.0, 1.0 + 2.0 * c.lambda_a**2 * c.varrho**4))
                val = base * decay / den
    if val is None:
        warnings.warn(
            "no inf-sup lower bound applies (operator not coercive even after "
            "Garding shift); returning 0, certification is void"
        )
        return 0.0
    return float(val)
