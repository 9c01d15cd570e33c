"""Temporal discretization and Kronecker space-time operators.

Trial functions in time are piecewise linear hats ``sigma^k`` on a uniform
grid ``0 = t^0 < ... < t^K = T``; test functions are piecewise constants
``tau^l`` on the same intervals.  The interesting products reduce to three
small K x K matrices (k, l = 1..K, stored 0-based):

    N[k, l] = (d/dt sigma^k, tau^l)      = delta_{k,l} - delta_{k+1,l}
    M[k, l] = (sigma^k, tau^l)           = dt/2 * (delta_{k,l} + delta_{k+1,l})
    I[k, l] = (tau^k, tau^l)             = dt * delta_{k,l}

The boundary hat ``sigma^0`` couples only into the first interval:
``(d/dt sigma^0, tau^l) = -delta_{1,l}`` and ``(sigma^0, tau^l) =
dt/2 * delta_{1,l}``; those weights live in the coupling matrices below, not
in N and M.

The space-time operator is the Kronecker sum

    B(rho) = N (x) M_space  +  M (x) A_space(rho),

acting on coefficient vectors of length K*J laid out time-major (block k
holds the spatial dofs of hat k+1).  The linear systems of the solver use
``B(rho)^T``; both actions are provided matrix-free via the block structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .fem2d import AffineSpatialForms, theta_value

__all__ = [
    "TimeGrid",
    "TemporalMatrices",
    "temporal_matrices",
    "SpaceTimeOperator",
    "CouplingMatrices",
    "assemble_coupling",
    "ZGramian",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, T]`` with ``K`` intervals."""

    T: float
    K: int

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("final time must be positive")
        if self.K < 1:
            raise ValueError("need at least one time interval")

    @property
    def dt(self) -> float:
        return self.T / self.K

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)


@dataclass(frozen=True)
class TemporalMatrices:
    """The K x K temporal product matrices plus the sigma^0 coupling row."""

    N: np.ndarray
    M: np.ndarray
    I: np.ndarray
    row0_n: np.ndarray  # (d/dt sigma^0, tau^l)
    row0_m: np.ndarray  # (sigma^0, tau^l)


def temporal_matrices(grid: TimeGrid) -> TemporalMatrices:
    """Exact integrals of the hat/indicator products on the uniform grid."""
    K, dt = grid.K, grid.dt
    N = np.eye(K)
    M = 0.5 * dt * np.eye(K)
    idx = np.arange(K - 1)
    N[idx, idx + 1] = -1.0
    M[idx, idx + 1] = 0.5 * dt
    I = dt * np.eye(K)
    row0_n = np.zeros(K)
    row0_n[0] = -1.0
    row0_m = np.zeros(K)
    row0_m[0] = 0.5 * dt
    return TemporalMatrices(N=N, M=M, I=I, row0_n=row0_n, row0_m=row0_m)


class SpaceTimeOperator:
    """Matrix-free actions of ``B(rho)`` and ``B(rho)^T``.

    Block form (w given as (K, J), 1-based time indices, w^{K+1} = w^0 = 0):

        (B w)^k   = M_sp (w^k - w^{k+1}) + dt/2 * A(rho)   (w^k + w^{k+1})
        (B^T w)^l = M_sp (w^l - w^{l-1}) + dt/2 * A(rho)^T (w^l + w^{l-1})
    """

    def __init__(self, grid: TimeGrid, mass, forms: AffineSpatialForms):
        self.grid = grid
        self.mass = mass.tocsr()
        self.forms = forms
        if forms.shape != self.mass.shape:
            raise ValueError("spatial mass and affine forms sizes differ")
        self.J = self.mass.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.K * self.J

    def _blocks(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            if w.size != self.dim:
                raise ValueError(f"expected vector of length {self.dim}, got {w.size}")
            return w.reshape(self.grid.K, self.J)
        if w.shape != (self.grid.K, self.J):
            raise ValueError(f"expected shape {(self.grid.K, self.J)}, got {w.shape}")
        return w

    def apply(self, rho: float, w, flat: bool = True):
        W = self._blocks(w)
        A = self.forms.evaluate(rho)
        shifted = np.vstack([W[1:], np.zeros((1, self.J))])  # w^{k+1}
        out = (self.mass @ (W - shifted).T).T
        out += 0.5 * self.grid.dt * (A @ (W + shifted).T).T
        return out.ravel() if flat else out

    def apply_transpose(self, rho: float, w, flat: bool = True):
        W = self._blocks(w)
        A = self.forms.evaluate(rho)
        shifted = np.vstack([np.zeros((1, self.J)), W[:-1]])  # w^{l-1}
        out = (self.mass @ (W - shifted).T).T
        out += 0.5 * self.grid.dt * (A.T @ (W + shifted).T).T
        return out.ravel() if flat else out

    def apply_term(self, q: int, w, transpose: bool = False, flat: bool = True):
        """Action of the single affine term B_q (theta factor excluded).

        Terms 0 .. n_spatial-1 are ``M_time (x) A_q``; the final term
        ``q = n_spatial`` is the time-derivative part ``N_time (x) M_sp``.
        """
        W = self._blocks(w)
        nsp = self.forms.n_terms
        if not 0 <= q <= nsp:
            raise ValueError(f"affine term index {q} out of range 0..{nsp}")
        if q == nsp:
            mat = self.mass  # symmetric
            if transpose:
                shifted = np.vstack([np.zeros((1, self.J)), W[:-1]])
            else:
                shifted = np.vstack([W[1:], np.zeros((1, self.J))])
            out = (mat @ (W - shifted).T).T
        else:
            mat = self.forms.matrices[q]
            if transpose:
                mat = mat.T
                shifted = np.vstack([np.zeros((1, self.J)), W[:-1]])
            else:
                shifted = np.vstack([W[1:], np.zeros((1, self.J))])
            out = 0.5 * self.grid.dt * (mat @ (W + shifted).T).T
        return out.ravel() if flat else out

    @property
    def n_terms(self) -> int:
        """Number of affine terms of B, spatial pieces plus time derivative."""
        return self.forms.n_terms + 1

    def term_thetas(self, rho: float) -> np.ndarray:
        """Scalar factors of the affine terms, ordered as in apply_term."""
        return np.append(self.forms.thetas(rho), 1.0)


@dataclass
class CouplingMatrices:
    """Couplings of the initial-value hat ``sigma^0 (x) H^M`` into the test space.

    The initial space H^M is spanned by functions psi_m given through their
    V^J coefficient rows ``P`` (M x J).  Derived quantities:

        M_is       = P M_sp        (M x J)
        A_is_q     = P A_q         (M x J, one per affine term)
        M_init     = P M_sp P^T    (M x M, H-Gramian of the psi_m)
        C_is(rho)  = -M_is + dt/2 * sum_q theta_q A_is_q

    ``C_is(rho)^T u0`` is (minus) the right-hand-side block which the initial
    value injects into the first time interval.
    """

    grid: TimeGrid
    P: np.ndarray
    M_is: np.ndarray
    A_is: list
    theta_names: list
    M_init: object

    @property
    def M(self) -> int:
        return self.P.shape[0]

    def A_is_eval(self, rho: float):
        acc = None
        for name, mat in zip(self.theta_names, self.A_is):
            term = theta_value(name, rho) * mat
            acc = term if acc is None else acc + term
        return acc

    def C_is(self, rho: float):
        return -self.M_is + 0.5 * self.grid.dt * self.A_is_eval(rho)


def assemble_coupling(
    grid: TimeGrid, mass, forms: AffineSpatialForms, init_basis=None
) -> CouplingMatrices:
    """Build the initial-value coupling for a given H^M representation.

    ``init_basis`` is the M x J coefficient matrix P; ``None`` means
    H^M = V^J (P = identity), in which case the couplings are the spatial
    matrices themselves.
    """
    mass = mass.tocsr()
    J = mass.shape[0]
    if init_basis is None:
        P = sps.identity(J, format="csr")
        M_is = mass
        A_is = list(forms.matrices)
        M_init = mass
    else:
        P = np.atleast_2d(np.asarray(init_basis, dtype=float))
        if P.shape[1] != J:
            raise ValueError(
                f"init basis rows must have length J={J}, got {P.shape[1]}"
            )
        M_is = np.asarray(P @ mass)
        A_is = [np.asarray(P @ m) for m in forms.matrices]
        M_init = sps.csr_matrix(np.asarray(P @ mass @ P.T))
    return CouplingMatrices(
        grid=grid,
        P=P,
        M_is=M_is,
        A_is=A_is,
        theta_names=list(forms.theta_names),
        M_init=M_init,
    )


class ZGramian:
    """Block-diagonal Gramian ``Z = I_time (x) G_space`` of the test space.

    Provides the Riesz machinery for dual norms: ``apply_inverse`` solves
    blockwise with a cached sparse factorization of G, so repeated residual
    norms cost one triangular solve per time interval.
    """

    def __init__(self, grid: TimeGrid, gramian):
        self.grid = grid
        self.G = gramian.tocsc()
        self.J = self.G.shape[0]
        self._solve = spla.factorized(self.G)

    @property
    def dim(self) -> int:
        return self.grid.K * self.J

    def _blocks(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            if v.size != self.dim:
                raise ValueError(f"expected vector of length {self.dim}, got {v.size}")
            return v.reshape(self.grid.K, self.J), True
        if v.shape != (self.grid.K, self.J):
            raise ValueError(f"expected shape {(self.grid.K, self.J)}, got {v.shape}")
        return v, False

    def apply(self, v):
        V, flat = self._blocks(v)
        out = self.grid.dt * (self.G @ V.T).T
        return out.ravel() if flat else out

    def apply_inverse(self, v):
        V, flat = self._blocks(v)
        out = self._solve(V.T).T / self.grid.dt
        return np.ascontiguousarray(out.ravel() if flat else out)

    def inner(self, u, v) -> float:
        """Z-inner product of two coefficient vectors."""
        U, _ = self._blocks(u)
        V, _ = self._blocks(v)
        return float(self.grid.dt * np.sum(U * (self.G @ V.T).T))

    def dual_inner(self, u, v) -> float:
        """Z'-inner product, i.e. ``u^T Z^{-1} v``."""
        U, _ = self._blocks(u)
        V, _ = self._blocks(v)
        return float(np.sum(U * self.apply_inverse(V)))

    def dual_norm(self, v) -> float:
        val = self.dual_inner(v, v)
        return float(np.sqrt(max(val, 0.0)))
