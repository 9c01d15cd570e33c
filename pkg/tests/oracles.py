"""Slow, independent reference computations used by several test modules.

Everything here deliberately avoids the library's assembly routines: dense
per-triangle loops, a degree-4 quadrature rule, and explicit Kronecker
products, so agreement with the fast vectorized code is meaningful.
"""

import numpy as np
import scipy.sparse as sps

# degree-4 rule on the reference triangle (6 points, barycentric)
_B1 = 0.445948490915965
_B2 = 0.091576213509771
_W1 = 0.223381589678011
_W2 = 0.109951743655322
TRI_QP = np.array(
    [
        [_B1, _B1, 1 - 2 * _B1],
        [_B1, 1 - 2 * _B1, _B1],
        [1 - 2 * _B1, _B1, _B1],
        [_B2, _B2, 1 - 2 * _B2],
        [_B2, 1 - 2 * _B2, _B2],
        [1 - 2 * _B2, _B2, _B2],
    ]
)
TRI_QW = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


def heston_diffusion(x, coeffs, rho):
    """Full (non-separated) diffusion matrix 0.5*nu*[[1, rho s],[rho s, s^2]]."""
    nu = x[1]
    s = coeffs.sigma
    return 0.5 * nu * np.array([[1.0, rho * s], [rho * s, s * s]])


def heston_convection(x, coeffs, rho):
    """Divergence-form convection field at a point."""
    nu = x[1]
    return np.array(
        [
            -coeffs.r + 0.5 * nu + 0.5 * rho * coeffs.sigma,
            -coeffs.kappa * coeffs.theta
            + coeffs.kappa * nu
            + 0.5 * coeffs.sigma**2,
        ]
    )


def dense_heston_matrix(mesh, coeffs, rho, dirichlet=True):
    """Assemble A(rho) entry by entry with a scalar triangle loop.

    Uses the degree-4 rule above and the closed-form Heston coefficient
    functions evaluated at the quadrature points, then eliminates the
    Dirichlet boundary.  Returns a dense array.
    """
    nv = mesh.n_vertices
    A = np.zeros((nv, nv))
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        e1, e2 = p[1] - p[0], p[2] - p[0]
        area = 0.5 * (e1[0] * e2[1] - e1[1] * e2[0])
        # gradients of the three barycentric hats
        G = np.empty((3, 2))
        for i in range(3):
            opp = p[(i + 2) % 3] - p[(i + 1) % 3]
            G[i] = np.array([-opp[1], opp[0]]) / (2.0 * area)
        for lam, w in zip(TRI_QP, TRI_QW):
            x = lam @ p
            D = heston_diffusion(x, coeffs, rho)
            b = heston_convection(x, coeffs, rho)
            for i in range(3):
                for j in range(3):
                    val = G[i] @ D @ G[j]
                    val += (b @ G[i]) * lam[j]
                    val += coeffs.r * lam[i] * lam[j]
                    A[tri[i], tri[j]] += w * area * val
    if dirichlet:
        A = A[np.ix_(mesh.interior, mesh.interior)]
    return A


def dense_spacetime_matrix(grid, M, A):
    """Dense space-time operator N (x) M + Mt (x) A from explicit Kroneckers.

    ``M`` and ``A`` may be sparse; the temporal factors are rebuilt here from
    the Crank-Nicolson trapezoid weights rather than taken from the library.
    """
    K, dt = grid.K, grid.dt
    Md = np.asarray(M.todense()) if sps.issparse(M) else np.asarray(M)
    Ad = np.asarray(A.todense()) if sps.issparse(A) else np.asarray(A)
    N_t = np.zeros((K, K))
    Mt = np.zeros((K, K))
    for k in range(K):
        N_t[k, k] = 1.0
        Mt[k, k] = 0.5 * dt
        if k + 1 < K:
            N_t[k, k + 1] = -1.0
            Mt[k, k + 1] = 0.5 * dt
    return np.kron(N_t, Md) + np.kron(Mt, Ad)


def dense_xbar_sq(grid, M, G, nodal):
    """Squared graph-type trajectory norm via an explicit time loop.

    ``nodal`` has shape (K+1, J).  Per interval: dt times the V-norm of the
    endpoint average plus 1/dt times the V'-dual norm of the increment; the
    terminal value contributes its H-norm.  All solves are dense.
    """
    Md = np.asarray(M.todense()) if sps.issparse(M) else np.asarray(M)
    Gd = np.asarray(G.todense()) if sps.issparse(G) else np.asarray(G)
    dt = grid.dt
    acc = 0.0
    for k in range(grid.K):
        avg = 0.5 * (nodal[k] + nodal[k + 1])
        acc += dt * (avg @ Gd @ avg)
        jump = Md @ (nodal[k + 1] - nodal[k])
        acc += (jump @ np.linalg.solve(Gd, jump)) / dt
    acc += nodal[-1] @ Md @ nodal[-1]
    return acc


def slice_N_oracle(knots, mesh, hat_values):
    """Exact (L, n_vertices) payoff/FE Gramian by vertical line slicing.

    Independent of the polygon-clipping assembly: each triangle is sliced
    along y into sections whose nu-extent is linear in y, the inner nu
    integral of the P1 basis is done in closed form (midpoint value times
    length), and the outer y integral uses Simpson on subintervals split at
    triangle vertices and knot lines, which is exact for the piecewise
    cubic integrand.  ``hat_values(y)`` returns the (L, len(y)) hat values.
    """
    L = len(knots.array)
    N = np.zeros((L, mesh.n_vertices))
    cuts = np.asarray(knots.array)

    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        e1, e2 = p[1] - p[0], p[2] - p[0]
        area2 = e1[0] * e2[1] - e1[1] * e2[0]
        # P1 gradients and values psi_j(x) = c_j + g_j . (x - p0)
        G = np.empty((3, 2))
        for i in range(3):
            opp = p[(i + 2) % 3] - p[(i + 1) % 3]
            G[i] = np.array([-opp[1], opp[0]]) / area2
        c0 = np.array([1.0, 0.0, 0.0])

        ys = np.sort(p[:, 0])
        breaks = np.unique(
            np.concatenate([ys, cuts[(cuts > ys[0]) & (cuts < ys[-1])]])
        )

        def section(y):
            """nu-interval of the triangle at abscissa y (may be empty)."""
            lo, hi = np.inf, -np.inf
            for a, b in ((p[0], p[1]), (p[1], p[2]), (p[2], p[0])):
                if a[0] == b[0]:
                    if a[0] == y:
                        lo = min(lo, a[1], b[1])
                        hi = max(hi, a[1], b[1])
                    continue
                t = (y - a[0]) / (b[0] - a[0])
                if -1e-12 <= t <= 1 + 1e-12:
                    nu = a[1] + t * (b[1] - a[1])
                    lo, hi = min(lo, nu), max(hi, nu)
            return (lo, hi) if hi > lo else (0.0, 0.0)

        def F(y):
            """(L, 3) array of B_l(y) * int_section psi_j dnu."""
            lo, hi = section(y)
            if hi <= lo:
                return np.zeros((L, 3))
            mid = 0.5 * (lo + hi)
            psi = c0 + G @ np.array([y - p[0, 0], mid - p[0, 1]])
            B = hat_values(np.array([y]))[:, 0]
            return (hi - lo) * np.outer(B, psi)

        for a, b in zip(breaks[:-1], breaks[1:]):
            if b - a < 1e-14:
                continue
            m = 0.5 * (a + b)
            contrib = (b - a) / 6.0 * (F(a) + 4.0 * F(m) + F(b))
            for j in range(3):
                N[:, tri[j]] += contrib[:, j]
    return N
