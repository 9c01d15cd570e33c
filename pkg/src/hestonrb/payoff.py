"""Payoff parameter functions: degree-1 Bernstein hats on log-price knots.

Initial data are parametrized as combinations ``mu0 = sum_l beta_l B_l`` of
piecewise linear hat functions over a strictly increasing knot vector in the
log-price coordinate y; the functions are constant in the variance
direction.  Standard strike knots come from strike levels via ``ln``, with
non-positive strikes repaired to 1e-8 before taking the log.

The bridge into the finite element space is the rectangular Gramian

    N[l, m] = (B_l, psi_m)_H,

assembled exactly: triangles cut by a knot line are split along it before
applying the edge-midpoint rule, so the piecewise quadratic integrand is
integrated without consistency error.  Meshes whose y-lines contain the
knots take the fast uncut path automatically; ``snap_knots`` produces such
an alignment when it exists.

Degree-n Bernstein polynomials on a single interval are provided as
evaluation utilities only; the assembled machinery covers degree 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem2d import SpatialMesh, triangle_quadrature

__all__ = [
    "BezierKnots",
    "PayoffSpec",
    "bernstein_hat_eval",
    "hat_matrix",
    "payoff_coeffs",
    "snap_knots",
    "assemble_N_LM",
    "bernstein_value",
]

#: floor used when repairing non-positive strike levels before ln
STRIKE_FLOOR = 1e-8


@dataclass(frozen=True)
class BezierKnots:
    """Strictly increasing knot vector in the log-price coordinate."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ValueError("need at least one knot")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"knots must be strictly increasing, got {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_strikes(cls, strikes) -> "BezierKnots":
        """Knots ``ln(strike)`` with non-positive strikes floored at 1e-8."""
        repaired = [max(float(s), STRIKE_FLOOR) for s in strikes]
        return cls(tuple(np.log(repaired)))

    @property
    def L(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)


@dataclass(frozen=True)
class PayoffSpec:
    """European payoff selector: ``call``/``put`` with a strike, or custom
    nodal values (one per knot)."""

    kind: str
    strike: float = 0.0
    values: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("call", "put", "custom"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put") and self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.kind == "custom" and self.values is None:
            raise ValueError("custom payoff needs nodal values")


def payoff_coeffs(spec: PayoffSpec, knots: BezierKnots) -> np.ndarray:
    """Hat coefficients of a payoff: its values at the knot positions.

    Piecewise linear interpolation at the knots is exact for the payoff
    kinks that coincide with knots (the usual case: the strike is a knot).
    """
    if spec.kind == "custom":
        vals = np.asarray(spec.values, dtype=float)
        if vals.shape != (knots.L,):
            raise ValueError(f"expected {knots.L} custom values, got {vals.shape}")
        return vals.copy()
    s = np.exp(knots.array)
    vals = np.maximum(s - spec.strike, 0.0) if spec.kind == "call" else np.maximum(spec.strike - s, 0.0)
    # exp(ln K) - K leaves a few ulp at the kink knot; snap those to zero
    vals[np.abs(vals) < 1e-9 * max(1.0, spec.strike)] = 0.0
    return vals


def hat_matrix(knots: BezierKnots, y) -> np.ndarray:
    """Values of all L hats at the points y, shape (L, len(y)).

    Hats vanish outside the knot span; the single-knot degenerate case is
    the constant function 1.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v = knots.array
    L = knots.L
    if L == 1:
        return np.ones((1, y.size))
    out = np.zeros((L, y.size))
    outside = (y < v[0]) | (y > v[-1])
    for el in range(L):
        if el == 0:
            vals = np.interp(y, [v[0], v[1]], [1.0, 0.0])
        elif el == L - 1:
            vals = np.interp(y, [v[-2], v[-1]], [0.0, 1.0])
        else:
            vals = np.interp(y, [v[el - 1], v[el], v[el + 1]], [0.0, 1.0, 0.0])
        vals[outside] = 0.0
        out[el] = vals
    return out


def bernstein_hat_eval(knots: BezierKnots, ell: int, y):
    """Single hat ``B_ell`` (1-based index) evaluated at y."""
    if not 1 <= ell <= knots.L:
        raise IndexError(f"hat index {ell} out of range 1..{knots.L}")
    return hat_matrix(knots, y)[ell - 1]


def bernstein_value(n: int, k: int, x, a: float, b: float):
    """Degree-n Bernstein polynomial ``B^n_k`` on ``[a, b]``.

    Barycentric form ``C(n,k) u1^k u0^(n-k)`` with ``u1 = (x-a)/(b-a)``.
    Evaluation only; k is the multi-index weight of the right endpoint.
    """
    if not 0 <= k <= n:
        raise ValueError(f"index {k} out of range 0..{n}")
    if b <= a:
        raise ValueError("interval must have positive length")
    x = np.asarray(x, dtype=float)
    u1 = (x - a) / (b - a)
    return math.comb(n, k) * u1**k * (1.0 - u1) ** (n - k)


def snap_knots(knots: BezierKnots, mesh: SpatialMesh) -> BezierKnots:
    """Move each knot to the nearest mesh y-line.

    Raises if two knots collapse onto the same line, which happens when the
    mesh is too coarse to separate them; use the exact cut quadrature then.
    """
    lines = mesh.y_lines
    snapped = lines[np.argmin(np.abs(lines[None, :] - knots.array[:, None]), axis=1)]
    if np.unique(snapped).size != snapped.size:
        raise ValueError(
            "knot snapping collapses neighbouring knots onto one mesh line; "
            "refine the mesh in y or keep the cut quadrature"
        )
    return BezierKnots(tuple(snapped))


# -- exact rectangular Gramian ---------------------------------------------

def _clip_halfplane(poly, c, keep_below):
    """Sutherland-Hodgman clip of a convex polygon against a y = c line."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        pin = (p[0] <= c) if keep_below else (p[0] >= c)
        qin = (q[0] <= c) if keep_below else (q[0] >= c)
        if pin:
            out.append(p)
        if pin != qin:
            t = (c - p[0]) / (q[0] - p[0])
            out.append((c, p[1] + t * (q[1] - p[1])))
    return out


def assemble_N_LM(
    knots: BezierKnots, mesh: SpatialMesh, init_basis=None, dirichlet: bool = True
) -> np.ndarray:
    """Gramian ``N[l, m] = (B_l, psi_m)_H`` of hats against the initial space.

    ``init_basis`` is the M x J coefficient matrix of H^M in V^J, or None
    for H^M = V^J.  With ``dirichlet=False`` (only valid without an init
    basis) columns run over all mesh vertices, which is what integral
    identities such as row sums are naturally checked against.
    """
    pts, area, grads, qpts, phi = triangle_quadrature(mesh)
    nt = mesh.n_triangles
    L = knots.L
    nv = mesh.n_vertices
    N_full = np.zeros((L, nv))

    ymin = pts[..., 0].min(axis=1)
    ymax = pts[..., 0].max(axis=1)
    cuts = knots.array
    crossed = np.zeros(nt, dtype=bool)
    for c in cuts:
        crossed |= (ymin < c) & (c < ymax)

    # fast path: hats are linear over uncut triangles, midpoint rule exact
    plain = ~crossed
    if np.any(plain):
        B = hat_matrix(knots, qpts[plain, :, 0].ravel()).reshape(L, -1, 3)
        w = area[plain] / 3.0
        elem = np.einsum("t,ltq,jq->ltj", w, B, phi)
        tri = mesh.triangles[plain]
        for j in range(3):
            np.add.at(N_full.T, tri[:, j], elem[:, :, j].T)

    # cut path: split each crossed triangle along its knot lines
    for t in np.flatnonzero(crossed):
        p0 = pts[t, 0]
        g = grads[t]  # (3, 2)
        inner = [c for c in cuts if ymin[t] < c < ymax[t]]
        slabs = [ymin[t]] + inner + [ymax[t]]
        tri_poly = [tuple(p) for p in pts[t]]
        for c0, c1 in zip(slabs[:-1], slabs[1:]):
            poly = _clip_halfplane(tri_poly, c0, keep_below=False)
            poly = _clip_halfplane(poly, c1, keep_below=True)
            if len(poly) < 3:
                continue
            P = np.asarray(poly)
            for k in range(1, len(poly) - 1):
                sub = np.vstack([P[0], P[k], P[k + 1]])
                d1, d2 = sub[1] - sub[0], sub[2] - sub[0]
                a2 = d1[0] * d2[1] - d1[1] * d2[0]
                if abs(a2) < 1e-30:
                    continue
                mids = 0.5 * (sub[[1, 2, 0]] + sub[[2, 0, 1]])
                wq = abs(a2) / 6.0  # area/3 per midpoint
                lam = (mids - p0) @ g.T  # P1 values of the parent triangle
                lam[:, 0] += 1.0
                B = hat_matrix(knots, mids[:, 0])  # (L, 3)
                N_full[:, mesh.triangles[t]] += wq * (B @ lam)

    if init_basis is not None:
        if not dirichlet:
            raise ValueError("dirichlet=False only applies to the plain V^J case")
        N_int = N_full[:, mesh.interior]
        P = np.atleast_2d(np.asarray(init_basis, dtype=float))
        if P.shape[1] != mesh.J:
            raise ValueError(f"init basis rows must have length J={mesh.J}")
        return N_int @ P.T
    if dirichlet:
        return N_full[:, mesh.interior]
    return N_full
