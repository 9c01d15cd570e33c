"""P1 finite elements on a uniform rectangle mesh for the Heston spatial operator.

The spatial domain is a rectangle in (y, nu), where y is the log asset price
and nu the variance.  The Heston bilinear form

    a(rho; u, v) = (alpha grad u, grad v) + (beta . grad u, v) + r (u, v)

with diffusion matrix alpha = 0.5 * [[nu, rho*sigma*nu], [rho*sigma*nu, sigma^2*nu]]
splits affinely in the correlation parameter,

    a(rho; u, v) = a_1(u, v) + rho * a_2(u, v),

where a_1 collects the rho-independent diffusion/convection/reaction pieces
and a_2 the cross-diffusion plus the convection correction it induces in
divergence form.  Everything here is assembled once, parameter-free; the
parameter only ever enters through scalar theta factors.

Matrix convention: entry [i, j] of an assembled operator is a(phi_i, phi_j)
with the *trial* function on the row index.  Time steppers therefore apply
the transpose for non-symmetric operators.

Quadrature is the three-point edge-midpoint rule, which is exact for
quadratic integrands on triangles; all Heston coefficient combinations with
P1 bases stay within that degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

__all__ = [
    "Rectangle",
    "SpatialMesh",
    "HestonCoefficients",
    "AffineSpatialForms",
    "StabilityConstants",
    "build_rect_mesh",
    "triangle_quadrature",
    "assemble_operator",
    "assemble_mass",
    "assemble_v_gramian",
    "assemble_laplace",
    "assemble_heston_affine",
    "evaluate_affine",
    "theta_value",
    "write_matrix_triplets",
    "read_matrix_triplets",
    "write_mesh_text",
]

#: Known scalar parameter factors, by name.  Persisted models reference these
#: identifiers instead of pickled callables.
THETA_FUNCTIONS = {
    "one": lambda rho: 1.0,
    "rho": lambda rho: float(rho),
}


def theta_value(name: str, rho: float) -> float:
    """Evaluate a named affine parameter factor at ``rho``."""
    try:
        fn = THETA_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown theta function {name!r}") from None
    return fn(rho)


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned spatial domain ``[y_min, y_max] x [nu_min, nu_max]``."""

    y_min: float
    y_max: float
    nu_min: float
    nu_max: float

    def __post_init__(self):
        if not (self.y_max > self.y_min and self.nu_max > self.nu_min):
            raise ValueError("degenerate domain: need y_max > y_min and nu_max > nu_min")

    @property
    def widths(self):
        return (self.y_max - self.y_min, self.nu_max - self.nu_min)

    @property
    def area(self) -> float:
        wy, wn = self.widths
        return wy * wn


@dataclass(frozen=True)
class HestonCoefficients:
    """Model constants of the Heston PDE in divergence form.

    kappa : mean reversion speed of the variance process
    theta : long-run variance level
    sigma : volatility of volatility
    r     : risk-free rate
    """

    kappa: float
    theta: float
    sigma: float
    r: float

    def __post_init__(self):
        if self.kappa < 0 or self.theta < 0 or self.sigma < 0:
            raise ValueError("kappa, theta, sigma must be non-negative")


@dataclass(frozen=True)
class StabilityConstants:
    """Constants of the spatial form entering inf-sup lower bounds.

    M_a         : continuity constant of the full form a
    alpha_a     : coercivity constant of the symmetric part (may be <= 0)
    lambda_a    : Garding shift making a + lambda_a (.,.)_H coercive
    M_e         : norm of the H -> V' embedding
    varrho      : norm of the V -> H embedding
    beta_a_star : inf-sup constant of the adjoint form (1 for symmetric a)
    """

    M_a: float
    alpha_a: float
    lambda_a: float
    M_e: float
    varrho: float
    beta_a_star: float = 1.0


class SpatialMesh:
    """Uniform criss-cross triangulation of a rectangle.

    ``nx`` x ``ny`` cells, each split into two triangles along the diagonal
    from the lower-left to the upper-right corner.  Vertices are numbered
    row-major in nu, interior degrees of freedom likewise; the Dirichlet
    boundary is eliminated, leaving J = (nx - 1) * (ny - 1) dofs.
    """

    def __init__(self, domain: Rectangle, nx: int, ny: int):
        if nx < 2 or ny < 2:
            raise ValueError(
                f"mesh {nx} x {ny} has no interior dofs; need nx >= 2 and ny >= 2"
            )
        self.domain = domain
        self.nx = int(nx)
        self.ny = int(ny)
        wy, wn = domain.widths
        self.hy = wy / nx
        self.hnu = wn / ny

        ys = np.linspace(domain.y_min, domain.y_max, nx + 1)
        nus = np.linspace(domain.nu_min, domain.nu_max, ny + 1)
        Y, NU = np.meshgrid(ys, nus, indexing="xy")  # row-major in nu
        self.vertices = np.column_stack([Y.ravel(), NU.ravel()])
        self.y_lines = ys
        self.nu_lines = nus

        # two triangles per cell, fixed diagonal (ix,iy) -> (ix+1,iy+1)
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        v00 = (iy * (nx + 1) + ix).ravel()
        v10 = v00 + 1
        v01 = v00 + (nx + 1)
        v11 = v01 + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        self.triangles = np.vstack([lower, upper])

        gx = np.tile(np.arange(nx + 1), ny + 1)
        gy = np.repeat(np.arange(ny + 1), nx + 1)
        interior_mask = (gx > 0) & (gx < nx) & (gy > 0) & (gy < ny)
        self.interior = np.flatnonzero(interior_mask)
        self.dof_index = np.full(self.n_vertices, -1, dtype=np.int64)
        self.dof_index[self.interior] = np.arange(self.interior.size)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def J(self) -> int:
        """Number of interior (Dirichlet-eliminated) degrees of freedom."""
        return self.interior.size

    def interior_coords(self):
        return self.vertices[self.interior]

    def __repr__(self):
        return (
            f"SpatialMesh({self.nx} x {self.ny} cells, {self.n_triangles} triangles, "
            f"J={self.J})"
        )


def build_rect_mesh(domain: Rectangle, nx: int, ny: int) -> SpatialMesh:
    """Build the uniform triangulation with ``(nx+1)*(ny+1)`` vertices."""
    return SpatialMesh(domain, nx, ny)


def triangle_quadrature(mesh: SpatialMesh):
    """Geometry and edge-midpoint quadrature data for every triangle.

    Returns
    -------
    pts : (nt, 3, 2) vertex coordinates
    area : (nt,) triangle areas
    grads : (nt, 3, 2) gradients of the three P1 basis functions
    qpts : (nt, 3, 2) edge midpoints; midpoint q sits opposite vertex q
    phi_at_q : (3, 3) array, ``phi_at_q[i, q]`` = value of basis i at midpoint q
    """
    pts = mesh.vertices[mesh.triangles]
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(area2 <= 0):
        raise ValueError("mesh contains degenerate or inverted triangles")
    # edge opposite vertex i runs from vertex i+1 to vertex i+2 (mod 3)
    opp = pts[:, [2, 0, 1]] - pts[:, [1, 2, 0]]
    grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / area2[:, None, None]
    qpts = 0.5 * (pts[:, [1, 2, 0]] + pts[:, [2, 0, 1]])
    phi_at_q = 0.5 * (1.0 - np.eye(3))
    return pts, 0.5 * area2, grads, qpts, phi_at_q


def _restrict(rows, cols, vals, mesh: SpatialMesh, dirichlet: bool):
    """Turn COO triplets over vertices into a CSR matrix, optionally dropping
    boundary rows/columns.  Triplets are lex-sorted before summation so the
    result does not depend on assembly (triangle enumeration) order."""
    if dirichlet:
        ri = mesh.dof_index[rows]
        ci = mesh.dof_index[cols]
        keep = (ri >= 0) & (ci >= 0)
        rows, cols, vals = ri[keep], ci[keep], vals[keep]
        n = mesh.J
    else:
        n = mesh.n_vertices
    order = np.lexsort((cols, rows))
    mat = sps.coo_matrix(
        (vals[order], (rows[order], cols[order])), shape=(n, n)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_operator(
    mesh: SpatialMesh,
    diffusion=None,
    convection=None,
    reaction=None,
    dirichlet: bool = True,
):
    """Assemble ``(D grad u, grad v) + (b . grad u, v) + (c u, v)``.

    Coefficients are callables of an ``(n, 2)`` point array: ``diffusion``
    returns ``(n, 2, 2)`` matrices, ``convection`` ``(n, 2)`` vectors,
    ``reaction`` ``(n,)`` scalars.  Any of them may be ``None``.  Entry
    ``[i, j]`` has trial index i, test index j.
    """
    pts, area, grads, qpts, phi = triangle_quadrature(mesh)
    nt = mesh.n_triangles
    w = area / 3.0
    elem = np.zeros((nt, 3, 3))
    flat_q = qpts.reshape(-1, 2)

    if diffusion is not None:
        D = np.asarray(diffusion(flat_q), dtype=float).reshape(nt, 3, 2, 2)
        Dbar = np.einsum("tq,tqab->tab", np.broadcast_to(w[:, None], (nt, 3)), D)
        elem += np.einsum("tia,tab,tjb->tij", grads, Dbar, grads)
    if convection is not None:
        b = np.asarray(convection(flat_q), dtype=float).reshape(nt, 3, 2)
        bg = np.einsum("tqa,tia->tqi", b, grads)  # b(x_q) . grad phi_i
        elem += np.einsum("t,tqi,jq->tij", w, bg, phi)
    if reaction is not None:
        c = np.asarray(reaction(flat_q), dtype=float).reshape(nt, 3)
        elem += np.einsum("t,tq,iq,jq->tij", w, c, phi, phi)

    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return _restrict(rows, cols, elem.ravel(), mesh, dirichlet)


def assemble_mass(mesh: SpatialMesh, dirichlet: bool = True):
    """L2 mass matrix (the H inner product)."""
    return assemble_operator(mesh, reaction=lambda x: np.ones(len(x)), dirichlet=dirichlet)


def assemble_laplace(mesh: SpatialMesh, dirichlet: bool = True):
    """Stiffness matrix of the Laplacian."""
    eye2 = lambda x: np.broadcast_to(np.eye(2), (len(x), 2, 2))
    return assemble_operator(mesh, diffusion=eye2, dirichlet=dirichlet)


def assemble_v_gramian(mesh: SpatialMesh, dirichlet: bool = True):
    """Gramian of the full H1 inner product, ``(grad u, grad v) + (u, v)``."""
    eye2 = lambda x: np.broadcast_to(np.eye(2), (len(x), 2, 2))
    return assemble_operator(
        mesh,
        diffusion=eye2,
        reaction=lambda x: np.ones(len(x)),
        dirichlet=dirichlet,
    )


@dataclass
class AffineSpatialForms:
    """Parameter-separable family ``A(rho) = sum_q theta_q(rho) * A_q``.

    ``theta_names`` are identifiers into :data:`THETA_FUNCTIONS` so that the
    decomposition survives serialization.
    """

    matrices: list = field(default_factory=list)
    theta_names: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.matrices) != len(self.theta_names):
            raise ValueError("one theta name per matrix required")
        for name in self.theta_names:
            if name not in THETA_FUNCTIONS:
                raise ValueError(f"unknown theta function {name!r}")
        shapes = {m.shape for m in self.matrices}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent matrix shapes {shapes}")

    @property
    def n_terms(self) -> int:
        return len(self.matrices)

    @property
    def shape(self):
        return self.matrices[0].shape

    def thetas(self, rho: float) -> np.ndarray:
        return np.array([theta_value(name, rho) for name in self.theta_names])

    def evaluate(self, rho: float):
        """Plain sparse matrix ``A(rho)``."""
        acc = None
        for th, mat in zip(self.thetas(rho), self.matrices):
            term = th * mat
            acc = term if acc is None else acc + term
        return acc.tocsr()


def evaluate_affine(forms: AffineSpatialForms, rho: float):
    """Evaluate the affine family at a parameter value."""
    return forms.evaluate(rho)


def assemble_heston_affine(
    mesh: SpatialMesh, coeffs: HestonCoefficients, dirichlet: bool = True
) -> AffineSpatialForms:
    """Assemble the two affine pieces of the Heston form.

    A_1 carries 0.5*diag(nu, sigma^2 nu) diffusion, the rho-free part of the
    divergence-form convection field and the reaction term r; A_2 (factor
    rho) carries the cross-diffusion 0.5*sigma*nu and the convection
    correction (sigma/2, 0) produced by differentiating the cross term.
    """
    kappa, th, sigma, r = coeffs.kappa, coeffs.theta, coeffs.sigma, coeffs.r

    def diff1(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = 0.5 * x[:, 1]
        out[:, 1, 1] = 0.5 * sigma**2 * x[:, 1]
        return out

    def conv1(x):
        out = np.empty((len(x), 2))
        out[:, 0] = -r + 0.5 * x[:, 1]
        out[:, 1] = -kappa * th + kappa * x[:, 1] + 0.5 * sigma**2
        return out

    def diff2(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 1] = 0.5 * sigma * x[:, 1]
        out[:, 1, 0] = 0.5 * sigma * x[:, 1]
        return out

    def conv2(x):
        out = np.zeros((len(x), 2))
        out[:, 0] = 0.5 * sigma
        return out

    A1 = assemble_operator(
        mesh,
        diffusion=diff1,
        convection=conv1,
        reaction=lambda x: np.full(len(x), r),
        dirichlet=dirichlet,
    )
    A2 = assemble_operator(mesh, diffusion=diff2, convection=conv2, dirichlet=dirichlet)
    return AffineSpatialForms(matrices=[A1, A2], theta_names=["one", "rho"])


# -- plain-text export ------------------------------------------------------

def write_matrix_triplets(mat, path):
    """Write a sparse matrix as ``rows cols nnz`` header plus ``i j value``
    lines, 17 significant digits."""
    coo = sps.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write("%d %d %.17g\n" % (i, j, v))


def read_matrix_triplets(path):
    """Inverse of :func:`write_matrix_triplets`."""
    with open(path) as fh:
        header = fh.readline().split()
        nrows, ncols, nnz = (int(t) for t in header)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k in range(nnz):
            i, j, v = fh.readline().split()
            rows[k], cols[k], vals[k] = int(i), int(j), float(v)
    return sps.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()


def write_mesh_text(mesh: SpatialMesh, path):
    """Dump vertices and triangles in a plain-text block format."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"vertices {mesh.n_vertices}\n")
        for y, nu in mesh.vertices:
            fh.write("%.17g %.17g\n" % (y, nu))
        fh.write(f"triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"interior {mesh.J}\n")
        fh.write(" ".join(str(v) for v in mesh.interior) + "\n")
