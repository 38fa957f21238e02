"""Lagrange finite element spaces on triangle meshes.

Provides P1/P2 spaces with and without essential boundary values, the nodal
interpolation operator, sparse assembly of the stiffness matrix, the lumped
load vector (integrals of the basis functions), the boundary penalty
operators used to impose Dirichlet data weakly, the resulting quadratic
energy in nodal values, and a direct conjugate-gradient minimiser of that
energy which serves as a lower-bound oracle for all network training.

The load term deliberately realises the nodal-product form
``int I(f*g) = sum_z f(z) g(z) L[z]`` (interpolate the product, not apply
quadrature to f * I(g)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .quadrature import EdgeRule, QuadRule, edge_rule, triangle_rule

BOUNDARY_TOL = 1e-12

# NodalVector in the data model is a plain float64 array, one value per dof.
NodalVector = np.ndarray


@dataclass
class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 on a triangle mesh."""

    mesh: Mesh
    degree: int
    dof_coords: np.ndarray  # (ndof, 2)
    element_dofs: np.ndarray  # (nt, 3) for P1, (nt, 6) for P2
    boundary_dofs: np.ndarray  # bool mask (ndof,)

    @property
    def num_dofs(self) -> int:
        return self.dof_coords.shape[0]


@dataclass
class NitscheOperators:
    """Boundary penalty sum as a quadratic form: v'Pv - 2 v'r + s."""

    penalty: sp.csr_matrix
    rhs: np.ndarray
    constant: float
    alpha: float


@dataclass
class AssembledOperators:
    """Everything the nodal energy needs, assembled once per space."""

    space: FeSpace
    stiffness: sp.csr_matrix
    load: np.ndarray
    nitsche: NitscheOperators


def build_space(mesh: Mesh, degree: int) -> FeSpace:
    """P1 dofs sit at vertices; P2 adds one dof per unique edge midpoint."""
    if degree not in (1, 2):
        raise ValueError(f"unsupported polynomial degree {degree} (use 1 or 2)")
    if degree == 1:
        coords = mesh.vertices.copy()
        element_dofs = mesh.triangles.copy()
    else:
        tris = mesh.triangles
        pairs = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        pairs_sorted = np.sort(pairs, axis=1)
        keys = pairs_sorted[:, 0] * mesh.num_vertices + pairs_sorted[:, 1]
        unique_keys, inverse = np.unique(keys, return_inverse=True)
        ua = unique_keys // mesh.num_vertices
        ub = unique_keys % mesh.num_vertices
        midpoints = 0.5 * (mesh.vertices[ua] + mesh.vertices[ub])
        coords = np.vstack([mesh.vertices, midpoints])
        nt = mesh.num_triangles
        edge_dofs = mesh.num_vertices + inverse.reshape(3, nt).T
        element_dofs = np.hstack([tris, edge_dofs])
    on_x = (np.abs(coords[:, 0]) <= BOUNDARY_TOL) | (np.abs(coords[:, 0] - 1.0) <= BOUNDARY_TOL)
    on_y = (np.abs(coords[:, 1]) <= BOUNDARY_TOL) | (np.abs(coords[:, 1] - 1.0) <= BOUNDARY_TOL)
    return FeSpace(
        mesh=mesh,
        degree=degree,
        dof_coords=coords,
        element_dofs=element_dofs,
        boundary_dofs=on_x | on_y,
    )


def reference_basis(degree: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (n, nd) and reference gradients (n, nd, 2) of the Lagrange basis.

    Local ordering: vertices (0,0),(1,0),(0,1) first; for P2 the midpoints of
    edges (0,1),(1,2),(2,0) follow.
    """
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        return lam, np.broadcast_to(dlam, (len(pts), 3, 2)).copy()
    if degree != 2:
        raise ValueError(f"unsupported polynomial degree {degree}")
    vals = np.empty((len(pts), 6))
    grads = np.empty((len(pts), 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
    for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        vals[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 3 + k, :] = 4.0 * (lam[:, a, None] * dlam[b] + lam[:, b, None] * dlam[a])
    return vals, grads


def interpolate(space: FeSpace, g: Callable[[np.ndarray], np.ndarray], zero_boundary: bool = False) -> NodalVector:
    """Nodal values of g; with ``zero_boundary`` the boundary dofs are forced to 0."""
    values = np.asarray(g(space.dof_coords), dtype=np.float64)
    if values.shape != (space.num_dofs,):
        raise ValueError("interpolated function must return one value per dof coordinate")
    if zero_boundary:
        values = values.copy()
        values[space.boundary_dofs] = 0.0
    return values


def _element_jacobians(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    d1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    d2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # inverse of [[d1x, d2x], [d1y, d2y]] row-wise
    inv = np.empty((mesh.num_triangles, 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    return v0, np.stack([d1, d2], axis=2), inv, 0.5 * np.abs(det)


def _scatter(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    """Accumulate per-element (nt, nd, nd) blocks into a CSR matrix."""
    dofs = space.element_dofs
    nd = dofs.shape[1]
    rows = np.repeat(dofs, nd, axis=1).ravel()
    cols = np.tile(dofs, (1, nd)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.num_dofs, space.num_dofs))
    return mat.tocsr()


def assemble_stiffness(space: FeSpace) -> sp.csr_matrix:
    """K[z,w] = int grad(Phi_z) . grad(Phi_w); exact polynomial integration."""
    rule = triangle_rule(1 if space.degree == 1 else 2)
    _, _, jinv, areas = _element_jacobians(space.mesh)
    _, ref_grads = reference_basis(space.degree, rule.points)
    nd = space.element_dofs.shape[1]
    local = np.zeros((space.mesh.num_triangles, nd, nd))
    for p, w in enumerate(rule.weights):
        # physical gradients: (nt, nd, 2) = ref_grads[p] @ jinv per element
        phys = np.einsum("ad,tdk->tak", ref_grads[p], jinv)
        local += w * np.einsum("tak,tbk->tab", phys, phys)
    local *= areas[:, None, None]
    return _scatter(space, local)


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    """Exact mass matrix M[z,w] = int Phi_z Phi_w (degree-2q integrand)."""
    rule = triangle_rule(2 if space.degree == 1 else 4)
    _, _, _, areas = _element_jacobians(space.mesh)
    vals, _ = reference_basis(space.degree, rule.points)
    local = np.einsum("p,pa,pb->ab", rule.weights, vals, vals)
    return _scatter(space, areas[:, None, None] * local[None, :, :])


def assemble_load_lumped(space: FeSpace) -> NodalVector:
    """L[z] = int Phi_z, so that int I(f*g) = sum_z f(z) g(z) L[z] exactly."""
    rule = triangle_rule(space.degree)
    _, _, _, areas = _element_jacobians(space.mesh)
    vals, _ = reference_basis(space.degree, rule.points)
    per_dof = rule.weights @ vals  # (nd,), reference integrals / |ref|
    load = np.zeros(space.num_dofs)
    np.add.at(load, space.element_dofs, areas[:, None] * per_dof[None, :])
    return load


def assemble_nitsche(
    space: FeSpace, alpha: float, g0: Callable[[np.ndarray], np.ndarray] | None = None
) -> NitscheOperators:
    """Boundary sum  sum_e (alpha/h_e) int_e |v - g0|^2 ds  as (P, r, s).

    Edge integrals use a Gauss rule of degree 2*q, exact for polynomial
    traces.  The 1/h_e prefactor cancels the edge measure of the rule.
    """
    if alpha <= 0.0:
        raise ValueError(f"penalty weight must be positive, got {alpha}")
    mesh = space.mesh
    erule = edge_rule(2 * space.degree)
    nd = space.element_dofs.shape[1]
    nb = mesh.boundary_edges.shape[0]

    a_idx = mesh.boundary_edges[:, 0]
    b_idx = mesh.boundary_edges[:, 1]
    parents = mesh.boundary_edges[:, 2]
    pa = mesh.vertices[a_idx]
    pb = mesh.vertices[b_idx]
    v0, jac, jinv, _ = _element_jacobians(mesh)

    local_p = np.zeros((nb, nd, nd))
    local_r = np.zeros((nb, nd))
    s_total = 0.0
    for sq, wq in zip(erule.points, erule.weights):
        x = pa + sq * (pb - pa)
        ref = np.einsum("tkd,td->tk", jinv[parents], x - v0[parents])
        vals, _ = reference_basis(space.degree, ref)
        local_p += (alpha * wq) * vals[:, :, None] * vals[:, None, :]
        if g0 is not None:
            g0v = np.asarray(g0(x), dtype=np.float64)
            local_r += (alpha * wq) * g0v[:, None] * vals
            s_total += alpha * wq * float(np.sum(g0v * g0v))

    dofs = space.element_dofs[parents]
    rows = np.repeat(dofs, nd, axis=1).ravel()
    cols = np.tile(dofs, (1, nd)).ravel()
    penalty = sp.coo_matrix(
        (local_p.ravel(), (rows, cols)), shape=(space.num_dofs, space.num_dofs)
    ).tocsr()
    rhs = np.zeros(space.num_dofs)
    np.add.at(rhs, dofs, local_r)
    return NitscheOperators(penalty=penalty, rhs=rhs, constant=s_total, alpha=alpha)


def assemble_operators(
    space: FeSpace, alpha: float, g0: Callable[[np.ndarray], np.ndarray] | None = None
) -> AssembledOperators:
    return AssembledOperators(
        space=space,
        stiffness=assemble_stiffness(space),
        load=assemble_load_lumped(space),
        nitsche=assemble_nitsche(space, alpha, g0),
    )


def fem_energy(
    ops: AssembledOperators,
    f_at_dofs: np.ndarray,
    g: NodalVector,
) -> tuple[float, NodalVector]:
    """E(g) = 1/2 g'Kg - sum_z f(z) g_z L[z] + (g'Pg - 2 g'r + s) and dE/dg.

    ``f_at_dofs`` holds the source evaluated at the dof coordinates; the
    gradient is K g - f.L + 2 (P g - r).
    """
    if g.shape != (ops.space.num_dofs,):
        raise ValueError("nodal vector length does not match space")
    if f_at_dofs.shape != g.shape:
        raise ValueError("f_at_dofs length does not match space")
    k_g = ops.stiffness @ g
    p_g = ops.nitsche.penalty @ g
    f_load = f_at_dofs * ops.load
    energy = (
        0.5 * float(g @ k_g)
        - float(f_load @ g)
        + float(g @ p_g)
        - 2.0 * float(g @ ops.nitsche.rhs)
        + ops.nitsche.constant
    )
    grad = k_g - f_load + 2.0 * (p_g - ops.nitsche.rhs)
    return energy, grad


def fem_energy_function(
    ops: AssembledOperators, f: Callable[[np.ndarray], np.ndarray], g: NodalVector
) -> tuple[float, NodalVector]:
    """Convenience wrapper evaluating f at the dof coordinates."""
    return fem_energy(ops, np.asarray(f(ops.space.dof_coords), dtype=np.float64), g)


def galerkin_solve(
    space: FeSpace,
    f: Callable[[np.ndarray], np.ndarray],
    alpha: float,
    g0: Callable[[np.ndarray], np.ndarray] | None = None,
    ops: AssembledOperators | None = None,
    rtol: float = 1e-10,
) -> NodalVector:
    """Exact minimiser of the nodal energy: solves (K + 2P) g = f.L + 2r by CG.

    This is the greatest lower bound of the assembled energy over any
    function class evaluated through its nodal values.
    """
    if ops is None:
        ops = assemble_operators(space, alpha, g0)
    system = (ops.stiffness + 2.0 * ops.nitsche.penalty).tocsr()
    rhs = np.asarray(f(space.dof_coords), dtype=np.float64) * ops.load + 2.0 * ops.nitsche.rhs
    maxiter = 10 * space.num_dofs
    solution, info = spla.cg(system, rhs, rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise RuntimeError(f"conjugate gradients did not converge within {maxiter} iterations (info={info})")
    return solution


def h1_norm(space: FeSpace, g: NodalVector, stiffness: sp.csr_matrix, mass: sp.csr_matrix) -> float:
    """Full H1 norm of the finite element function with nodal values g."""
    return float(np.sqrt(g @ (stiffness @ g) + g @ (mass @ g)))


def locate_triangle(mesh: Mesh, x: np.ndarray) -> int:
    """Containing triangle on the uniform lattice; diagonal ties go to the lower triangle."""
    if mesh.lattice_m is None:
        raise ValueError("point location requires a uniform lattice mesh")
    m = mesh.lattice_m
    if not (0.0 <= x[0] <= 1.0 and 0.0 <= x[1] <= 1.0):
        raise ValueError(f"point {tuple(x)} outside the unit square")
    i = min(int(x[0] * m), m - 1)
    j = min(int(x[1] * m), m - 1)
    xi = x[0] * m - i
    eta = x[1] * m - j
    cell = j * m + i
    return 2 * cell if eta <= xi else 2 * cell + 1


def evaluate_fem(space: FeSpace, g: NodalVector, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of the FE function at a point of the unit square."""
    x = np.asarray(x, dtype=np.float64)
    t = locate_triangle(space.mesh, x)
    p0 = space.mesh.vertices[space.mesh.triangles[t, 0]]
    p1 = space.mesh.vertices[space.mesh.triangles[t, 1]]
    p2 = space.mesh.vertices[space.mesh.triangles[t, 2]]
    jac = np.column_stack([p1 - p0, p2 - p0])
    ref = np.linalg.solve(jac, x - p0)
    vals, grads = reference_basis(space.degree, ref[None, :])
    coeff = g[space.element_dofs[t]]
    value = float(vals[0] @ coeff)
    gradient = np.linalg.solve(jac.T, grads[0].T @ coeff)
    return value, gradient


def export_operator(path: str, operator: sp.spmatrix) -> None:
    """Write a sparse operator in Matrix Market text format."""
    scipy.io.mmwrite(path, operator.tocoo())
