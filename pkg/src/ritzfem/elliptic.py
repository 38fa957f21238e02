"""Variable-coefficient self-adjoint elliptic forms.

The bilinear form  B(u,v) = int ( grad(u)' a(x) grad(v) + c(x) u v )  is
approximated per element by a triangle rule, giving the discrete form B_h
used inside the generalised nodal energy  1/2 B_h(Ig, Ig) - int I(f g).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import (
    AssembledOperators,
    FeSpace,
    NitscheOperators,
    NodalVector,
    _element_jacobians,
    _scatter,
    assemble_mass,
    assemble_stiffness,
    reference_basis,
)
from .quadrature import triangle_rule


@dataclass
class EllipticCoefficients:
    """Coefficients of  L u = -div(a grad u) + c u  with ellipticity bounds.

    ``a`` maps (n, 2) points to (n, 2, 2) symmetric matrices, ``c`` maps them
    to (n,) values; ``theta_ell`` is a lower bound for the matrix ellipticity
    and ``c_min`` for c (0 is allowed so the pure Laplacian fits the model).
    """

    a: Callable[[np.ndarray], np.ndarray]
    c: Callable[[np.ndarray], np.ndarray]
    theta_ell: float
    c_min: float

    def __post_init__(self) -> None:
        if self.theta_ell <= 0.0:
            raise ValueError("ellipticity constant must be positive")
        if self.c_min < 0.0:
            raise ValueError("zero-order coefficient bound must be nonnegative")

    def spot_check(self, trials: int = 200, seed: int = 0, tol: float = 1e-10) -> None:
        """Sample symmetry, ellipticity and the lower bound on c at random points."""
        rng = np.random.default_rng(seed)
        x = rng.random((trials, 2))
        av = np.asarray(self.a(x), dtype=np.float64)
        if av.shape != (trials, 2, 2):
            raise ValueError("matrix coefficient must return (n, 2, 2) arrays")
        if np.max(np.abs(av - np.swapaxes(av, 1, 2))) > tol:
            raise ValueError("matrix coefficient is not symmetric")
        xi = rng.standard_normal((trials, 2))
        quad = np.einsum("ni,nij,nj->n", xi, av, xi)
        norms = np.sum(xi * xi, axis=1)
        if np.min(quad - self.theta_ell * norms) < -tol:
            raise ValueError("ellipticity bound violated at a sampled point")
        cv = np.asarray(self.c(x), dtype=np.float64)
        if np.min(cv - self.c_min) < -tol:
            raise ValueError("lower bound on c violated at a sampled point")


def constant_coefficients(a_scale: float = 1.0, c_value: float = 0.0) -> EllipticCoefficients:
    ident = np.eye(2)
    return EllipticCoefficients(
        a=lambda x: np.broadcast_to(a_scale * ident, (len(x), 2, 2)),
        c=lambda x: np.full(len(x), c_value),
        theta_ell=a_scale,
        c_min=c_value,
    )


def assemble_b_h(space: FeSpace, coeffs: EllipticCoefficients, quad_degree: int) -> sp.csr_matrix:
    """B_h[z,w] = sum_K |K| sum_i w_i [grad(Phi_z)' a grad(Phi_w) + c Phi_z Phi_w](x_i)."""
    if quad_degree < 2 * (space.degree - 1):
        raise ValueError(
            f"quadrature degree {quad_degree} too low for the gradient term of degree {2 * (space.degree - 1)}"
        )
    rule = triangle_rule(max(quad_degree, 1))
    v0, jac, jinv, areas = _element_jacobians(space.mesh)
    vals, ref_grads = reference_basis(space.degree, rule.points)
    nd = space.element_dofs.shape[1]
    local = np.zeros((space.mesh.num_triangles, nd, nd))
    for p, w in enumerate(rule.weights):
        x = v0 + np.einsum("tdk,k->td", jac, rule.points[p])
        a_x = np.asarray(coeffs.a(x), dtype=np.float64)
        c_x = np.asarray(coeffs.c(x), dtype=np.float64)
        phys = np.einsum("ad,tdk->tak", ref_grads[p], jinv)
        local += w * np.einsum("tak,tkl,tbl->tab", phys, a_x, phys)
        local += w * c_x[:, None, None] * (vals[p][:, None] * vals[p][None, :])
    local *= areas[:, None, None]
    return _scatter(space, local)


def coercivity_probe(
    b_h: sp.csr_matrix, space: FeSpace, trials: int = 100, seed: int = 0
) -> float:
    """min over random v of v'B_h v / v'Gv with G the H1 Gram matrix K + M."""
    gram = assemble_stiffness(space) + assemble_mass(space)
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(trials):
        v = rng.standard_normal(space.num_dofs)
        ratio = float(v @ (b_h @ v)) / float(v @ (gram @ v))
        best = min(best, ratio)
    return best


def general_energy(
    space: FeSpace,
    b_h: sp.csr_matrix,
    load: np.ndarray,
    f_at_dofs: np.ndarray,
    g: NodalVector,
    nitsche: NitscheOperators | None = None,
) -> tuple[float, NodalVector]:
    """E = 1/2 g'B_h g - sum_z f(z) g_z L[z] (+ boundary penalty) and dE/dg."""
    if g.shape != (space.num_dofs,):
        raise ValueError("nodal vector length does not match space")
    b_g = b_h @ g
    f_load = f_at_dofs * load
    energy = 0.5 * float(g @ b_g) - float(f_load @ g)
    grad = b_g - f_load
    if nitsche is not None:
        p_g = nitsche.penalty @ g
        energy += float(g @ p_g) - 2.0 * float(g @ nitsche.rhs) + nitsche.constant
        grad = grad + 2.0 * (p_g - nitsche.rhs)
    return energy, grad


def general_operators(
    space: FeSpace,
    coeffs: EllipticCoefficients,
    quad_degree: int,
    load: np.ndarray,
    nitsche: NitscheOperators | None = None,
) -> AssembledOperators:
    """Bundle B_h in place of the Laplacian stiffness for the training loop."""
    b_h = assemble_b_h(space, coeffs, quad_degree)
    if nitsche is None:
        raise ValueError("general_operators requires assembled boundary operators")
    return AssembledOperators(space=space, stiffness=b_h, load=load, nitsche=nitsche)
