"""Reference-triangle and reference-segment quadrature.

Convention: rule weights sum to one and integrals are scaled by the element
measure, i.e. int_K f ~ |K| * sum_i w_i f(F_K(p_i)) on triangles and
int_e f ~ h_e * sum_i w_i f(gamma_e(s_i)) on edges.  With this convention
f == 1 integrates to |K| (resp. h_e), which makes the tables self-checking.

Triangle tables are the classical symmetric (Dunavant-type) rules with 1, 3,
4, 6 and 7 points for exactness degrees 1..5; the degree-3 rule carries one
negative weight.  Edge rules are Gauss-Legendre mapped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh, element_geometry

MAX_TRIANGLE_DEGREE = 5


@dataclass(frozen=True)
class QuadRule:
    degree: int
    points: np.ndarray  # (n, 2) reference-triangle coordinates
    weights: np.ndarray  # (n,), sums to 1


@dataclass(frozen=True)
class EdgeRule:
    degree: int
    points: np.ndarray  # (n,) in [0, 1]
    weights: np.ndarray  # (n,), sums to 1


_SQRT15 = math.sqrt(15.0)

# degree 4 orbit parameters (exact values are roots of a quartic in sqrt(10);
# 30-digit decimals, far below the 1e-12 exactness tolerance)
_D4_A1 = 0.0915762135097707434595714634022
_D4_W1 = 0.109951743655321867638326324900
_D4_A2 = 0.445948490915964886318329253883
_D4_W2 = 0.223381589678011465695007008433

_D5_A = (6.0 - _SQRT15) / 21.0
_D5_WA = (155.0 - _SQRT15) / 1200.0
_D5_B = (6.0 + _SQRT15) / 21.0
_D5_WB = (155.0 + _SQRT15) / 1200.0


def _orbit3(a: float) -> list[tuple[float, float]]:
    return [(a, a), (1.0 - 2.0 * a, a), (a, 1.0 - 2.0 * a)]


_TRIANGLE_TABLES: dict[int, tuple[list[tuple[float, float]], list[float]]] = {
    1: ([(1.0 / 3.0, 1.0 / 3.0)], [1.0]),
    2: ([(0.5, 0.0), (0.5, 0.5), (0.0, 0.5)], [1.0 / 3.0] * 3),
    3: (
        [(1.0 / 3.0, 1.0 / 3.0)] + _orbit3(0.2),
        [-9.0 / 16.0] + [25.0 / 48.0] * 3,
    ),
    4: (
        _orbit3(_D4_A1) + _orbit3(_D4_A2),
        [_D4_W1] * 3 + [_D4_W2] * 3,
    ),
    5: (
        [(1.0 / 3.0, 1.0 / 3.0)] + _orbit3(_D5_A) + _orbit3(_D5_B),
        [9.0 / 40.0] + [_D5_WA] * 3 + [_D5_WB] * 3,
    ),
}


def triangle_rule(degree: int) -> QuadRule:
    """Symmetric rule exact for all monomials of total degree <= ``degree``."""
    if degree not in _TRIANGLE_TABLES:
        raise ValueError(f"unsupported triangle rule degree {degree} (supported: 1..{MAX_TRIANGLE_DEGREE})")
    pts, wts = _TRIANGLE_TABLES[degree]
    return QuadRule(degree=degree, points=np.array(pts), weights=np.array(wts))


def edge_rule(degree: int) -> EdgeRule:
    """Gauss-Legendre rule on [0, 1] with ceil((degree+1)/2) points."""
    if degree < 1:
        raise ValueError(f"edge rule degree must be >= 1, got {degree}")
    n = (degree + 2) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    return EdgeRule(degree=degree, points=(x + 1.0) / 2.0, weights=w / 2.0)


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def map_points(mesh: Mesh, t: int, rule: QuadRule) -> np.ndarray:
    """Physical coordinates of the rule points on triangle t."""
    geo = element_geometry(mesh, t)
    return geo.v0[None, :] + rule.points @ geo.jacobian.T


def integrate_element(mesh: Mesh, t: int, rule: QuadRule, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """|K_t| * sum_i w_i f(F_t(p_i)); f maps (n,2) points to (n,) values."""
    geo = element_geometry(mesh, t)
    x = geo.v0[None, :] + rule.points @ geo.jacobian.T
    return float(geo.area * np.dot(rule.weights, np.asarray(f(x), dtype=np.float64)))


def integrate_edge(mesh: Mesh, e: int, rule: EdgeRule, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """h_e * sum_i w_i f(gamma_e(s_i)) over boundary edge index e."""
    a, b, _ = mesh.boundary_edges[e]
    pa = mesh.vertices[a]
    pb = mesh.vertices[b]
    h_e = float(np.linalg.norm(pb - pa))
    x = pa[None, :] + rule.points[:, None] * (pb - pa)[None, :]
    return float(h_e * np.dot(rule.weights, np.asarray(f(x), dtype=np.float64)))


def integrate_domain(mesh: Mesh, rule: QuadRule, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum of integrate_element over all triangles, vectorised over elements."""
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    v1 = mesh.vertices[mesh.triangles[:, 1]]
    v2 = mesh.vertices[mesh.triangles[:, 2]]
    d1 = v1 - v0
    d2 = v2 - v0
    areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    total = 0.0
    for (px, py), w in zip(rule.points, rule.weights):
        x = v0 + px * d1 + py * d2
        total += w * np.dot(areas, np.asarray(f(x), dtype=np.float64))
    return float(total)
