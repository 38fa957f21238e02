"""Conforming triangulations of the unit square.

Meshes are plain vertex/triangle/boundary-edge arrays.  The only builder is
the uniform criss-cross pattern (each lattice cell split along its
bottom-left -> top-right diagonal into 2*M^2 congruent triangles), which is
what assembly, quadrature and point location downstream rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DUPLICATE_TOL = 1e-12


@dataclass
class Mesh:
    """Triangle mesh: vertices (nv,2), triangles (nt,3) CCW, boundary edges.

    ``boundary_edges`` rows are (vertex a, vertex b, parent triangle).  For
    meshes produced by :func:`build_uniform_unit_square`, ``lattice_m`` holds
    the subdivision count M and enables O(1) point location.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    lattice_m: int | None = field(default=None)

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        if self.boundary_edges.ndim != 2 or self.boundary_edges.shape[1] != 3:
            raise ValueError("boundary_edges must have shape (nb, 3)")

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True)
class ElementGeometry:
    """Affine map data for one triangle: F(xhat) = jacobian @ xhat + v0."""

    area: float
    jacobian: np.ndarray
    v0: np.ndarray
    diameter: float
    edge_lengths: np.ndarray


def build_uniform_unit_square(m: int) -> Mesh:
    """Uniform mesh of [0,1]^2: (M+1)^2 lattice vertices, 2*M^2 triangles.

    Vertex numbering is row-major over the lattice (index = j*(M+1)+i for
    coordinate (i/M, j/M)); triangles are numbered cell-major with the lower
    triangle of each cell first.  Every cell is split along the bottom-left ->
    top-right diagonal, so meshes are reproducible bit-for-bit.
    """
    if m < 1:
        raise ValueError(f"mesh subdivision must be >= 1, got {m}")
    xs = np.linspace(0.0, 1.0, m + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    ii = ii.ravel()
    jj = jj.ravel()
    v00 = jj * (m + 1) + ii
    v10 = v00 + 1
    v01 = v00 + (m + 1)
    v11 = v01 + 1
    triangles = np.empty((2 * m * m, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])  # lower
    triangles[1::2] = np.column_stack([v00, v11, v01])  # upper

    def vid(i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return j * (m + 1) + i

    k = np.arange(m)
    zero = np.zeros(m, dtype=np.int64)
    last = np.full(m, m, dtype=np.int64)
    bottom = np.column_stack([vid(k, zero), vid(k + 1, zero), 2 * k])
    right = np.column_stack([vid(last, k), vid(last, k + 1), 2 * (k * m + m - 1)])
    top = np.column_stack([vid(k + 1, last), vid(k, last), 2 * ((m - 1) * m + k) + 1])
    left = np.column_stack([vid(zero, k + 1), vid(zero, k), 2 * (k * m) + 1])
    boundary_edges = np.vstack([bottom, right, top, left])

    mesh = Mesh(vertices, triangles, boundary_edges, lattice_m=m)
    check_mesh(mesh)
    return mesh


def signed_areas(mesh: Mesh) -> np.ndarray:
    """Signed area of every triangle (positive iff CCW)."""
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1 = mesh.vertices[mesh.triangles[:, 1]]
    p2 = mesh.vertices[mesh.triangles[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def check_mesh(mesh: Mesh) -> None:
    """Validate mesh invariants; raises ValueError on the first violation."""
    nv = mesh.num_vertices
    if mesh.triangles.min(initial=0) < 0 or mesh.triangles.max(initial=-1) >= nv:
        raise ValueError("triangle vertex index out of range")
    if np.any(signed_areas(mesh) <= 0.0):
        raise ValueError("triangle with non-positive signed area (wrong orientation or degenerate)")

    order = np.lexsort((mesh.vertices[:, 1], mesh.vertices[:, 0]))
    sv = mesh.vertices[order]
    close = np.all(np.abs(np.diff(sv, axis=0)) <= DUPLICATE_TOL, axis=1)
    if np.any(close):
        raise ValueError("duplicate vertices within tolerance")

    counts = _edge_counts(mesh)
    bad = (counts != 1) & (counts != 2)
    if np.any(bad):
        raise ValueError("edge shared by more than two triangles")
    edges, _ = _unique_edges(mesh)
    boundary = set(map(tuple, edges[counts == 1]))
    listed = {tuple(sorted(e[:2])) for e in mesh.boundary_edges}
    if boundary != listed:
        raise ValueError("boundary_edges do not match edges incident to exactly one triangle")
    for a, b, t in mesh.boundary_edges:
        if {a, b} - set(mesh.triangles[t]):
            raise ValueError(f"boundary edge ({a},{b}) not contained in parent triangle {t}")


def _unique_edges(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    t = mesh.triangles
    raw = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    raw.sort(axis=1)
    return np.unique(raw, axis=0, return_counts=False), raw


def _edge_counts(mesh: Mesh) -> np.ndarray:
    edges, raw = _unique_edges(mesh)
    keys = raw[:, 0] * mesh.num_vertices + raw[:, 1]
    ukeys = edges[:, 0] * mesh.num_vertices + edges[:, 1]
    return np.bincount(np.searchsorted(ukeys, keys), minlength=len(ukeys))


def element_geometry(mesh: Mesh, t: int) -> ElementGeometry:
    """Affine map of triangle t from the reference triangle (0,0),(1,0),(0,1)."""
    if not 0 <= t < mesh.num_triangles:
        raise IndexError(f"triangle index {t} out of range")
    p0, p1, p2 = mesh.vertices[mesh.triangles[t]]
    jac = np.column_stack([p1 - p0, p2 - p0])
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    area = 0.5 * abs(det)
    if area <= 0.0 or det <= 0.0:
        raise ValueError(f"triangle {t} is degenerate or not CCW")
    lengths = np.array(
        [
            np.linalg.norm(p1 - p0),
            np.linalg.norm(p2 - p1),
            np.linalg.norm(p0 - p2),
        ]
    )
    return ElementGeometry(
        area=area, jacobian=jac, v0=p0.copy(), diameter=float(lengths.max()), edge_lengths=lengths
    )


def element_areas(mesh: Mesh) -> np.ndarray:
    return signed_areas(mesh)


def mesh_quality(mesh: Mesh) -> tuple[float, float, float]:
    """(h_max, h_min, shape_ratio) over element diameters."""
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1 = mesh.vertices[mesh.triangles[:, 1]]
    p2 = mesh.vertices[mesh.triangles[:, 2]]
    l0 = np.linalg.norm(p1 - p0, axis=1)
    l1 = np.linalg.norm(p2 - p1, axis=1)
    l2 = np.linalg.norm(p0 - p2, axis=1)
    diam = np.maximum(np.maximum(l0, l1), l2)
    h_max = float(diam.max())
    h_min = float(diam.min())
    return h_max, h_min, h_max / h_min


def edge_length(mesh: Mesh, e: int) -> float:
    a, b, _ = mesh.boundary_edges[e]
    return float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a]))


def dump_mesh(mesh: Mesh) -> str:
    """Plain-text dump: 'v x y' / 't i j k' / 'b i j' lines (debug/golden use)."""
    lines = [f"v {x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"t {i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"b {a} {b}" for a, b, _ in mesh.boundary_edges]
    return "\n".join(lines) + "\n"
