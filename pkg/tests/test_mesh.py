import math

import numpy as np
import pytest

from ritzfem.mesh import (
    Mesh,
    build_uniform_unit_square,
    check_mesh,
    dump_mesh,
    element_areas,
    element_geometry,
    mesh_quality,
    signed_areas,
)


def test_smallest_mesh_counts():
    mesh = build_uniform_unit_square(1)
    assert mesh.num_vertices == 4
    assert mesh.num_triangles == 2
    assert len(mesh.boundary_edges) == 4


def test_m5_triangle_count():
    assert build_uniform_unit_square(5).num_triangles == 50


def test_m20_counts_and_hmax():
    mesh = build_uniform_unit_square(20)
    assert mesh.num_vertices == 441
    assert mesh.num_triangles == 800
    assert len(mesh.boundary_edges) == 80
    h_max, _, _ = mesh_quality(mesh)
    assert h_max == pytest.approx(math.sqrt(2.0) / 20.0, abs=1e-15)


def test_m40_hmax():
    h_max, _, _ = mesh_quality(build_uniform_unit_square(40))
    assert h_max == pytest.approx(math.sqrt(2.0) / 40.0, abs=1e-15)


def test_rejects_zero_subdivision():
    with pytest.raises(ValueError):
        build_uniform_unit_square(0)


@pytest.mark.parametrize("m", [1, 3, 10, 27])
def test_areas_sum_to_one(m):
    mesh = build_uniform_unit_square(m)
    assert abs(element_areas(mesh).sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("m", [2, 7, 12])
def test_euler_relation(m):
    mesh = build_uniform_unit_square(m)
    tris = mesh.triangles
    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    assert mesh.num_vertices - len(edges) + mesh.num_triangles == 1


@pytest.mark.parametrize("m", [1, 4, 9])
def test_boundary_edges_lie_on_boundary(m):
    mesh = build_uniform_unit_square(m)
    for a, b, _ in mesh.boundary_edges:
        for v in (mesh.vertices[a], mesh.vertices[b]):
            assert min(v[0], v[1], 1.0 - v[0], 1.0 - v[1]) == 0.0


def test_orientation_all_ccw():
    assert np.all(signed_areas(build_uniform_unit_square(6)) > 0)


def test_element_geometry_reference_like_triangle():
    mesh = Mesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),
        boundary_edges=np.array([[0, 1, 0], [1, 2, 0], [2, 0, 0]]),
    )
    geo = element_geometry(mesh, 0)
    assert geo.area == pytest.approx(0.5)
    assert geo.diameter == pytest.approx(math.sqrt(2.0))
    assert np.allclose(geo.jacobian, np.eye(2))


@pytest.mark.parametrize("m", [2, 5])
def test_cell_triangle_areas(m):
    mesh = build_uniform_unit_square(m)
    for t in range(mesh.num_triangles):
        assert element_geometry(mesh, t).area == pytest.approx(1.0 / (2 * m * m))


def test_degenerate_triangle_rejected():
    mesh = Mesh(
        vertices=np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),  # collinear
        boundary_edges=np.zeros((0, 3), dtype=np.int64),
    )
    with pytest.raises(ValueError):
        element_geometry(mesh, 0)


def test_element_geometry_index_range():
    mesh = build_uniform_unit_square(2)
    with pytest.raises(IndexError):
        element_geometry(mesh, mesh.num_triangles)


def test_uniform_mesh_quality():
    h_max, h_min, ratio = mesh_quality(build_uniform_unit_square(13))
    assert ratio == pytest.approx(1.0, abs=1e-12)
    assert h_max == pytest.approx(h_min)


def test_single_triangle_quality():
    mesh = Mesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),
        boundary_edges=np.array([[0, 1, 0], [1, 2, 0], [2, 0, 0]]),
    )
    h_max, h_min, ratio = mesh_quality(mesh)
    assert h_max == h_min
    assert ratio == 1.0


def test_check_mesh_catches_duplicate_vertices():
    mesh = Mesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0 + 1e-14], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 3], [1, 2, 3]]),
        boundary_edges=np.array([[0, 1, 0], [1, 2, 1], [2, 3, 1], [3, 0, 0]]),
    )
    with pytest.raises(ValueError, match="duplicate"):
        check_mesh(mesh)


def test_builder_is_deterministic():
    a = build_uniform_unit_square(8)
    b = build_uniform_unit_square(8)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)
    assert np.array_equal(a.boundary_edges, b.boundary_edges)


def test_dump_format():
    text = dump_mesh(build_uniform_unit_square(1))
    lines = text.strip().split("\n")
    assert lines[0] == "v 0 0"
    kinds = [ln[0] for ln in lines]
    assert kinds.count("v") == 4
    assert kinds.count("t") == 2
    assert kinds.count("b") == 4
    # triangle lines carry three indices, diagonal fixed bottom-left -> top-right
    assert lines[4] == "t 0 1 3"
    assert lines[5] == "t 0 3 2"
