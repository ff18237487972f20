import numpy as np
import pytest

from implicitgen.meshing import (
    PointCloud,
    TriangleMesh,
    export_obj,
    export_ply,
    import_obj,
    import_ply,
    is_watertight,
    marching_cubes,
    sample_surface,
)
from implicitgen.metrics import chamfer
from implicitgen.numerics import make_rng


def sphere_field(r=0.5, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center)

    def f(p):
        return np.linalg.norm(p - c, axis=1) - r

    return f


def test_constant_field_empty_mesh():
    mesh = marching_cubes(lambda p: np.ones(len(p)), resolution=16)
    assert mesh.is_empty


def test_sphere_vertices_on_surface_and_watertight():
    mesh = marching_cubes(sphere_field(), resolution=64,
                          bounds=((-1, -1, -1), (1, 1, 1)))
    r = np.linalg.norm(mesh.vertices, axis=1)
    cell_diag = np.sqrt(3) * 2.0 / 64
    assert np.max(np.abs(r - 0.5)) < cell_diag
    assert is_watertight(mesh)


def test_plane_field_exact():
    mesh = marching_cubes(lambda p: p[:, 2], resolution=16,
                          bounds=((-1, -1, -1), (1, 1, 1)))
    assert not mesh.is_empty
    assert np.max(np.abs(mesh.vertices[:, 2])) < 1e-6


def test_no_degenerate_triangles():
    mesh = marching_cubes(sphere_field(), resolution=32)
    assert np.all(mesh.areas() > 1e-12)


def test_resolution_floor():
    with pytest.raises(ValueError):
        marching_cubes(sphere_field(), resolution=4)


def test_nonfinite_field_rejected():
    with pytest.raises(ValueError, match="finite"):
        marching_cubes(lambda p: np.full(len(p), np.nan), resolution=16)


def test_refinement_monotone_chamfer():
    rng = make_rng(0)
    dirs = rng.normal(size=(2048, 3))
    ref = PointCloud(0.5 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True))
    cds = []
    for res in (32, 64, 128):
        mesh = marching_cubes(sphere_field(), resolution=res)
        cloud = sample_surface(mesh, 2048, make_rng(1))
        cds.append(chamfer(cloud, ref))
    assert cds[1] <= cds[0] * 1.1
    assert cds[2] <= cds[1] * 1.1


def test_translation_consistency():
    # translating both the field and the grid bounds by w translates every
    # vertex by exactly w (the grid stays aligned with the field)
    w = np.array([0.07, -0.03, 0.11])
    a = marching_cubes(sphere_field(), resolution=32,
                       bounds=((-1, -1, -1), (1, 1, 1)))
    b = marching_cubes(sphere_field(center=w), resolution=32,
                       bounds=(w - 1, w + 1))
    assert len(a.vertices) == len(b.vertices)
    assert np.max(np.abs(b.vertices - w - a.vertices)) < 1e-6


# --- surface sampling -------------------------------------------------------


def test_single_triangle_containment():
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float),
                        np.array([[0, 1, 2]]))
    pts = sample_surface(mesh, 5000, make_rng(2)).points
    assert np.all(pts[:, 2] == 0)
    assert np.all(pts[:, 0] >= -1e-12) and np.all(pts[:, 1] >= -1e-12)
    assert np.all(pts[:, 0] + pts[:, 1] <= 1 + 1e-12)


def test_area_weighted_selection():
    # two coplanar triangles with areas 0.5 and 1.5 (ratio 1:3)
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [0, 3, 1]],
                     float)
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
    pts = sample_surface(mesh, 100_000, make_rng(3)).points
    frac_second = np.mean(pts[:, 2] > 0.5)
    assert abs(frac_second - 0.75) < 0.03


def test_icosphere_sample_radius():
    from implicitgen.shapes import icosphere

    v, f = icosphere(0.5, subdivisions=4)
    mesh = TriangleMesh(v, f)
    pts = sample_surface(mesh, 100_000, make_rng(4)).points
    assert abs(np.mean(np.linalg.norm(pts, axis=1)) - 0.5) < 1e-3


def test_sample_empty_mesh_rejected():
    mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    with pytest.raises(ValueError):
        sample_surface(mesh, 10, make_rng(0))


# --- OBJ / PLY round trips ---------------------------------------------------


def test_obj_minimal_triangle():
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float),
                        np.array([[0, 1, 2]]))
    text = export_obj(mesh).decode()
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    assert sum(l.startswith("v ") for l in lines) == 3
    assert lines[-1] == "f 1 2 3"


def test_obj_round_trip_sphere():
    mesh = marching_cubes(sphere_field(), resolution=64)
    back = import_obj(export_obj(mesh))
    assert len(back.triangles) == len(mesh.triangles)
    assert np.max(np.abs(back.vertices - mesh.vertices)) < 1e-8
    assert np.array_equal(back.triangles, mesh.triangles)


def test_obj_empty_mesh():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    back = import_obj(export_obj(empty))
    assert back.is_empty


def test_ply_round_trip():
    cloud = PointCloud(make_rng(5).normal(size=(100, 3)))
    back = import_ply(export_ply(cloud))
    assert np.max(np.abs(back.points - cloud.points)) < 1e-8


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.inf, 0.0]]))


def test_triangle_index_bounds_checked():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))
