import numpy as np
import pytest

from implicitgen.meshing import marching_cubes
from implicitgen.numerics import make_rng
from implicitgen.shapes import (
    TAG_UNIFORM,
    SampleBank,
    ShapeSpec,
    analytic_sdf,
    balanced_batch,
    box_mesh,
    icosphere,
    load_bank,
    mesh_sdf,
    nonmanifold_edges,
    procedural_family,
    sample_bank,
    save_bank,
)


def test_sphere_distance_outside():
    s = ShapeSpec("sphere", (0.5,))
    assert analytic_sdf(s, np.array([0.0, 0.0, 1.0])) == pytest.approx(0.5)


def test_sphere_distance_center():
    s = ShapeSpec("sphere", (0.5,))
    assert analytic_sdf(s, np.array([0.0, 0.0, 0.0])) == pytest.approx(-0.5)


def test_box_corner_distance():
    s = ShapeSpec("box", (0.3, 0.3, 0.3))
    d = analytic_sdf(s, np.array([0.4, 0.4, 0.4]))
    assert d == pytest.approx(np.sqrt(3) * 0.1, abs=1e-12)


def test_torus_axis_distance():
    s = ShapeSpec("torus", (0.5, 0.1))
    # on the ring plane at the tube center circle the distance is -minor
    assert analytic_sdf(s, np.array([0.5, 0.0, 0.0])) == pytest.approx(-0.1)
    # at the origin: distance to tube = major - minor
    assert analytic_sdf(s, np.array([0.0, 0.0, 0.0])) == pytest.approx(0.4)


def test_pose_is_rigid():
    base = ShapeSpec("box", (0.2, 0.3, 0.4))
    posed = ShapeSpec("box", (0.2, 0.3, 0.4), rotation=(0.3, -0.2, 1.1),
                      translation=(0.1, -0.05, 0.2))
    rng = make_rng(0)
    p = rng.uniform(-1, 1, size=(200, 3))
    R = posed.rotation_matrix()
    local = (p - np.array(posed.translation)) @ R
    assert np.allclose(analytic_sdf(posed, p), analytic_sdf(base, local), atol=1e-12)


def test_union_is_min_of_members():
    a = ShapeSpec("sphere", (0.3,), translation=(0.4, 0, 0))
    b = ShapeSpec("sphere", (0.3,), translation=(-0.4, 0, 0))
    u = ShapeSpec("union", (), members=(a, b))
    rng = make_rng(1)
    p = rng.uniform(-1, 1, size=(100, 3))
    expected = np.minimum(analytic_sdf(a, p), analytic_sdf(b, p))
    assert np.allclose(analytic_sdf(u, p), expected)


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        ShapeSpec("dodecahedron", (0.5,))
    with pytest.raises(ValueError):
        ShapeSpec("sphere", (-0.5,))
    with pytest.raises(ValueError):
        ShapeSpec("union", ())


def test_spec_round_trip():
    a = ShapeSpec("sphere", (0.3,), translation=(0.4, 0, 0))
    u = ShapeSpec("union", (), rotation=(0.1, 0.2, 0.3), members=(a,))
    assert ShapeSpec.from_dict(u.to_dict()) == u


# --- mesh SDF -------------------------------------------------------------


def test_mesh_sdf_icosphere_outside_point():
    v, f = icosphere(0.5, subdivisions=4)  # 2562 vertices
    assert v.shape[0] == 2562
    d = mesh_sdf(v, f, np.array([0.0, 0.0, 0.75]))
    assert d == pytest.approx(0.25, abs=2e-3)


def test_mesh_sdf_vertex_is_zero():
    v, f = icosphere(0.5, subdivisions=2)
    assert mesh_sdf(v, f, v[17]) == pytest.approx(0.0, abs=1e-12)


def test_mesh_sdf_cube_center():
    v, f = box_mesh(0.3, 0.3, 0.3)
    assert mesh_sdf(v, f, np.array([0.0, 0.0, 0.0])) == pytest.approx(-0.3, abs=1e-9)


def test_mesh_sdf_rejects_open_mesh():
    v, f = icosphere(0.5, subdivisions=1)
    open_f = f[:-3]
    with pytest.raises(ValueError, match="watertight"):
        mesh_sdf(v, open_f, np.zeros(3))
    assert len(nonmanifold_edges(open_f)) > 0


def test_mesh_sdf_refinement_halves_error():
    rng = make_rng(2)
    p = rng.uniform(-0.9, 0.9, size=(1000, 3))
    errs = []
    for sub in (2, 3):  # triangle count quadruples per subdivision
        v, f = icosphere(0.5, subdivisions=sub)
        d = mesh_sdf(v, f, p)
        ref = np.linalg.norm(p, axis=1) - 0.5
        errs.append(np.max(np.abs(d - ref)))
    ratio = errs[1] / errs[0]
    # faceting error is O(h^2): quadrupling triangles should quarter it, so
    # the spec's halving bound holds with margin
    assert ratio < 0.5 * 1.2


# --- sample banks ----------------------------------------------------------


@pytest.fixture(scope="module")
def sphere_bank():
    return sample_bank(ShapeSpec("sphere", (0.5,)), 10_000, make_rng(3))


def test_bank_uniform_fraction(sphere_bank):
    n_uni = int(np.sum(sphere_bank.tags == TAG_UNIFORM))
    assert n_uni == 500


def test_bank_surface_tail_bound(sphere_bank):
    surf = sphere_bank.distances[sphere_bank.tags != TAG_UNIFORM]
    frac = np.mean(np.abs(surf) <= 5 * np.sqrt(2.5e-3))
    assert frac >= 0.999


def test_bank_signs_match_analytic(sphere_bank):
    spec = ShapeSpec("sphere", (0.5,))
    ref = analytic_sdf(spec, sphere_bank.points.astype(np.float64))
    assert np.all(np.sign(sphere_bank.distances) == np.sign(ref).astype(np.float32))


def test_bank_determinism():
    spec = ShapeSpec("torus", (0.5, 0.15))
    a = sample_bank(spec, 500, make_rng(7))
    b = sample_bank(spec, 500, make_rng(7))
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.distances, b.distances)
    assert np.array_equal(a.tags, b.tags)


def test_bank_minimum_size():
    with pytest.raises(ValueError):
        sample_bank(ShapeSpec("sphere", (0.5,)), 99, make_rng(0))


def test_balanced_batch_counts(sphere_bank):
    pts, d, flag = balanced_batch(sphere_bank, 128, make_rng(4))
    assert pts.shape == (128, 3) and d.shape == (128,)
    assert not flag
    assert abs(int(np.sum(d >= 0)) - int(np.sum(d < 0))) <= 1


def test_balanced_batch_k2(sphere_bank):
    _, d, flag = balanced_batch(sphere_bank, 2, make_rng(5))
    assert not flag and int(np.sum(d >= 0)) == 1


def test_balanced_batch_one_sided():
    bank = SampleBank(points=np.zeros((10, 3), np.float32),
                      distances=np.full(10, 0.2, np.float32),
                      tags=np.zeros(10, np.uint8))
    pts, d, flag = balanced_batch(bank, 6, make_rng(6))
    assert flag and len(d) == 6 and np.all(d > 0)


def test_balanced_batch_without_replacement(sphere_bank):
    # draw the whole bank: every index must appear exactly once
    pts, d, _ = balanced_batch(sphere_bank, len(sphere_bank), make_rng(8))
    assert len(np.unique(pts, axis=0)) == len(sphere_bank)


def test_balanced_batch_empty():
    bank = SampleBank(points=np.zeros((0, 3), np.float32),
                      distances=np.zeros(0, np.float32),
                      tags=np.zeros(0, np.uint8))
    with pytest.raises(ValueError):
        balanced_batch(bank, 4, make_rng(0))


def test_bank_round_trip(tmp_path, sphere_bank):
    path = tmp_path / "bank.sdfb"
    save_bank(sphere_bank, path)
    back = load_bank(path)
    assert np.array_equal(back.points, sphere_bank.points)
    assert np.array_equal(back.distances, sphere_bank.distances)
    assert np.array_equal(back.tags, sphere_bank.tags)
    assert back.shape_id == sphere_bank.shape_id


def test_bank_corruption_detected(tmp_path, sphere_bank):
    path = tmp_path / "bank.sdfb"
    save_bank(sphere_bank, path)
    data = bytearray(path.read_bytes())
    data[100] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="checksum"):
        load_bank(path)


def test_analytic_sdf_matches_extracted_surface():
    # |sdf(p)| must equal the distance from p to the marching-cubes surface
    # within 1.5 grid cells
    spec = ShapeSpec("torus", (0.5, 0.15))
    res = 64
    from implicitgen.meshing import sample_surface
    from implicitgen.shapes import BOUNDS_MAX, BOUNDS_MIN

    mesh = marching_cubes(lambda q: analytic_sdf(spec, q), resolution=res)
    cloud = sample_surface(mesh, 20000, make_rng(9))
    rng = make_rng(10)
    p = rng.uniform(-0.9, 0.9, size=(200, 3))
    d_surface = np.min(
        np.linalg.norm(p[:, None, :] - cloud.points[None, :, :], axis=2), axis=1
    )
    cell = (BOUNDS_MAX - BOUNDS_MIN) / res
    assert np.max(np.abs(np.abs(analytic_sdf(spec, p)) - d_surface)) < 1.5 * cell


def test_procedural_family_inside_unit_ball():
    fam = procedural_family(12, make_rng(11))
    assert len(fam) == 12
    rng = make_rng(12)
    dirs = rng.normal(size=(2000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for spec, desc in fam:
        assert desc.shape == (6,) and np.isclose(desc[:3].sum(), 1.0)
        # the unit sphere is entirely outside every family shape
        assert np.all(analytic_sdf(spec, dirs) > 0)
