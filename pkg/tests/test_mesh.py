import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gak.assets import bending_cylinder_sequence, cylinder, icosphere, torus
from gak.bvh import build_bvh, query_bruteforce
from gak.errors import InvalidInputError, MalformedFileError, ValidationError
from gak.mesh import (AnchorSet, LocalCoords, TriMesh, anchor_positions, build_spatial_index,
                      closest_point_local_coords, closest_point_local_coords_bruteforce, load_anchors,
                      load_mesh, local_to_world, repose, sample_surface, save_anchors, save_mesh)

from conftest import random_rotation
from oracles import barycentric, closest_point_triangle_np

TRI = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def bumpy_mesh(seed=0, sub=2):
    """Non-convex closed mesh: icosphere with radially jittered vertices."""
    m = icosphere(sub)
    r = 1 + 0.15 * np.random.default_rng(seed).random(len(m.vertices))
    return m.with_vertices(m.vertices * r[:, None])


# ---------------------------------------------------------------- loading


def test_right_triangle_obj(tmp_path):
    m = load_mesh(write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.n_faces == 1
    assert m.total_area() == pytest.approx(0.5)
    assert np.all(m.face_labels == 0)


def test_obj_slash_tokens_and_negative_indices(tmp_path):
    m = load_mesh(write(tmp_path, "t.obj", "# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3//1 -2//1 -1//1\n"))
    assert m.faces.tolist() == [[0, 1, 2]]


def test_out_of_range_face_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_mesh(write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n"))


def test_parse_error_names_line(tmp_path):
    with pytest.raises(MalformedFileError, match="line 2"):
        load_mesh(write(tmp_path, "t.obj", "v 0 0 0\nv 1 zero 0\nv 0 1 0\nf 1 2 3\n"))


def test_degenerate_face_named(tmp_path):
    with pytest.raises(ValidationError, match="face 1"):
        load_mesh(write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n"))


def test_label_sidecar_round_trip(tmp_path):
    m = cylinder()
    save_mesh(m, tmp_path / "c.obj")
    back = load_mesh(tmp_path / "c.obj")
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_array_equal(back.face_labels, m.face_labels)
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-12)


def test_label_count_mismatch(tmp_path):
    p = write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    write(tmp_path, "t.labels.txt", "1\n2\n")
    with pytest.raises(ValidationError):
        load_mesh(p)


def test_icosphere_area_matches_independent_sum():
    m = icosphere(2)
    assert m.n_faces == 320
    v = m.vertices[m.faces]
    area = sum(0.5 * np.linalg.norm(np.cross(b - a, c - a)) for a, b, c in v)
    assert m.total_area() == pytest.approx(area, rel=1e-12)
    # inscribed polyhedron: slightly under the sphere, within a few percent
    assert 0.97 * 4 * np.pi < area < 4 * np.pi


def test_fixture_meshes_outward():
    for m in (icosphere(2), torus(), cylinder()):
        vol = np.einsum("ij,ij->i", m.vertices[m.faces[:, 0]],
                        np.cross(m.vertices[m.faces[:, 1]], m.vertices[m.faces[:, 2]])).sum() / 6
        assert vol > 0


# --------------------------------------------------------------- sampling


def test_single_face_sampling():
    a = sample_surface(TRI, 10, seed=0)
    assert np.all(a.faces == 0)
    a.check()


def test_two_face_area_ratio():
    m = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [5, 0, 0], [2, 1, 0]]),
                np.array([[0, 1, 2], [3, 4, 5]]))
    # face 0 area 0.5, face 1 area 1.5 -> 1:3
    assert m.face_areas()[1] / m.face_areas()[0] == pytest.approx(3.0)
    a = sample_surface(m, 100_000, seed=1)
    assert 0.74 <= np.mean(a.faces == 1) <= 0.76


def test_sampling_chi_square():
    m = bumpy_mesh()
    n = 100_000
    a = sample_surface(m, n, seed=3)
    counts = np.bincount(a.faces, minlength=m.n_faces)
    expected = m.face_areas() / m.total_area() * n
    assert stats.chisquare(counts, expected).pvalue > 0.001


def test_sampling_deterministic_and_valid():
    m = icosphere(2)
    a, b = sample_surface(m, 1000, seed=5), sample_surface(m, 1000, seed=5)
    np.testing.assert_array_equal(a.faces, b.faces)
    np.testing.assert_array_equal(a.bary, b.bary)
    a.check()


def test_sample_count_precondition():
    with pytest.raises(InvalidInputError):
        sample_surface(TRI, 0)


def test_anchor_file_round_trip(tmp_path):
    a = sample_surface(icosphere(1), 50, seed=2)
    save_anchors(a, tmp_path / "a.anch")
    raw = (tmp_path / "a.anch").read_bytes()
    assert raw[:4] == b"ANCH" and len(raw) == 16 + 50 * 16
    b = load_anchors(tmp_path / "a.anch")
    np.testing.assert_array_equal(b.faces, a.faces)
    np.testing.assert_allclose(b.bary, a.bary, atol=1e-7)


# ----------------------------------------------------------- closest point


def test_vertex_query():
    c = closest_point_local_coords(TRI, [[0.0, 0, 0]])
    assert c.faces[0] == 0
    np.testing.assert_allclose(c.bary[0], [1, 0, 0], atol=1e-15)
    assert c.offset[0] == 0.0


def test_centroid_offset_query():
    c = closest_point_local_coords(TRI, [[1 / 3, 1 / 3, 0.02]])
    np.testing.assert_allclose(c.bary[0], [1 / 3] * 3, atol=1e-12)
    assert c.offset[0] == pytest.approx(0.02, abs=1e-15)


def test_empty_mesh_rejected():
    m = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(InvalidInputError):
        closest_point_local_coords(m, [[0.0, 0, 0]])


def test_against_numpy_oracle():
    m = bumpy_mesh(1, 2)
    rng = np.random.default_rng(0)
    lo, hi = m.vertices.min(0), m.vertices.max(0)
    pts = rng.uniform(lo, hi, (200, 3))
    c = closest_point_local_coords(m, pts, clamp=None)
    tri = m.triangles()
    for p, f, lam in zip(pts, c.faces, c.bary):
        best = min(closest_point_triangle_np(p, *tri[g])[1] for g in range(m.n_faces))
        q, d2 = closest_point_triangle_np(p, *tri[f])
        assert d2 == pytest.approx(best, rel=1e-9, abs=1e-14)
        np.testing.assert_allclose(lam, barycentric(q, *tri[f]), atol=1e-7)


def test_500_face_mesh_vs_exhaustive():
    m = icosphere(3)
    m = m.with_vertices(m.vertices * (1 + 0.1 * np.sin(5 * m.vertices[:, :1])))
    keep = m.faces[:500]
    m = TriMesh(m.vertices, keep)
    rng = np.random.default_rng(1)
    pts = rng.uniform(m.vertices[keep].reshape(-1, 3).min(0), m.vertices[keep].reshape(-1, 3).max(0), (1000, 3))
    a = closest_point_local_coords(m, pts)
    b = closest_point_local_coords_bruteforce(m, pts)
    np.testing.assert_array_equal(a.faces, b.faces)
    np.testing.assert_allclose(a.bary, b.bary, atol=1e-7)
    np.testing.assert_allclose(a.offset, b.offset, atol=1e-7)


def test_index_matches_bruteforce_10k_faces():
    m = icosphere(5)  # 20480 faces
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.3, 1.3, (1000, 3))
    f_idx, _ = build_spatial_index(m).query(pts)
    f_bf, _ = query_bruteforce(m.triangles(), pts)
    np.testing.assert_array_equal(f_idx, f_bf)


def test_one_face_index():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    f, _ = build_bvh(TRI.triangles()).query(pts)
    assert np.all(f == 0)


def test_index_rebuild_after_deformation():
    m = icosphere(2)
    moved = m.with_vertices(m.vertices + [5.0, 0, 0])
    p = np.array([[6.2, 0.0, 0.0]])
    assert closest_point_local_coords(moved, p, clamp=None).offset[0] == pytest.approx(
        closest_point_local_coords(m, p - [5.0, 0, 0], clamp=None).offset[0], abs=1e-12)


def test_tie_goes_to_lowest_face():
    # two coincident-edge faces; a point equidistant from both
    m = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0]]), np.array([[0, 1, 2], [0, 3, 1]]))
    c = closest_point_local_coords(m, [[0.5, 0.0, 0.3]])
    assert c.faces[0] == 0


def test_offset_clamped():
    c = closest_point_local_coords(TRI, [[0.2, 0.2, 0.5]], clamp=0.1)
    assert c.offset[0] == 0.1
    c = closest_point_local_coords(TRI, [[0.2, 0.2, -0.5]], clamp=0.1)
    assert c.offset[0] == -0.1


@given(st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)),
                min_size=1, max_size=30))
def test_barycentric_validity(points):
    c = closest_point_local_coords(bumpy_mesh(), np.array(points))
    c.check()


# ------------------------------------------------------------ reconstruction


def test_local_to_world_vertex():
    m = icosphere(1)
    c = LocalCoords([7], [[1.0, 0, 0]], [0.0])
    np.testing.assert_array_equal(local_to_world(m, c)[0], m.vertices[m.faces[7, 0]])


def test_local_to_world_bad_face():
    with pytest.raises(InvalidInputError):
        local_to_world(TRI, LocalCoords([3], [[1.0, 0, 0]], [0.0]))


@given(st.integers(0, 10_000))
def test_round_trip_interior_feet(seed):
    m = icosphere(2)
    rng = np.random.default_rng(seed)
    a = sample_surface(m, 20, seed=seed)
    # keep feet clear of triangle edges so the nearest face is unambiguous
    a.bary = 0.1 + 0.7 * a.bary
    a.bary /= a.bary.sum(1, keepdims=True)
    c = LocalCoords(a.faces, a.bary, rng.uniform(-0.02, 0.02, 20))
    p = local_to_world(m, c)
    back = closest_point_local_coords(m, p)
    np.testing.assert_array_equal(back.faces, c.faces)
    np.testing.assert_allclose(local_to_world(m, back), p, atol=1e-9)


@given(st.integers(0, 2 ** 31))
def test_rigid_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = bumpy_mesh(2, 1)
    R, t = random_rotation(rng), rng.normal(size=3)
    pts = rng.uniform(-1.2, 1.2, (50, 3))
    a = closest_point_local_coords(m, pts)
    b = closest_point_local_coords(m.transformed(R, t), pts @ R.T + t)
    np.testing.assert_array_equal(a.faces, b.faces)
    np.testing.assert_allclose(a.bary, b.bary, atol=1e-9)
    np.testing.assert_allclose(a.offset, b.offset, atol=1e-7)


def test_rigid_motion_of_reconstruction(rng):
    m = icosphere(2)
    a = sample_surface(m, 100, seed=0)
    c = LocalCoords(a.faces, a.bary, rng.uniform(-0.1, 0.1, 100))
    R, t = random_rotation(rng), rng.normal(size=3)
    np.testing.assert_allclose(local_to_world(m.transformed(R, t), c), local_to_world(m, c) @ R.T + t, atol=1e-7)


# ------------------------------------------------------------------ repose


def test_repose_identity():
    m = icosphere(2)
    c = sample_surface(m, 200, seed=0).as_local_coords()
    np.testing.assert_allclose(repose(c, m), local_to_world(m, c), atol=1e-12)


def test_repose_uniform_scale():
    m = icosphere(2)
    a = sample_surface(m, 200, seed=0)
    c = a.as_local_coords()
    np.testing.assert_allclose(repose(c, m.with_vertices(2 * m.vertices)), 2 * anchor_positions(m, a), atol=1e-9)


def test_repose_cylinder_frames_match_loop():
    seq = bending_cylinder_sequence(10)
    c = closest_point_local_coords(seq[5], anchor_positions(seq[5], sample_surface(seq[5], 300, seed=1)))
    got = repose(c, seq[6])
    tri, nrm = seq[6].triangles(), seq[6].face_normals()
    for i in range(len(c)):
        f = c.faces[i]
        ref = c.bary[i] @ tri[f] + c.offset[i] * nrm[f]
        np.testing.assert_allclose(got[i], ref, atol=1e-12)


def test_repose_topology_mismatch():
    c = sample_surface(icosphere(2), 10, seed=0).as_local_coords()
    c.mesh_faces = 320
    with pytest.raises(InvalidInputError):
        repose(c, icosphere(1))
    with pytest.raises(InvalidInputError):
        repose(c, icosphere(2), source=icosphere(1))


def test_anchor_set_invariants():
    a = AnchorSet([0, 0], [[0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    a.check()
    with pytest.raises(ValidationError):
        AnchorSet([0], [[0.6, 0.6, -0.2]]).check()
