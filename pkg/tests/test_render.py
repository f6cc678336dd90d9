import numpy as np
import pytest
from hypothesis import given, strategies as st

from gak.camera import Camera
from gak.errors import InvalidInputError
from gak.gaussians import GaussianSet, covariance_3d, load_gset, logit, quat_to_rotmat, save_gset
from gak.mesh import LocalCoords
from gak.render import (ImageBuffer, backward_color_opacity, prepare, project_gaussian, project_gaussians,
                        psnr, render, render_bruteforce)

from conftest import random_rotation
from oracles import composite_reference
from scenes import fd_check, random_quats, random_scene, scene_camera


def axis_cam(size=64, f=80.0):
    c = (size - 1) / 2
    return Camera(f, f, c, c, np.eye(3), np.zeros(3), size, size)


def one(mean, scale, opacity, color, quat=(1.0, 0, 0, 0)):
    return GaussianSet(np.array([mean], float), np.array([quat], float), np.log(np.broadcast_to(scale, (1, 3))),
                       logit(np.array([opacity])), np.array([color], float))


# -------------------------------------------------------------- covariance


def test_covariance_axis_aligned():
    s = np.array([[0.1, 0.2, 0.3]])
    np.testing.assert_allclose(covariance_3d([[1.0, 0, 0, 0]], np.log(s))[0], np.diag(s[0] ** 2), atol=1e-15)


def test_covariance_quarter_turn_z():
    q = [[np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]]
    cov = covariance_3d(q, np.log([[0.1, 0.2, 0.3]]))[0]
    np.testing.assert_allclose(cov, np.diag([0.04, 0.01, 0.09]), atol=1e-12)


@given(st.integers(0, 2 ** 31))
def test_covariance_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(1e-3, 1, (1, 3))
    cov = covariance_3d(random_quats(rng, 1), np.log(s))[0]
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s[0] ** 2), atol=1e-9)


def test_quat_matches_rotation(rng):
    R = random_rotation(rng)
    # recover a quaternion from R (Shepperd, w-dominant case is generic for random R)
    w = np.sqrt(max(1 + np.trace(R), 1e-12)) / 2
    q = np.array([w, (R[2, 1] - R[1, 2]) / (4 * w), (R[0, 2] - R[2, 0]) / (4 * w), (R[1, 0] - R[0, 1]) / (4 * w)])
    np.testing.assert_allclose(quat_to_rotmat(q[None])[0], R, atol=1e-9)


# -------------------------------------------------------------- projection


def test_projected_covariance_magnification():
    f, s, z = 80.0, 0.05, 2.0
    m2, cov, depth = project_gaussian(axis_cam(f=f), one([0, 0, z], s, 0.5, [1, 1, 1]))
    np.testing.assert_allclose(m2, [31.5, 31.5])
    ref = (f * s / z) ** 2 + 0.3
    np.testing.assert_allclose(np.diag(cov), [ref, ref], rtol=0.01)
    assert depth == z


def test_doubling_depth_halves_sigma():
    cam = axis_cam(f=80.0)
    c1 = project_gaussian(cam, one([0, 0, 2.0], 0.05, 0.5, [1, 1, 1]))[1] - 0.3 * np.eye(2)
    c2 = project_gaussian(cam, one([0, 0, 4.0], 0.05, 0.5, [1, 1, 1]))[1] - 0.3 * np.eye(2)
    assert np.sqrt(c2[0, 0]) == pytest.approx(np.sqrt(c1[0, 0]) / 2, rel=0.01)


def test_behind_camera_culled():
    assert project_gaussian(axis_cam(), one([0, 0, -1.0], 0.05, 0.5, [1, 1, 1])) is None
    assert project_gaussian(axis_cam(), one([0, 0, 0.0], 0.05, 0.5, [1, 1, 1])) is None


def test_offscreen_culled():
    assert project_gaussian(axis_cam(), one([5.0, 0, 1.0], 0.01, 0.5, [1, 1, 1])) is None


# ------------------------------------------------------------------ render


def test_single_capped_gaussian_center():
    img = render(one([0, 0, 2.0], 0.5, 0.9999, [0.2, 0.6, 1.0]), axis_cam(size=65))
    np.testing.assert_allclose(img.rgb[32, 32], 0.99 * np.array([0.2, 0.6, 1.0]), atol=1e-3)


def test_empty_set():
    img = render(GaussianSet.empty(), axis_cam())
    assert not img.rgb.any() and not img.alpha.any()


def test_single_gaussian_matches_bruteforce():
    gs = one([0.05, -0.02, 2.0], 0.1, 0.7, [0.3, 0.5, 0.9])
    a, b = render(gs, axis_cam()), render_bruteforce(gs, axis_cam())
    assert np.abs(a.rgb - b.rgb).max() < 1e-6


def test_equal_depth_tie_by_index():
    gs = GaussianSet(np.array([[0.0, 0, 2], [0, 0, 2]]), np.tile([1.0, 0, 0, 0], (2, 1)), np.log(np.full((2, 3), 0.2)),
                     logit(np.array([0.6, 0.6])), np.array([[1.0, 0, 0], [0, 0, 1.0]]))
    a, b = render(gs, axis_cam()), render_bruteforce(gs, axis_cam())
    np.testing.assert_allclose(a.rgb, b.rgb, atol=1e-12)
    # the lower index composites first, so red dominates the centre
    assert a.rgb[32, 32, 0] > a.rgb[32, 32, 2]


def test_against_python_reference():
    rng = np.random.default_rng(3)
    gs = random_scene(rng, 8, scale=(0.05, 0.15))
    cam = scene_camera(24, 24)
    p = project_gaussians(cam, gs)
    keep = ~p.culled
    rgb, alpha = composite_reference(p.mean2d[keep], p.cov2d[keep], gs.opacities[keep], gs.colors[keep],
                                     p.depth[keep], 24, 24)
    img = render(gs, cam)
    np.testing.assert_allclose(img.rgb, rgb, atol=1e-12)
    np.testing.assert_allclose(img.alpha, alpha, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_tiled_equals_bruteforce(seed):
    rng = np.random.default_rng(seed)
    gs = random_scene(rng, int(rng.integers(1, 101)))
    a, b = render(gs, scene_camera()), render_bruteforce(gs, scene_camera())
    assert np.abs(a.rgb - b.rgb).max() < 1e-5
    assert np.abs(a.alpha - b.alpha).max() < 1e-5


def test_early_termination_residual_bounded():
    # dense, large, nearly opaque scenes stop at T < 1e-4: the skipped tail is below that
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        gs = random_scene(rng, 100, scale=(0.05, 0.2), opacity=(0.5, 0.99))
        a, b = render(gs, scene_camera()), render_bruteforce(gs, scene_camera())
        assert np.abs(a.rgb - b.rgb).max() <= 1e-4
        assert np.abs(a.alpha - b.alpha).max() <= 1e-4


def test_bruteforce_guard_rail():
    gs = GaussianSet.isotropic(np.zeros((10_001, 3)) + [0, 0, 2], 0.01)
    with pytest.raises(InvalidInputError):
        render_bruteforce(gs, axis_cam())


@given(st.integers(0, 2 ** 31))
def test_bounds_and_order_invariance(seed):
    rng = np.random.default_rng(seed)
    gs = random_scene(rng, 40, scale=(0.02, 0.3), opacity=(0.01, 1.0))
    cam = scene_camera(40, 40)
    img = render(gs, cam)
    assert img.rgb.min() >= 0 and img.rgb.max() <= 1 and img.alpha.min() >= 0 and img.alpha.max() <= 1
    perm = rng.permutation(len(gs))
    np.testing.assert_allclose(render(gs.permuted(perm), cam).rgb, img.rgb, atol=1e-6)


def test_alpha_zero_exactly_outside_footprints():
    rng = np.random.default_rng(9)
    gs = random_scene(rng, 15, scale=(0.01, 0.05))
    cam = scene_camera(48, 48)
    img = render(gs, cam)
    p = project_gaussians(cam, gs)
    ys, xs = np.mgrid[0:48, 0:48]
    touched = np.zeros((48, 48), bool)
    for i in np.flatnonzero(~p.culled):
        d = np.stack([xs - p.mean2d[i, 0], ys - p.mean2d[i, 1]], -1)
        q = np.einsum("...i,ij,...j->...", d, np.linalg.inv(p.cov2d[i]), d)
        touched |= q <= 9.0
    assert np.all(img.alpha[~touched] == 0.0)
    assert np.all(img.alpha[touched] > 0.0)


def test_prepared_state_reuse():
    rng = np.random.default_rng(4)
    gs = random_scene(rng, 50)
    cam = scene_camera()
    prep = prepare(gs, cam)
    gs2 = gs.copy()
    gs2.colors = rng.random((50, 3))
    np.testing.assert_array_equal(render(gs2, cam, prep).rgb, render(gs2, cam).rgb)
    with pytest.raises(InvalidInputError):
        render(GaussianSet.isotropic(np.zeros((3, 3)), 0.1), cam, prep)


# ---------------------------------------------------------------- backward


def loss_of(gs, cam, g_rgb, g_a):
    img = render(gs, cam)
    return float(np.sum(img.rgb * g_rgb) + np.sum(img.alpha * g_a))


def test_single_pixel_color_gradient():
    cam = axis_cam(size=16, f=40.0)
    gs = one([0, 0, 2.0], 0.004, 0.6, [0.5, 0.5, 0.5])
    img = render(gs, cam)
    g = np.zeros((16, 16, 3))
    g[8, 8, 0] = 1.0
    dc, _ = backward_color_opacity(gs, cam, g)
    np.testing.assert_allclose(dc[0], [img.alpha[8, 8], 0, 0], atol=1e-15)


def test_occluded_gaussian_zero_gradient():
    cam = axis_cam(size=32)
    front = GaussianSet.isotropic([[0, 0, 1.0]], 0.5, opacity=0.99999, colors=[1, 1, 1])
    # enough stacked opaque layers in front drive transmittance below the cutoff everywhere
    stack = GaussianSet.isotropic(np.tile([[0, 0, 1.0]], (4, 1)) + np.arange(4)[:, None] * [0, 0, 0.01], 0.5,
                                  opacity=0.99999)
    back = GaussianSet.isotropic([[0, 0, 3.0]], 0.05, opacity=0.5)
    gs = GaussianSet(*(np.concatenate([getattr(s, k) for s in (front, stack, back)])
                       for k in ("means", "quats", "log_scales", "opacity_logits", "colors")))
    dc, dl = backward_color_opacity(gs, cam, np.ones((32, 32, 3)), np.ones((32, 32)))
    assert np.all(dc[-1] == 0) and dl[-1] == 0


def test_noncontributing_gaussian_zero_gradient():
    cam = axis_cam(size=32)
    gs = GaussianSet.isotropic([[0, 0, 2.0], [30.0, 0, 2.0]], 0.1)
    dc, dl = backward_color_opacity(gs, cam, np.ones((32, 32, 3)))
    assert np.all(dc[1] == 0) and dl[1] == 0


def test_gradient_shape_mismatch():
    with pytest.raises(InvalidInputError):
        backward_color_opacity(GaussianSet.isotropic([[0, 0, 2.0]], 0.1), axis_cam(32), np.zeros((16, 16, 3)))


def test_imagebuffer_gradient_argument(rng):
    gs = random_scene(rng, 10)
    cam = scene_camera(32, 32)
    g = ImageBuffer(rng.normal(size=(32, 32, 3)), rng.normal(size=(32, 32)))
    a = backward_color_opacity(gs, cam, g)
    b = backward_color_opacity(gs, cam, g.rgb, g.alpha)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def finite_differences(gs, cam, g_rgb, g_a, h=1e-4):
    n = len(gs)
    dc = np.zeros((n, 3))
    dl = np.zeros(n)
    for i in range(n):
        for c in range(3):
            p, m = gs.copy(), gs.copy()
            p.colors[i, c] += h
            m.colors[i, c] -= h
            dc[i, c] = (loss_of(p, cam, g_rgb, g_a) - loss_of(m, cam, g_rgb, g_a)) / (2 * h)
        p, m = gs.copy(), gs.copy()
        p.opacity_logits[i] += h
        m.opacity_logits[i] -= h
        dl[i] = (loss_of(p, cam, g_rgb, g_a) - loss_of(m, cam, g_rgb, g_a)) / (2 * h)
    return dc, dl


@pytest.mark.parametrize("seed", range(5))
def test_gradients_vs_finite_differences(seed):
    rng = np.random.default_rng(seed)
    gs = random_scene(rng, int(rng.integers(1, 21)))
    cam = scene_camera(32, 32)
    g_rgb, g_a = rng.normal(size=(32, 32, 3)), rng.normal(size=(32, 32))
    dc, dl = backward_color_opacity(gs, cam, g_rgb, g_a)
    fc, fl = finite_differences(gs, cam, g_rgb, g_a)
    assert fd_check(dc, fc).all()
    assert fd_check(dl, fl).all()


def test_returned_image_matches_forward(rng):
    gs = random_scene(rng, 30)
    cam = scene_camera()
    *_, img = backward_color_opacity(gs, cam, np.zeros((64, 64, 3)), return_image=True)
    ref = render(gs, cam)
    np.testing.assert_array_equal(img.rgb, ref.rgb)
    np.testing.assert_array_equal(img.alpha, ref.alpha)


def test_gradient_thread_count_independent(rng):
    import numba

    gs = random_scene(rng, 60)
    cam = scene_camera()
    g = rng.normal(size=(64, 64, 3))
    before = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        a = backward_color_opacity(gs, cam, g)
        numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
        b = backward_color_opacity(gs, cam, g)
    finally:
        numba.set_num_threads(before)
    np.testing.assert_array_equal(a[0], b[0])


# -------------------------------------------------------------------- psnr


def test_psnr_identical_and_offset():
    a = np.full((8, 8, 3), 0.3)
    assert psnr(a, a) == np.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


def test_psnr_vs_direct(rng):
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), abs=1e-6)


def test_psnr_shape_mismatch():
    with pytest.raises(InvalidInputError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


# --------------------------------------------------------------------- gset


def test_gset_round_trip(tmp_path, rng):
    gs = random_scene(rng, 20)
    gs.coords = LocalCoords(np.arange(20), np.full((20, 3), 1 / 3), rng.uniform(-0.1, 0.1, 20))
    save_gset(gs, tmp_path / "g.gset")
    raw = (tmp_path / "g.gset").read_bytes()
    assert raw[:4] == b"GSET" and len(raw) == 20 + 20 * 56 + 20 * 20
    back = load_gset(tmp_path / "g.gset")
    np.testing.assert_allclose(back.means, gs.means, atol=1e-6)
    np.testing.assert_allclose(back.colors, gs.colors, atol=1e-6)
    np.testing.assert_array_equal(back.coords.faces, gs.coords.faces)


def test_gset_without_coords(tmp_path):
    gs = GaussianSet.isotropic([[0, 0, 1.0]], 0.1)
    save_gset(gs, tmp_path / "g.gset")
    assert load_gset(tmp_path / "g.gset").coords is None


def test_gset_bad_magic(tmp_path):
    (tmp_path / "g.gset").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(InvalidInputError):
        load_gset(tmp_path / "g.gset")
