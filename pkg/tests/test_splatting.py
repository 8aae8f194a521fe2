"""Forward splatting view synthesis and the homography-warp baseline.

The scalar reprojection oracle walks every pixel through backproject /
transform / project one at a time; the splat mass oracle re-derives bilinear
kernel deposits with plain loops.
"""

import numpy as np
import pytest

from motionprob.geometry import (
    DepthMap,
    FrameBundle,
    GeometryError,
    ImageBuffer,
    PoseSE3,
    backproject,
    project,
    se3_exp,
    transform,
)
from motionprob.pipeline import relative_pose
from motionprob.splatting import (
    ReprojectedCoords,
    homography_warp,
    plane_induced_homography,
    reproject_coords,
    softmax_splat,
    splat_frame,
)
from motionprob.synthetic import desk_scene, render_synthetic_sequence

from conftest import textured_image


def make_bundle(image, depth_values, pose=None):
    depth = DepthMap(depth_values, np.ones(depth_values.shape, dtype=bool))
    return FrameBundle(0.0, image, depth, image, background_depth=depth, pose=pose)


def small_intrinsics(w=40, h=30):
    from motionprob.geometry import Intrinsics

    return Intrinsics(fx=35.0, fy=35.0, cx=w / 2.0 - 0.5, cy=h / 2.0 - 0.5, width=w, height=h)


def test_reproject_identity_returns_grid_coords():
    rng = np.random.default_rng(0)
    k = small_intrinsics()
    img = textured_image(rng, k.height, k.width)
    bundle = make_bundle(img, np.full((k.height, k.width), 2.0))
    coords = reproject_coords(bundle, PoseSE3.identity(), k)
    us, vs = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    assert coords.validity.all()
    assert np.allclose(coords.u, us, atol=1e-12)
    assert np.allclose(coords.v, vs, atol=1e-12)
    assert np.allclose(coords.depth, 2.0, atol=1e-12)


def test_reproject_z_translation_scales_about_principal_point():
    k = small_intrinsics()
    d, dz = 2.0, 0.5  # camera moves dz toward a fronto-parallel plane at depth d
    img = textured_image(np.random.default_rng(1), k.height, k.width)
    bundle = make_bundle(img, np.full((k.height, k.width), d))
    coords = reproject_coords(bundle, PoseSE3(np.eye(3), [0.0, 0.0, -dz]), k)
    us, vs = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    scale = d / (d - dz)
    assert np.allclose(coords.u, k.cx + scale * (us - k.cx), atol=1e-9)
    assert np.allclose(coords.v, k.cy + scale * (vs - k.cy), atol=1e-9)
    assert np.allclose(coords.depth, d - dz, atol=1e-12)


def test_reproject_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    k = small_intrinsics(16, 12)
    depth = rng.uniform(1.0, 4.0, size=(12, 16))
    img = textured_image(rng, 12, 16)
    pose = se3_exp([0.02, -0.03, 0.01, 0.05, 0.02, -0.04])
    coords = reproject_coords(make_bundle(img, depth), pose, k)
    for v in range(12):
        for u in range(16):
            p = transform(pose, backproject((u, v), depth[v, u], k))
            if p.z <= 0:
                assert not coords.validity[v, u]
                continue
            eu, ev = project(p, k)
            assert abs(coords.u[v, u] - eu) < 1e-9
            assert abs(coords.v[v, u] - ev) < 1e-9
            assert abs(coords.depth[v, u] - p.z) < 1e-12


def test_reproject_flags_behind_camera():
    k = small_intrinsics()
    img = textured_image(np.random.default_rng(3), k.height, k.width)
    bundle = make_bundle(img, np.full((k.height, k.width), 1.0))
    coords = reproject_coords(bundle, PoseSE3(np.eye(3), [0.0, 0.0, -2.0]), k)
    assert not coords.validity.any()


def test_identity_splat_reconstructs_source():
    rng = np.random.default_rng(4)
    k = small_intrinsics(64, 48)
    img = textured_image(rng, 48, 64)
    bundle = make_bundle(img, np.full((48, 64), 2.0))
    splat = softmax_splat(img, reproject_coords(bundle, PoseSE3.identity(), k))
    assert splat.validity.all()
    mse = np.mean((splat.image - img.channels.astype(float)) ** 2)
    psnr = np.inf if mse == 0 else 10.0 * np.log10(255.0**2 / mse)
    assert psnr > 40.0


def test_two_pixel_collision_nearer_dominates():
    # two source pixels land on one integer target pixel at depths 1 m and 2 m
    img = np.zeros((1, 2, 3), dtype=np.uint8)
    img[0, 0] = 200  # color A, near
    img[0, 1] = 40  # color B, far
    coords = ReprojectedCoords(
        u=np.array([[1.0, 1.0]]),
        v=np.array([[0.0, 0.0]]),
        depth=np.array([[1.0, 2.0]]),
        validity=np.ones((1, 2), dtype=bool),
    )
    out = softmax_splat(ImageBuffer(img), coords, sharpness=10.0)
    # softmax weights: exp(-s(z/median - 1)) with median 1.5 -> ratio e^(2s/3)
    ratio = np.exp(2.0 * 10.0 / 3.0)
    expected = (ratio * 200.0 + 40.0) / (ratio + 1.0)
    assert out.validity[0, 1]
    assert np.allclose(out.image[0, 1], expected, atol=1e-9)
    assert abs(out.image[0, 1, 0] - 200.0) < 0.5  # nearer color wins


def test_splat_round_trip_small_pose(short_sequence):
    # static layer only: splatting a neighbor into the current view should
    # reproduce the current static frame up to resampling
    seq = short_sequence
    k = seq.scene.intrinsics
    src, tgt = seq.frames[5], seq.frames[3]
    splat = splat_frame(src, relative_pose(src, tgt), k, use_background=True)
    target = tgt.background.channels.astype(float)
    err = np.abs(splat.image[splat.validity] - target[splat.validity]).mean()
    assert err < 2.0


def test_splat_output_is_convex_combination():
    rng = np.random.default_rng(5)
    k = small_intrinsics(32, 24)
    img = ImageBuffer(rng.integers(10, 240, size=(24, 32, 3), dtype=np.uint8))
    depth = rng.uniform(1.0, 3.0, size=(24, 32))
    pose = se3_exp([0.01, 0.02, -0.01, 0.03, -0.02, 0.05])
    splat = softmax_splat(img, reproject_coords(make_bundle(img, depth), pose, k))
    lo, hi = img.channels.min(), img.channels.max()
    valid = splat.image[splat.validity]
    assert valid.min() >= lo - 1e-9
    assert valid.max() <= hi + 1e-9


def test_splat_mass_conservation_scalar_oracle():
    rng = np.random.default_rng(6)
    k = small_intrinsics(20, 15)
    img = ImageBuffer(rng.integers(0, 255, size=(15, 20, 3), dtype=np.uint8))
    depth = rng.uniform(1.0, 2.5, size=(15, 20))
    pose = se3_exp([0.0, 0.01, 0.0, 0.02, 0.01, -0.03])
    coords = reproject_coords(make_bundle(img, depth), pose, k)
    splat = softmax_splat(img, coords)

    expected_mass = 0.0
    for v in range(15):
        for u in range(20):
            if not coords.validity[v, u]:
                continue
            x, y = coords.u[v, u], coords.v[v, u]
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            ax, ay = x - x0, y - y0
            for cx, cy, wt in (
                (x0, y0, (1 - ax) * (1 - ay)),
                (x0 + 1, y0, ax * (1 - ay)),
                (x0, y0 + 1, (1 - ax) * ay),
                (x0 + 1, y0 + 1, ax * ay),
            ):
                if 0 <= cx < 20 and 0 <= cy < 15:
                    expected_mass += wt
    assert splat.coverage.sum() == pytest.approx(expected_mass, abs=1e-6)


def test_uncovered_pixels_are_invalid():
    # a single source pixel covers at most 4 targets; the rest are holes
    img = np.full((8, 8, 3), 128, dtype=np.uint8)
    depth = np.zeros((8, 8))
    depth[4, 4] = 2.0
    k = small_intrinsics(8, 8)
    coords = reproject_coords(
        FrameBundle(0.0, ImageBuffer(img), DepthMap(depth, depth > 0), ImageBuffer(img)),
        PoseSE3.identity(),
        k,
    )
    splat = softmax_splat(ImageBuffer(img), coords)
    assert splat.validity.sum() == 1
    assert splat.validity[4, 4]


def test_homography_identity():
    rng = np.random.default_rng(7)
    img = textured_image(rng, 24, 32)
    warped = homography_warp(img, np.eye(3))
    assert np.allclose(warped, img.channels.astype(float), atol=1e-9)


def test_homography_pure_translation_shifts():
    rng = np.random.default_rng(8)
    img = textured_image(rng, 24, 32)
    H = np.eye(3)
    H[0, 2] = 5.0  # source x maps to x+5 in the target
    warped = homography_warp(img, H)
    assert np.allclose(warped[:, 5:], img.channels.astype(float)[:, :-5], atol=1e-9)


def test_homography_rejects_singular():
    img = textured_image(np.random.default_rng(9), 8, 8)
    singular = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    with pytest.raises(GeometryError):
        homography_warp(img, singular)


def test_splat_beats_homography_on_nonplanar_scene():
    # larger camera baseline so off-plane parallax is visible (Fig 3 style)
    seq = render_synthetic_sequence(desk_scene(n_frames=8, camera_motion=8.0, moving=False))
    k = seq.scene.intrinsics
    src, tgt = seq.frames[5], seq.frames[0]
    rel = relative_pose(src, tgt)
    splat = splat_frame(src, rel, k)

    wall_normal_cam = src.pose.rotation.T @ np.array([0.0, 0.0, 1.0])
    wall_dist_cam = 3.0 - src.pose.translation[2]
    H = plane_induced_homography(rel, k, wall_normal_cam, wall_dist_cam)
    warped = homography_warp(src.image, H)

    target = tgt.image.channels.astype(float)
    mask = splat.validity & (warped.sum(axis=2) > 0)
    err_splat = np.abs(splat.image[mask] - target[mask]).mean()
    err_homog = np.abs(warped[mask] - target[mask]).mean()
    assert err_splat < err_homog


def test_plane_homography_requires_positive_distance():
    with pytest.raises(GeometryError):
        plane_induced_homography(PoseSE3.identity(), small_intrinsics(), [0, 0, 1], 0.0)
