"""Depth-aware forward splatting of a neighboring RGB-D frame into the current
view, plus a plane-homography warp used as the comparison baseline.

Splatting resolves collisions with softmax-style depth weighting so that
nearer surfaces dominate occluded ones. The coverage grid accumulates plain
bilinear kernel mass; the depth-dependent exponential only shapes the color
blend. Pixels that receive no kernel mass are holes and stay invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    FrameBundle,
    GeometryError,
    ImageBuffer,
    Intrinsics,
    PoseSE3,
    _readonly,
)

COVERAGE_EPS = 1e-4
DEFAULT_SHARPNESS = 10.0


@dataclass(frozen=True)
class ReprojectedCoords:
    """Continuous target coordinates and transformed depths per source pixel."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        for name in ("u", "v", "depth"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        object.__setattr__(self, "validity", _readonly(self.validity, bool))


@dataclass(frozen=True)
class SplattedFrame:
    image: np.ndarray  # HxWx3 float, meaningful only where valid
    coverage: np.ndarray  # accumulated bilinear kernel mass
    validity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "image", _readonly(self.image))
        object.__setattr__(self, "coverage", _readonly(self.coverage))
        object.__setattr__(self, "validity", _readonly(self.validity, bool))

    def to_uint8(self) -> ImageBuffer:
        return ImageBuffer(np.clip(np.rint(self.image), 0, 255).astype(np.uint8))


def reproject_coords(
    source: FrameBundle, relative_pose: PoseSE3, k: Intrinsics, use_background_depth: bool = False
) -> ReprojectedCoords:
    """Map every valid source pixel into the target view.

    `relative_pose` takes source-camera coordinates to target-camera
    coordinates. Pixels without depth or landing behind the target camera are
    flagged invalid; no global failure is possible.
    """
    depth = source.depth
    if use_background_depth and source.background_depth is not None:
        depth = source.background_depth
    h, w = depth.shape
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    z = depth.values
    x = (us - k.cx) / k.fx * z
    y = (vs - k.cy) / k.fy * z
    R, t = relative_pose.rotation, relative_pose.translation
    xt = R[0, 0] * x + R[0, 1] * y + R[0, 2] * z + t[0]
    yt = R[1, 0] * x + R[1, 1] * y + R[1, 2] * z + t[1]
    zt = R[2, 0] * x + R[2, 1] * y + R[2, 2] * z + t[2]
    valid = depth.validity & (zt > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ut = np.where(valid, k.fx * xt / zt + k.cx, 0.0)
        vt = np.where(valid, k.fy * yt / zt + k.cy, 0.0)
    return ReprojectedCoords(ut, vt, np.where(valid, zt, 0.0), valid)


def softmax_splat(
    source_image: ImageBuffer,
    coords: ReprojectedCoords,
    sharpness: float = DEFAULT_SHARPNESS,
) -> SplattedFrame:
    """Scatter source colors to the 4 enclosing target pixels.

    Each deposit carries bilinear kernel mass times exp(-sharpness * (z' /
    median(z') - 1)); shifting the exponent by the median keeps the weights
    well scaled without changing the normalized blend. Accumulation is a
    sequential scatter, so results are bit-stable across runs.
    """
    h, w = source_image.shape
    valid = coords.validity
    colors = source_image.channels.reshape(-1, 3)[valid.ravel()].astype(float)
    uu = coords.u[valid]
    vv = coords.v[valid]
    zz = coords.depth[valid]

    color_acc = np.zeros((h, w, 3))
    soft_acc = np.zeros((h, w))
    kernel_acc = np.zeros((h, w))
    if uu.size:
        z_norm = zz / np.median(zz)
        w_depth = np.exp(-sharpness * (z_norm - 1.0))
        x0 = np.floor(uu).astype(np.int64)
        y0 = np.floor(vv).astype(np.int64)
        ax = uu - x0
        ay = vv - y0
        corners = (
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x0 + 1, y0, ax * (1.0 - ay)),
            (x0, y0 + 1, (1.0 - ax) * ay),
            (x0 + 1, y0 + 1, ax * ay),
        )
        for cx, cy, wb in corners:
            inb = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
            ci, cj, wbi = cy[inb], cx[inb], wb[inb]
            ws = wbi * w_depth[inb]
            np.add.at(kernel_acc, (ci, cj), wbi)
            np.add.at(soft_acc, (ci, cj), ws)
            np.add.at(color_acc, (ci, cj), ws[:, None] * colors[inb])

    validity = (kernel_acc > COVERAGE_EPS) & (soft_acc > 0)
    image = np.zeros((h, w, 3))
    image[validity] = color_acc[validity] / soft_acc[validity, None]
    return SplattedFrame(image, kernel_acc, validity)


def splat_frame(
    source: FrameBundle,
    relative_pose: PoseSE3,
    k: Intrinsics,
    sharpness: float = DEFAULT_SHARPNESS,
    use_background: bool = False,
) -> SplattedFrame:
    """Reproject + splat in one call; `use_background` splats the static layer."""
    coords = reproject_coords(source, relative_pose, k, use_background_depth=use_background)
    image = source.background if use_background else source.image
    return softmax_splat(image, coords, sharpness)


def plane_induced_homography(
    relative_pose: PoseSE3, k: Intrinsics, normal, distance: float
) -> np.ndarray:
    """Homography mapping source pixels to target pixels for one scene plane.

    The plane satisfies normal . X = distance in the source camera frame
    (distance > 0). Off-plane structure will show parallax under this warp;
    that is exactly the baseline's weakness.
    """
    if not distance > 0:
        raise GeometryError("plane distance must be positive")
    n = np.asarray(normal, dtype=float).reshape(3)
    n = n / np.linalg.norm(n)
    K = k.matrix()
    H = K @ (relative_pose.rotation + np.outer(relative_pose.translation, n) / distance) @ k.inverse_matrix()
    return H / H[2, 2]


def homography_warp(source_image: ImageBuffer, plane_homography: np.ndarray) -> np.ndarray:
    """Inverse-warp the source through a 3x3 homography with bilinear sampling.

    `plane_homography` maps source pixel coordinates to target coordinates;
    the target image is filled by sampling the source at H^-1 x. Out-of-bounds
    samples are black. Used only for the splatting-vs-homography comparison.
    """
    H = np.asarray(plane_homography, dtype=float)
    if H.shape != (3, 3):
        raise GeometryError(f"homography must be 3x3, got {H.shape}")
    det = np.linalg.det(H)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise GeometryError("singular homography")
    Hinv = np.linalg.inv(H)

    h, w = source_image.shape
    ut, vt = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    denom = Hinv[2, 0] * ut + Hinv[2, 1] * vt + Hinv[2, 2]
    xs = (Hinv[0, 0] * ut + Hinv[0, 1] * vt + Hinv[0, 2]) / denom
    ys = (Hinv[1, 0] * ut + Hinv[1, 1] * vt + Hinv[1, 2]) / denom
    return bilinear_sample(source_image.channels.astype(float), xs, ys)


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample image (HxW or HxWxC float) at continuous coords; outside -> 0."""
    h, w = image.shape[:2]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    if image.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    out = (
        image[y0, x0] * (1 - ax) * (1 - ay)
        + image[y0, x1] * ax * (1 - ay)
        + image[y1, x0] * (1 - ax) * ay
        + image[y1, x1] * ax * ay
    )
    mask = inside if image.ndim == 2 else inside[..., None]
    return np.where(mask, out, 0.0)
