"""Synthetic desk-scale RGB-D scenes with exact ground truth.

A minimal ray caster over textured axis-aligned planes and boxes. Moving boxes
follow per-frame position schedules and may drag a darkening "shadow" decal
across the floor; the paired background sequence is the identical render with
the moving pieces removed, giving frame-by-frame static counterparts plus
exact motion masks, depths, flows and the camera trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DepthMap, FrameBundle, ImageBuffer, Intrinsics, PoseSE3

_NEAR = 1e-3
_FPS = 30.0


class SceneError(ValueError):
    pass


class _Texture:
    """Deterministic smooth 3D procedural texture (sum of sinusoids)."""

    def __init__(self, rng: np.random.Generator, base, amp: float, components: int = 6):
        self.base = np.asarray(base, dtype=float).reshape(3)
        self.amp = float(amp)
        self.freq = rng.uniform(1.5, 18.0, size=(components, 3)) * rng.choice(
            [-1.0, 1.0], size=(components, 3)
        )
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=(components, 3))
        w = rng.uniform(0.5, 1.0, size=components)
        self.weights = w / w.sum()

    def color(self, points: np.ndarray) -> np.ndarray:
        arg = 2.0 * np.pi * points @ self.freq.T  # (N, K)
        out = np.broadcast_to(self.base, (points.shape[0], 3)).copy()
        for k in range(len(self.weights)):
            out += self.amp * self.weights[k] * np.sin(arg[:, k, None] + self.phase[k])
        return out


@dataclass(frozen=True)
class TrianglePath:
    """Piecewise-linear oscillation: offset sweeps -amplitude..+amplitude."""

    amplitude: tuple[float, float, float]
    period: int

    def offset(self, frame: int) -> np.ndarray:
        phase = (frame % self.period) / self.period
        s = 4.0 * phase - 1.0 if phase < 0.5 else 3.0 - 4.0 * phase
        return s * np.asarray(self.amplitude)


@dataclass
class Plane:
    axis: int  # 0=x, 1=y, 2=z
    offset: float
    texture: _Texture


@dataclass
class Box:
    center: np.ndarray
    size: np.ndarray
    texture: _Texture
    path: TrianglePath | None = None  # present only for moving boxes

    def center_at(self, frame: int) -> np.ndarray:
        if self.path is None:
            return self.center
        return self.center + self.path.offset(frame)


@dataclass
class ShadowDecal:
    """Elliptical darkening patch on a plane, tied to a moving box's schedule."""

    plane_index: int
    center: np.ndarray  # world position of the ellipse center at offset zero
    radii: tuple[float, float]  # along the two in-plane axes
    darkening: float
    path: TrianglePath

    def center_at(self, frame: int) -> np.ndarray:
        return self.center + self.path.offset(frame)


@dataclass
class SyntheticScene:
    intrinsics: Intrinsics
    n_frames: int
    seed: int
    planes: list[Plane]
    boxes: list[Box]
    shadows: list[ShadowDecal] = field(default_factory=list)
    camera_translation_amp: tuple[float, float, float] = (0.015, 0.008, 0.010)
    camera_yaw_amp: float = 0.004  # radians
    camera_pitch: float = 0.21  # fixed downward tilt so the floor stays in view

    def __post_init__(self):
        if self.n_frames < 1:
            raise SceneError("scene needs at least one frame")
        if self.intrinsics.width < 2 or self.intrinsics.height < 2:
            raise SceneError("degenerate camera: zero-area frustum")
        for s in self.shadows:
            if not 0 <= s.plane_index < len(self.planes):
                raise SceneError(f"shadow references missing plane {s.plane_index}")

    def camera_pose(self, frame: int) -> PoseSE3:
        """Camera-to-world pose; gently oscillating translation plus yaw."""
        f = float(frame)
        ax, ay, az = self.camera_translation_amp
        t = np.array(
            [
                ax * math.sin(2.0 * np.pi * f / 47.0),
                ay * math.sin(2.0 * np.pi * f / 71.0 + 1.0),
                az * math.sin(2.0 * np.pi * f / 59.0 + 2.0),
            ]
        )
        yaw = self.camera_yaw_amp * math.sin(2.0 * np.pi * f / 53.0 + 0.5)
        c, s = math.cos(yaw), math.sin(yaw)
        R_yaw = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        cp, sp = math.cos(self.camera_pitch), math.sin(self.camera_pitch)
        R_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
        return PoseSE3(R_yaw @ R_pitch, t)

    def trajectory(self) -> tuple[np.ndarray, list[PoseSE3]]:
        stamps = np.arange(self.n_frames) / _FPS
        return stamps, [self.camera_pose(f) for f in range(self.n_frames)]


@dataclass
class RenderedFrame:
    image: ImageBuffer
    depth: DepthMap
    moving_mask: np.ndarray
    shadow_mask: np.ndarray
    hit_points: np.ndarray  # (H, W, 3) world coordinates
    hit_box: np.ndarray  # index into scene.boxes, -1 for planes


def _ray_grid(scene: SyntheticScene, pose: PoseSE3):
    k = scene.intrinsics
    us, vs = np.meshgrid(
        np.arange(k.width, dtype=float), np.arange(k.height, dtype=float)
    )
    dirs_cam = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1)
    dirs_world = dirs_cam @ pose.rotation.T
    return pose.translation, dirs_world


def render_frame(scene: SyntheticScene, frame: int, include_moving: bool = True) -> RenderedFrame:
    """Ray-cast one frame. The ray parameter equals camera-frame depth because
    ray directions are normalized to unit z in the camera frame."""
    pose = scene.camera_pose(frame)
    origin, dirs = _ray_grid(scene, pose)
    h, w = dirs.shape[:2]

    depth = np.full((h, w), np.inf)
    kind = np.full((h, w), -1, dtype=np.int64)  # plane idx or boxes offset below
    n_planes = len(scene.planes)

    for i, plane in enumerate(scene.planes):
        d_axis = dirs[:, :, plane.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane.offset - origin[plane.axis]) / d_axis
        hit = np.isfinite(t) & (t > _NEAR) & (t < depth)
        depth[hit] = t[hit]
        kind[hit] = i

    for b, box in enumerate(scene.boxes):
        if box.path is not None and not include_moving:
            continue
        center = box.center_at(frame)
        lo = center - box.size / 2.0
        hi = center + box.size / 2.0
        tmin = np.full((h, w), _NEAR)
        tmax = np.full((h, w), np.inf)
        for a in range(3):
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo[a] - origin[a]) / dirs[:, :, a]
                t2 = (hi[a] - origin[a]) / dirs[:, :, a]
            tmin = np.maximum(tmin, np.minimum(t1, t2))
            tmax = np.minimum(tmax, np.maximum(t1, t2))
        t = tmin
        hit = (tmax >= tmin) & (t > _NEAR) & (t < depth)
        depth[hit] = t[hit]
        kind[hit] = n_planes + b

    if not np.all(np.isfinite(depth)):
        raise SceneError("rays escaped the scene; enclose it with planes")

    points = origin + depth[:, :, None] * dirs
    flat = points.reshape(-1, 3)
    colors = np.zeros((h * w, 3))
    for i, plane in enumerate(scene.planes):
        sel = (kind == i).ravel()
        if sel.any():
            colors[sel] = plane.texture.color(flat[sel])
    for b, box in enumerate(scene.boxes):
        sel = (kind == n_planes + b).ravel()
        if sel.any():
            # sample box texture in its rest frame so the pattern rides along
            rest = flat[sel] - (box.center_at(frame) - box.center)
            colors[sel] = box.texture.color(rest)

    shadow_mask = np.zeros((h, w), dtype=bool)
    if include_moving:
        for s in scene.shadows:
            on_plane = kind == s.plane_index
            c = s.center_at(frame)
            plane_axes = [a for a in range(3) if a != scene.planes[s.plane_index].axis]
            da = points[:, :, plane_axes[0]] - c[plane_axes[0]]
            db = points[:, :, plane_axes[1]] - c[plane_axes[1]]
            inside = on_plane & ((da / s.radii[0]) ** 2 + (db / s.radii[1]) ** 2 <= 1.0)
            colors.reshape(h, w, 3)[inside] *= s.darkening
            shadow_mask |= inside

    moving_mask = np.zeros((h, w), dtype=bool)
    for b, box in enumerate(scene.boxes):
        if box.path is not None:
            moving_mask |= kind == n_planes + b

    image = ImageBuffer(np.clip(np.rint(colors.reshape(h, w, 3)), 0, 255).astype(np.uint8))
    hit_box = np.where(kind >= n_planes, kind - n_planes, -1)
    return RenderedFrame(
        image=image,
        depth=DepthMap(depth, np.ones_like(depth, dtype=bool)),
        moving_mask=moving_mask,
        shadow_mask=shadow_mask,
        hit_points=points,
        hit_box=hit_box,
    )


@dataclass
class SyntheticSequence:
    scene: SyntheticScene
    frames: list[FrameBundle]
    moving_masks: list[np.ndarray]
    shadow_masks: list[np.ndarray]
    timestamps: np.ndarray
    poses: list[PoseSE3]
    _rendered: list[RenderedFrame]

    def ground_truth_flow(self, t0: int, t1: int):
        """Exact flow from frame t0 to t1: static hits follow camera motion,
        moving-box hits additionally follow the box schedule."""
        r0 = self._rendered[t0]
        pose1_inv = self.scene.camera_pose(t1).inverse()
        k = self.scene.intrinsics
        h, w = r0.hit_box.shape
        pts = r0.hit_points.reshape(-1, 3).copy()
        box_idx = r0.hit_box.ravel()
        for b, box in enumerate(self.scene.boxes):
            if box.path is None:
                continue
            sel = box_idx == b
            pts[sel] += box.center_at(t1) - box.center_at(t0)
        cam = pose1_inv.apply(pts)
        valid = cam[:, 2] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            u1 = k.fx * cam[:, 0] / cam[:, 2] + k.cx
            v1 = k.fy * cam[:, 1] / cam[:, 2] + k.cy
        us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        du = np.where(valid.reshape(h, w), u1.reshape(h, w) - us, 0.0)
        dv = np.where(valid.reshape(h, w), v1.reshape(h, w) - vs, 0.0)
        from .motion import FlowField

        return FlowField(du, dv, valid.reshape(h, w))

    def ground_truth_probability(self, t: int) -> np.ndarray:
        return self.moving_masks[t].astype(float)


def render_synthetic_sequence(scene: SyntheticScene) -> SyntheticSequence:
    """Render the dynamic and background sequences with all ground truth.

    Deterministic for a fixed scene (textures are frozen at scene build time);
    a scene without moving boxes or decals yields background frames bit-equal
    to the dynamic ones.
    """
    timestamps, poses = scene.trajectory()
    frames, moving_masks, shadow_masks, rendered = [], [], [], []
    for f in range(scene.n_frames):
        dyn = render_frame(scene, f, include_moving=True)
        bg = render_frame(scene, f, include_moving=False)
        frames.append(
            FrameBundle(
                timestamp=float(timestamps[f]),
                image=dyn.image,
                depth=dyn.depth,
                background=bg.image,
                background_depth=bg.depth,
                pose=poses[f],
            )
        )
        moving_masks.append(dyn.moving_mask)
        shadow_masks.append(dyn.shadow_mask)
        rendered.append(dyn)
    return SyntheticSequence(
        scene=scene,
        frames=frames,
        moving_masks=moving_masks,
        shadow_masks=shadow_masks,
        timestamps=timestamps,
        poses=poses,
        _rendered=rendered,
    )


# --- the stock desk scene -----------------------------------------------------------


def desk_scene(
    width: int = 160,
    height: int = 120,
    n_frames: int = 60,
    seed: int = 7,
    moving: bool = True,
    shadow: bool = True,
    object_speed: float = 0.02,
    shadow_darkening: float = 0.45,
    camera_motion: float = 1.0,
) -> SyntheticScene:
    """Back wall + floor + one static box + one moving box with a floor shadow.

    `object_speed` is meters per frame along the sweep; `camera_motion` scales
    the default handheld-style camera oscillation.
    """
    rng = np.random.default_rng(seed)
    fx = 0.95 * width
    k = Intrinsics(fx=fx, fy=fx, cx=width / 2.0 - 0.5, cy=height / 2.0 - 0.5,
                   width=width, height=height)

    wall = Plane(axis=2, offset=3.0, texture=_Texture(rng, base=(128, 120, 110), amp=38.0))
    floor = Plane(axis=1, offset=0.85, texture=_Texture(rng, base=(140, 132, 118), amp=9.0))
    static_box = Box(
        center=np.array([-0.55, 0.45, 2.1]),
        size=np.array([0.42, 0.75, 0.32]),
        texture=_Texture(rng, base=(90, 140, 170), amp=34.0),
    )
    boxes = [static_box]
    shadows: list[ShadowDecal] = []
    if moving:
        period = max(2, n_frames)
        amp = object_speed * period / 4.0
        path = TrianglePath(amplitude=(amp, 0.0, 0.0), period=period)
        boxes.append(
            Box(
                center=np.array([0.25, 0.38, 1.9]),
                size=np.array([0.38, 0.55, 0.30]),
                texture=_Texture(rng, base=(180, 95, 85), amp=34.0),
                path=path,
            )
        )
        if shadow:
            shadows.append(
                ShadowDecal(
                    plane_index=1,
                    center=np.array([0.25, 0.85, 1.85]),
                    radii=(0.35, 0.28),
                    darkening=shadow_darkening,
                    path=path,
                )
            )
    cam_amp = tuple(camera_motion * a for a in (0.015, 0.008, 0.010))
    return SyntheticScene(
        intrinsics=k,
        n_frames=n_frames,
        seed=seed,
        planes=[wall, floor],
        boxes=boxes,
        shadows=shadows,
        camera_translation_amp=cam_amp,
        camera_yaw_amp=0.004 * camera_motion,
    )


SCENE_SPEC_DEFAULTS = {
    "width": 160,
    "height": 120,
    "frames": 60,
    "seed": 7,
    "moving": 1,
    "shadow": 1,
    "object_speed": 0.02,
    "shadow_darkening": 0.45,
    "camera_motion": 1.0,
}


def scene_from_spec(spec: dict) -> SyntheticScene:
    """Build the stock scene from a key-value spec (unknown keys rejected)."""
    merged = dict(SCENE_SPEC_DEFAULTS)
    for key, value in spec.items():
        if key not in merged:
            raise SceneError(f"unknown scene key {key!r}")
        merged[key] = type(SCENE_SPEC_DEFAULTS[key])(value)
    return desk_scene(
        width=int(merged["width"]),
        height=int(merged["height"]),
        n_frames=int(merged["frames"]),
        seed=int(merged["seed"]),
        moving=bool(int(merged["moving"])),
        shadow=bool(int(merged["shadow"])),
        object_speed=float(merged["object_speed"]),
        shadow_darkening=float(merged["shadow_darkening"]),
        camera_motion=float(merged["camera_motion"]),
    )
