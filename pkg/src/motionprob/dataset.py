"""Sequence ingestion: TUM-layout RGB-D directories paired with a parallel
static-background tree, 16-bit depth decoding, and the line-oriented manifest
format the CLI consumes.

A background tree mirrors the dynamic one (same index files, same relative
image paths); for synthetically paired data the background is a re-render of
the identical trajectory without the moving objects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .association import associate_timestamps
from .geometry import DepthMap, FrameBundle, ImageBuffer, Intrinsics, PoseSE3

log = logging.getLogger(__name__)

TUM_FR3 = Intrinsics(fx=535.4, fy=539.2, cx=320.1, cy=247.6, width=640, height=480)
DEFAULT_DEPTH_SCALE = 5000.0
DEFAULT_MAX_TIME_GAP = 0.02

INTRINSICS_PRESETS = {"tum_fr3": TUM_FR3}


class DatasetError(IOError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    rgb_path: str
    depth_path: str
    background_rgb_path: str
    background_depth_path: str | None = None
    pose: PoseSE3 | None = None


@dataclass
class SequenceManifest:
    intrinsics: Intrinsics
    depth_scale: float
    records: list[FrameRecord]

    def __post_init__(self):
        ts = [r.timestamp for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DatasetError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.records)

    @property
    def timestamps(self):
        return [r.timestamp for r in self.records]

    def load_frame(self, index: int) -> FrameBundle:
        r = self.records[index]
        return FrameBundle(
            timestamp=r.timestamp,
            image=load_rgb_png(r.rgb_path),
            depth=load_depth_png(r.depth_path, self.depth_scale),
            background=load_rgb_png(r.background_rgb_path),
            background_depth=(
                load_depth_png(r.background_depth_path, self.depth_scale)
                if r.background_depth_path
                else None
            ),
            pose=r.pose,
        )


# --- image files ---------------------------------------------------------------


def load_rgb_png(path) -> ImageBuffer:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DatasetError(f"cannot read image {path}")
    return ImageBuffer(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))


def save_rgb_png(path, image: ImageBuffer) -> None:
    if not cv2.imwrite(str(path), cv2.cvtColor(image.channels, cv2.COLOR_RGB2BGR)):
        raise DatasetError(f"cannot write image {path}")


def load_depth_png(path, scale: float = DEFAULT_DEPTH_SCALE) -> DepthMap:
    """16-bit single-channel PNG to meters (raw / scale); raw 0 is invalid."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"cannot read depth image {path}")
    if raw.ndim != 2 or raw.dtype != np.uint16:
        raise DatasetError(f"{path}: expected 16-bit single-channel depth, got {raw.dtype} {raw.shape}")
    valid = raw > 0
    return DepthMap(np.where(valid, raw / float(scale), 0.0), valid)


def save_depth_png(path, depth: DepthMap, scale: float = DEFAULT_DEPTH_SCALE) -> None:
    raw = np.where(depth.validity, np.rint(depth.values * scale), 0.0)
    raw = np.clip(raw, 0, np.iinfo(np.uint16).max).astype(np.uint16)
    if not cv2.imwrite(str(path), raw):
        raise DatasetError(f"cannot write depth image {path}")


def save_gray_png(path, values: np.ndarray) -> None:
    """8-bit grayscale from [0, 1] values: byte = round(255 * value)."""
    img = np.clip(np.rint(np.asarray(values, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), img):
        raise DatasetError(f"cannot write image {path}")


# --- TUM layout ------------------------------------------------------------------


def _read_index(path: Path) -> tuple[np.ndarray, list[str]]:
    if not path.is_file():
        raise DatasetError(f"missing index file {path}")
    stamps, names = [], []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        stamps.append(float(parts[0]))
        names.append(parts[1])
    return np.asarray(stamps), names


def read_trajectory_file(path) -> tuple[np.ndarray, list[PoseSE3]]:
    """TUM trajectory format: `timestamp tx ty tz qx qy qz qw` per line."""
    stamps, poses = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 8:
            raise DatasetError(f"{path}: expected 8 fields per line, got {len(vals)}")
        stamps.append(vals[0])
        poses.append(PoseSE3.from_quaternion_xyzw(vals[4:8], vals[1:4]))
    return np.asarray(stamps), poses


def write_trajectory_file(path, timestamps, poses) -> None:
    lines = []
    for t, pose in zip(timestamps, poses):
        qx, qy, qz, qw = pose.quaternion_xyzw()
        tx, ty, tz = pose.translation
        lines.append(
            " ".join(f"{v:.9f}" for v in (t, tx, ty, tz, qx, qy, qz, qw))
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_tum_sequence(
    root,
    background_root,
    intrinsics: Intrinsics = TUM_FR3,
    depth_scale: float = DEFAULT_DEPTH_SCALE,
    max_time_gap: float = DEFAULT_MAX_TIME_GAP,
) -> SequenceManifest:
    """Associate rgb/depth/pose by nearest timestamp and pair backgrounds.

    Background images live under `background_root` at the same relative paths
    as the dynamic frames; a background depth file is attached when present.
    Frames that fail any association are dropped (counted in the log); zero
    surviving frames is an error.
    """
    root = Path(root)
    background_root = Path(background_root)
    rgb_stamps, rgb_names = _read_index(root / "rgb.txt")
    depth_stamps, depth_names = _read_index(root / "depth.txt")

    matches = associate_timestamps(rgb_stamps, depth_stamps, max_time_gap)
    dropped = len(rgb_stamps) - len(matches)

    pose_stamps, pose_list = None, None
    gt_file = root / "groundtruth.txt"
    if gt_file.is_file():
        pose_stamps, pose_list = read_trajectory_file(gt_file)

    records = []
    for i, j in matches:
        pose = None
        if pose_stamps is not None and len(pose_stamps):
            k = int(np.argmin(np.abs(pose_stamps - rgb_stamps[i])))
            if abs(pose_stamps[k] - rgb_stamps[i]) <= max_time_gap:
                pose = pose_list[k]
            else:
                dropped += 1
                continue
        bg_rgb = background_root / rgb_names[i]
        if not bg_rgb.is_file():
            dropped += 1
            continue
        bg_depth = background_root / depth_names[j]
        records.append(
            FrameRecord(
                timestamp=float(rgb_stamps[i]),
                rgb_path=str(root / rgb_names[i]),
                depth_path=str(root / depth_names[j]),
                background_rgb_path=str(bg_rgb),
                background_depth_path=str(bg_depth) if bg_depth.is_file() else None,
                pose=pose,
            )
        )
    if dropped:
        log.info("dropped %d frames without a full association", dropped)
    if not records:
        raise DatasetError(f"no frames survived association under {root}")
    records.sort(key=lambda r: r.timestamp)
    return SequenceManifest(intrinsics, depth_scale, records)


# --- manifest file ----------------------------------------------------------------
#
#   MANIFEST 1
#   INTRINSICS fx fy cx cy width height
#   DEPTH_SCALE value
#   FRAME ts rgb depth bg_rgb bg_depth|- tx ty tz qx qy qz qw | FRAME ... -


def save_manifest(manifest: SequenceManifest, path) -> None:
    k = manifest.intrinsics
    lines = [
        "MANIFEST 1",
        f"INTRINSICS {k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g} {k.width} {k.height}",
        f"DEPTH_SCALE {manifest.depth_scale:.17g}",
    ]
    for r in manifest.records:
        fields = [
            f"{r.timestamp:.17g}",
            r.rgb_path,
            r.depth_path,
            r.background_rgb_path,
            r.background_depth_path if r.background_depth_path else "-",
        ]
        if r.pose is not None:
            qx, qy, qz, qw = r.pose.quaternion_xyzw()
            t = r.pose.translation
            fields += [f"{v:.17g}" for v in (t[0], t[1], t[2], qx, qy, qz, qw)]
        else:
            fields.append("-")
        lines.append("FRAME " + " ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, validate: bool = True) -> SequenceManifest:
    lines = [
        ln.strip()
        for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.startswith("#")
    ]
    if not lines or lines[0].split() != ["MANIFEST", "1"]:
        raise DatasetError(f"{path}: missing MANIFEST 1 header")
    intrinsics = None
    depth_scale = DEFAULT_DEPTH_SCALE
    records = []
    for ln in lines[1:]:
        tag, *vals = ln.split()
        if tag == "INTRINSICS":
            intrinsics = Intrinsics(
                float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]),
                int(vals[4]), int(vals[5]),
            )
        elif tag == "DEPTH_SCALE":
            depth_scale = float(vals[0])
        elif tag == "FRAME":
            if len(vals) not in (6, 12):
                raise DatasetError(f"{path}: malformed FRAME record")
            pose = None
            if len(vals) == 12:
                tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals[5:12])
                pose = PoseSE3.from_quaternion_xyzw([qx, qy, qz, qw], [tx, ty, tz])
            records.append(
                FrameRecord(
                    timestamp=float(vals[0]),
                    rgb_path=vals[1],
                    depth_path=vals[2],
                    background_rgb_path=vals[3],
                    background_depth_path=None if vals[4] == "-" else vals[4],
                    pose=pose,
                )
            )
        else:
            raise DatasetError(f"{path}: unknown record {tag!r}")
    if intrinsics is None:
        raise DatasetError(f"{path}: missing INTRINSICS record")
    if validate:
        for r in records:
            for p in (r.rgb_path, r.depth_path, r.background_rgb_path, r.background_depth_path):
                if p and not Path(p).is_file():
                    raise DatasetError(f"{path}: referenced file missing: {p}")
    return SequenceManifest(intrinsics, depth_scale, records)
