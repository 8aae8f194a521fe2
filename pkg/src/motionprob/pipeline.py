"""End-to-end per-frame motion probability estimation over a sequence.

For every frame t: compute the movable prior from background differencing,
splat the t +/- j neighbors (dynamic and background layers) into the current
view, difference the two flows, average across offsets, and blend with the
prior. Each frame depends only on frames t-max(j)..t+max(j), so frames can be
processed in parallel with identical results.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    DEFAULT_DEPTH_SCALE,
    DEFAULT_MAX_TIME_GAP,
    INTRINSICS_PRESETS,
    SequenceManifest,
    load_manifest,
    load_tum_sequence,
    save_gray_png,
    save_rgb_png,
)
from .geometry import FrameBundle, Intrinsics, PoseSE3, ProbabilityMap
from .motion import (
    BlockMatchingFlow,
    FlowField,
    FlowProvider,
    FlowRequest,
    FusionParams,
    MotionGrid,
    PrecomputedFlow,
    differenced_motion,
    final_probability,
    temporal_average,
)
from .movable import MovableParams, movable_probability
from .splatting import DEFAULT_SHARPNESS, SplattedFrame, splat_frame

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineParams:
    movable: MovableParams = field(default_factory=MovableParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    sharpness: float = DEFAULT_SHARPNESS


@dataclass
class FrameResult:
    index: int
    probability: ProbabilityMap
    movable: ProbabilityMap
    motion: MotionGrid | None
    splats: dict[int, SplattedFrame] = field(default_factory=dict)


def relative_pose(source: FrameBundle, target: FrameBundle) -> PoseSE3:
    """Source-camera to target-camera transform from camera-to-world poses.

    Frames without poses fall back to identity (static-camera assumption)."""
    if source.pose is None or target.pose is None:
        return PoseSE3.identity()
    return target.pose.inverse().compose(source.pose)


def _masked_flow(flow: FlowField, validity: np.ndarray) -> FlowField:
    return FlowField(flow.du, flow.dv, flow.validity & validity)


def estimate_frame(
    frames: list[FrameBundle],
    index: int,
    k: Intrinsics,
    provider: FlowProvider,
    params: PipelineParams,
    keep_splats: bool = False,
) -> FrameResult:
    """Probability map for one frame given its neighborhood."""
    frame = frames[index]
    prior = movable_probability(frame.image, frame.background, params.movable)

    contributions = []
    splats: dict[int, SplattedFrame] = {}
    for j in params.fusion.offsets:
        for offset in (j, -j):
            n = index + offset
            if not 0 <= n < len(frames):
                continue
            neighbor = frames[n]
            rel = relative_pose(neighbor, frame)
            splat_dyn = splat_frame(neighbor, rel, k, params.sharpness)
            splat_bg = splat_frame(neighbor, rel, k, params.sharpness, use_background=True)
            if keep_splats:
                splats[offset] = splat_dyn
            dyn_flow = _masked_flow(
                provider.flow(frame.image, splat_dyn.to_uint8(), FlowRequest(index, offset, "dyn")),
                splat_dyn.validity,
            )
            bg_flow = _masked_flow(
                provider.flow(
                    frame.background, splat_bg.to_uint8(), FlowRequest(index, offset, "bg")
                ),
                splat_bg.validity,
            )
            contributions.append(differenced_motion(dyn_flow, bg_flow))

    if contributions:
        motion = temporal_average(contributions)
        probability = final_probability(prior, motion, params.fusion)
    else:
        # single-frame sequence: no flow evidence, the prior stands alone
        motion = None
        probability = prior
    return FrameResult(index, probability, prior, motion, splats)


def estimate_sequence(
    frames: list[FrameBundle],
    k: Intrinsics,
    provider: FlowProvider,
    params: PipelineParams | None = None,
    keep_splats: bool = False,
) -> list[FrameResult]:
    params = params or PipelineParams()
    return [
        estimate_frame(frames, i, k, provider, params, keep_splats=keep_splats)
        for i in range(len(frames))
    ]


# --- disk-backed runner -----------------------------------------------------------


class _FrameCache:
    """Loads manifest frames on demand; no eviction (windows are tiny)."""

    def __init__(self, manifest: SequenceManifest):
        self.manifest = manifest
        self._cache: dict[int, FrameBundle] = {}

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, index: int) -> FrameBundle:
        if index not in self._cache:
            self._cache[index] = self.manifest.load_frame(index)
        return self._cache[index]


class _WindowView:
    """List-like view over the cache so estimate_frame can index neighbors."""

    def __init__(self, cache: _FrameCache):
        self.cache = cache

    def __len__(self):
        return len(self.cache)

    def __getitem__(self, index):
        return self.cache[index]


def process_frames_to_disk(
    manifest: SequenceManifest,
    indices: list[int],
    provider: FlowProvider,
    params: PipelineParams,
    output_dir,
    debug: bool = False,
    dump_float: bool = False,
) -> list[tuple[int, str | None]]:
    """Run the estimator for `indices`, writing one probability image each.

    Returns (index, error message or None) per frame; failures are isolated.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = _WindowView(_FrameCache(manifest))
    results = []
    for i in indices:
        try:
            res = estimate_frame(frames, i, manifest.intrinsics, provider, params,
                                 keep_splats=debug)
            save_gray_png(out / f"{i:06d}_prob.png", res.probability.values)
            if dump_float:
                np.save(out / f"{i:06d}_prob.npy", res.probability.values.astype(np.float32))
            if debug:
                save_gray_png(out / f"{i:06d}_movable.png", res.movable.values)
                if res.motion is not None:
                    scale = params.fusion.mag_hi
                    save_gray_png(out / f"{i:06d}_motion.png",
                                  np.clip(res.motion.values / scale, 0.0, 1.0))
                for offset, splat in res.splats.items():
                    save_rgb_png(out / f"{i:06d}_splat{offset:+03d}.png", splat.to_uint8())
                    save_gray_png(out / f"{i:06d}_coverage{offset:+03d}.png",
                                  splat.validity.astype(float))
            results.append((i, None))
        except Exception as exc:  # per-frame isolation, reported by the CLI
            log.exception("frame %d failed", i)
            results.append((i, f"{type(exc).__name__}: {exc}"))
    return results


# --- configuration -----------------------------------------------------------------

CONFIG_DEFAULTS: dict[str, object] = {
    "manifest": "",
    "dataset_root": "",
    "background_root": "",
    "layout": "manifest",  # manifest | tum
    "intrinsics": "tum_fr3",  # preset name or "fx,fy,cx,cy,width,height"
    "depth_scale": DEFAULT_DEPTH_SCALE,
    "max_time_gap": DEFAULT_MAX_TIME_GAP,
    "flow_source": "baseline",  # baseline | files
    "flow_dir": "",
    "flow_patch_radius": 3,
    "flow_search_radius": 2,
    "flow_levels": 4,
    "offsets": "2",
    "mag_lo": 0.5,
    "mag_hi": 3.0,
    "clip_lo": 15.0,
    "clip_hi": 35.0,
    "lambda_scale": 0.04,
    "sharpness": DEFAULT_SHARPNESS,
    "output_dir": "out",
    "jobs": 1,
    "debug": 0,
    "dump_float": 0,
}


def parse_config_file(path) -> dict[str, str]:
    """`key = value` lines; '#' starts a comment; unknown keys are rejected."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


@dataclass
class PipelineConfig:
    raw: dict[str, object]

    @staticmethod
    def build(file_values: dict | None = None, overrides: dict | None = None) -> "PipelineConfig":
        merged: dict[str, object] = dict(CONFIG_DEFAULTS)
        for source in (file_values or {}, overrides or {}):
            for key, value in source.items():
                if key not in CONFIG_DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                if value is not None:
                    merged[key] = value
        cfg = PipelineConfig(merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    def _float(self, key) -> float:
        try:
            return float(self.raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: expected a number, got {self.raw[key]!r}") from exc

    def _int(self, key) -> int:
        try:
            return int(self.raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: expected an integer, got {self.raw[key]!r}") from exc

    def validate(self) -> None:
        if self.raw["layout"] not in ("manifest", "tum"):
            raise ConfigError(f"layout must be 'manifest' or 'tum', got {self.raw['layout']!r}")
        if self.raw["flow_source"] not in ("baseline", "files"):
            raise ConfigError(f"flow_source must be 'baseline' or 'files'")
        if self.raw["layout"] == "manifest" and not self.raw["manifest"]:
            raise ConfigError("layout 'manifest' needs the manifest key")
        if self.raw["layout"] == "tum" and not (
            self.raw["dataset_root"] and self.raw["background_root"]
        ):
            raise ConfigError("layout 'tum' needs dataset_root and background_root")
        if self.raw["flow_source"] == "files" and not self.raw["flow_dir"]:
            raise ConfigError("flow_source 'files' needs flow_dir")
        if self._int("jobs") < 1:
            raise ConfigError("jobs must be >= 1")
        self.params()  # range checks live in the param dataclasses
        self.intrinsics()

    def intrinsics(self) -> Intrinsics:
        spec = str(self.raw["intrinsics"])
        if spec in INTRINSICS_PRESETS:
            return INTRINSICS_PRESETS[spec]
        parts = spec.split(",")
        if len(parts) != 6:
            raise ConfigError(
                f"intrinsics must be a preset {sorted(INTRINSICS_PRESETS)} or "
                f"'fx,fy,cx,cy,width,height', got {spec!r}"
            )
        try:
            fx, fy, cx, cy = (float(p) for p in parts[:4])
            w, h = int(parts[4]), int(parts[5])
            return Intrinsics(fx, fy, cx, cy, w, h)
        except ValueError as exc:
            raise ConfigError(f"bad intrinsics {spec!r}: {exc}") from exc

    def params(self) -> PipelineParams:
        try:
            offsets = tuple(int(p) for p in str(self.raw["offsets"]).split(",") if p.strip())
            return PipelineParams(
                movable=MovableParams(
                    clip_lo=self._float("clip_lo"),
                    clip_hi=self._float("clip_hi"),
                    lambda_scale=self._float("lambda_scale"),
                ),
                fusion=FusionParams(
                    offsets=offsets,
                    mag_lo=self._float("mag_lo"),
                    mag_hi=self._float("mag_hi"),
                ),
                sharpness=self._float("sharpness"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def provider(self) -> FlowProvider:
        if self.raw["flow_source"] == "files":
            return PrecomputedFlow(self.raw["flow_dir"])
        return BlockMatchingFlow(
            patch_radius=self._int("flow_patch_radius"),
            search_radius=self._int("flow_search_radius"),
            max_levels=self._int("flow_levels"),
        )

    def load_sequence(self) -> SequenceManifest:
        if self.raw["layout"] == "tum":
            return load_tum_sequence(
                self.raw["dataset_root"],
                self.raw["background_root"],
                intrinsics=self.intrinsics(),
                depth_scale=self._float("depth_scale"),
                max_time_gap=self._float("max_time_gap"),
            )
        return load_manifest(self.raw["manifest"])
