"""Movable-region probability from static/dynamic background differencing.

A frame of a dynamic scene is compared against its static-background
counterpart; large per-pixel differences mark places where motion can occur
(objects, their shadows, reflections). Two normalizations of the difference
are blended into a per-pixel prior in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, ImageBuffer, ProbabilityMap, _readonly


@dataclass(frozen=True)
class MovableParams:
    clip_lo: float = 15.0
    clip_hi: float = 35.0
    lambda_scale: float = 0.04

    def __post_init__(self):
        if not (0 <= self.clip_lo < self.clip_hi <= 255):
            raise ValueError(f"bad clip interval [{self.clip_lo}, {self.clip_hi}]")
        if not self.lambda_scale > 0:
            raise ValueError("lambda_scale must be positive")


@dataclass(frozen=True)
class DiffChannels:
    """Channel-reduced absolute difference: per-pixel max and mean over RGB."""

    max_diff: np.ndarray
    mean_diff: np.ndarray

    def __post_init__(self):
        mx = np.asarray(self.max_diff, dtype=float)
        mn = np.asarray(self.mean_diff, dtype=float)
        if mx.shape != mn.shape or mx.ndim != 2:
            raise ValueError(f"diff channel shapes disagree: {mx.shape} vs {mn.shape}")
        if np.any(mx < mn) or mx.min(initial=0) < 0 or mx.max(initial=0) > 255:
            raise ValueError("diff channels must satisfy 0 <= mean <= max <= 255")
        object.__setattr__(self, "max_diff", _readonly(mx))
        object.__setattr__(self, "mean_diff", _readonly(mn))


def background_difference(frame: ImageBuffer, background: ImageBuffer) -> DiffChannels:
    """Channelwise |frame - background| reduced by max and mean per pixel."""
    if frame.shape != background.shape:
        raise GeometryError(f"dimension mismatch: {frame.shape} vs {background.shape}")
    diff = np.abs(frame.channels.astype(np.int16) - background.channels.astype(np.int16))
    return DiffChannels(
        max_diff=diff.max(axis=2).astype(float),
        mean_diff=diff.sum(axis=2, dtype=np.float64) / 3.0,
    )


def clip_normalize(values: np.ndarray, params: MovableParams = MovableParams()) -> np.ndarray:
    """Map intensities to [0, 1] linearly over [clip_lo, clip_hi], clamped."""
    scaled = (np.asarray(values, dtype=float) - params.clip_lo) / (params.clip_hi - params.clip_lo)
    return np.clip(scaled, 0.0, 1.0)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Min-max normalization over the whole frame; constant frames map to 0."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def blend_weight(mean_diff: np.ndarray, params: MovableParams = MovableParams()) -> float:
    """Scalar weight in (0.5, 1.0] favoring the clipped term on quiet frames.

    Large frame-wide mean differences push the weight toward 0.5, letting the
    min-max term participate; an identical frame pair yields exactly 1.0 so the
    (degenerate) min-max term is fully suppressed.
    """
    peak = float(np.asarray(mean_diff, dtype=float).max())
    return 0.5 + 1.0 / (np.exp(params.lambda_scale * peak) + 1.0)


def movable_probability(
    frame: ImageBuffer, background: ImageBuffer, params: MovableParams = MovableParams()
) -> ProbabilityMap:
    """Per-pixel movable-region prior from background differencing."""
    diff = background_difference(frame, background)
    lam = blend_weight(diff.mean_diff, params)
    values = lam * clip_normalize(diff.max_diff, params) + (1.0 - lam) * minmax_normalize(
        diff.mean_diff
    )
    return ProbabilityMap.full(values)
