"""Moving-region estimation: flow magnitudes, static/dynamic flow differencing,
temporal averaging across frame offsets, and the final per-pixel probability.

Also provides the built-in dense flow estimator (coarse-to-fine block
matching) and a file-backed provider for flows computed by external tools.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from . import flowio
from .geometry import GeometryError, ImageBuffer, ProbabilityMap, _readonly


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement (du, dv) with a validity mask."""

    du: np.ndarray
    dv: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        du = np.asarray(self.du, dtype=float)
        dv = np.asarray(self.dv, dtype=float)
        m = np.asarray(self.validity, dtype=bool)
        if du.ndim != 2 or du.shape != dv.shape or du.shape != m.shape:
            raise GeometryError("flow component shapes disagree")
        if not (np.all(np.isfinite(du[m])) and np.all(np.isfinite(dv[m]))):
            raise GeometryError("non-finite flow on valid pixels")
        object.__setattr__(self, "du", _readonly(du))
        object.__setattr__(self, "dv", _readonly(dv))
        object.__setattr__(self, "validity", _readonly(m, bool))

    @staticmethod
    def zero(shape) -> "FlowField":
        z = np.zeros(shape)
        return FlowField(z, z, np.ones(shape, dtype=bool))

    @property
    def shape(self):
        return self.du.shape


@dataclass(frozen=True)
class MotionGrid:
    """Per-pixel motion magnitude (pixels) with a validity mask."""

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.validity, dtype=bool)
        if v.ndim != 2 or v.shape != m.shape:
            raise GeometryError("motion grid shapes disagree")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "validity", _readonly(m, bool))


@dataclass(frozen=True)
class FusionParams:
    offsets: tuple[int, ...] = (2,)
    mag_lo: float = 0.5
    mag_hi: float = 3.0

    def __post_init__(self):
        if not self.offsets or any(j <= 0 for j in self.offsets):
            raise ValueError(f"offsets must be positive integers, got {self.offsets}")
        if not (0 <= self.mag_lo < self.mag_hi):
            raise ValueError(f"bad magnitude interval [{self.mag_lo}, {self.mag_hi}]")
        object.__setattr__(self, "offsets", tuple(sorted(set(int(j) for j in self.offsets))))


def flow_magnitude(f: FlowField) -> MotionGrid:
    """Per-pixel Euclidean displacement norm."""
    return MotionGrid(np.where(f.validity, np.hypot(f.du, f.dv), 0.0), f.validity)


def differenced_motion(dyn_flow: FlowField, bg_flow: FlowField) -> MotionGrid:
    """min(|F_dyn|, |F_dyn - F_bg|): cancels estimation error shared with the
    static layer while the min guards against inflating noisy subtractions.

    Where the background flow is invalid the raw dynamic magnitude is kept;
    where the dynamic flow itself is invalid the pixel stays invalid.
    """
    if dyn_flow.shape != bg_flow.shape:
        raise GeometryError(f"flow dimensions disagree: {dyn_flow.shape} vs {bg_flow.shape}")
    mag_dyn = np.hypot(dyn_flow.du, dyn_flow.dv)
    mag_diff = np.hypot(dyn_flow.du - bg_flow.du, dyn_flow.dv - bg_flow.dv)
    both = dyn_flow.validity & bg_flow.validity
    values = np.where(both, np.minimum(mag_dyn, mag_diff), mag_dyn)
    values = np.maximum(np.where(dyn_flow.validity, values, 0.0), 0.0)
    return MotionGrid(values, dyn_flow.validity)


def temporal_average(per_offset_motion: Sequence[MotionGrid]) -> MotionGrid:
    """Per-pixel mean over the supplied contributions.

    With both +j and -j grids for every offset this is exactly the 1/(2n)
    average; at sequence boundaries callers pass whatever neighbors exist and
    the divisor follows the actual per-pixel valid count.
    """
    if not per_offset_motion:
        raise ValueError("temporal_average needs at least one contribution")
    shape = per_offset_motion[0].values.shape
    total = np.zeros(shape)
    count = np.zeros(shape)
    for grid in per_offset_motion:
        if grid.values.shape != shape:
            raise GeometryError("contribution dimensions disagree")
        total += np.where(grid.validity, grid.values, 0.0)
        count += grid.validity
    validity = count > 0
    values = np.divide(total, count, out=np.zeros(shape), where=validity)
    return MotionGrid(values, validity)


def final_probability(
    p_m: ProbabilityMap, motion: MotionGrid, params: FusionParams = FusionParams()
) -> ProbabilityMap:
    """Blend the movable prior with clip-normalized motion magnitude.

    Invalid motion pixels (splatting holes with no usable flow) fall back to
    the prior alone so missing data never hides motion.
    """
    if p_m.shape != motion.values.shape:
        raise GeometryError(f"dimension mismatch: {p_m.shape} vs {motion.values.shape}")
    norm = np.clip((motion.values - params.mag_lo) / (params.mag_hi - params.mag_lo), 0.0, 1.0)
    values = np.where(motion.validity, p_m.values * norm, p_m.values)
    return ProbabilityMap(values, p_m.validity)


# --- flow providers -----------------------------------------------------------


@dataclass(frozen=True)
class FlowRequest:
    """Identifies which pipeline flow is being asked for (file lookup key)."""

    frame_index: int
    offset: int
    layer: str  # "dyn" or "bg"


class FlowProvider(Protocol):
    def flow(
        self, a: ImageBuffer, b: ImageBuffer, request: FlowRequest | None = None
    ) -> FlowField: ...


class BlockMatchingFlow:
    """Built-in estimator wrapping :func:`block_matching_flow`."""

    def __init__(self, patch_radius: int = 3, search_radius: int = 2, max_levels: int = 4):
        self.patch_radius = patch_radius
        self.search_radius = search_radius
        self.max_levels = max_levels

    def flow(self, a, b, request=None) -> FlowField:
        return block_matching_flow(
            a,
            b,
            patch_radius=self.patch_radius,
            search_radius=self.search_radius,
            max_levels=self.max_levels,
        )


class PrecomputedFlow:
    """Reads flows from .flo files named {frame:06d}_{offset:+03d}_{layer}.flo."""

    def __init__(self, directory, pattern: str = "{frame:06d}_{offset:+03d}_{layer}.flo"):
        self.directory = Path(directory)
        self.pattern = pattern

    def flow(self, a, b, request: FlowRequest | None = None) -> FlowField:
        if request is None:
            raise ValueError("file-backed flow lookup needs a FlowRequest")
        name = self.pattern.format(
            frame=request.frame_index, offset=request.offset, layer=request.layer
        )
        du, dv, validity = flowio.read_flo(self.directory / name)
        if du.shape != a.shape:
            raise GeometryError(f"{name}: flow shape {du.shape} does not match frame {a.shape}")
        return FlowField(du, dv, validity)


# --- built-in coarse-to-fine block matching ------------------------------------

_TIE_PENALTY = 1e-6  # prefers the smaller displacement on flat-cost ties


def _to_gray(img: ImageBuffer) -> np.ndarray:
    c = img.channels.astype(np.float64)
    return 0.299 * c[:, :, 0] + 0.587 * c[:, :, 1] + 0.114 * c[:, :, 2]


def _downsample2(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    v = img[: h2 * 2, : w2 * 2]
    return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])


def _sample_clamped(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    return (
        img[y0, x0] * (1 - ax) * (1 - ay)
        + img[y0, x1] * ax * (1 - ay)
        + img[y1, x0] * (1 - ax) * ay
        + img[y1, x1] * ax * ay
    )


def _refine_level(
    a: np.ndarray, b: np.ndarray, u: np.ndarray, v: np.ndarray, patch: int, search: int
):
    h, w = a.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    warped = _sample_clamped(b, xs + u, ys + v)
    pad = np.pad(warped, search, mode="edge")

    k = 2 * search + 1
    costs = np.empty((k, k, h, w))
    for iy in range(k):
        for ix in range(k):
            dy, dx = iy - search, ix - search
            shifted = pad[search + dy : search + dy + h, search + dx : search + dx + w]
            sq = (a - shifted) ** 2
            costs[iy, ix] = ndimage.uniform_filter(sq, size=2 * patch + 1, mode="nearest")
            costs[iy, ix] += _TIE_PENALTY * (dx * dx + dy * dy)

    flat = costs.reshape(k * k, h, w)
    best = np.argmin(flat, axis=0)
    iy = best // k
    ix = best % k
    rows, cols = np.ogrid[:h, :w]

    def at(jy, jx):
        return costs[np.clip(jy, 0, k - 1), np.clip(jx, 0, k - 1), rows, cols]

    c0 = costs[iy, ix, rows, cols]
    dx_sub = _parabolic_offset(at(iy, ix - 1), c0, at(iy, ix + 1))
    dy_sub = _parabolic_offset(at(iy - 1, ix), c0, at(iy + 1, ix))
    dx_sub = np.where((ix > 0) & (ix < k - 1), dx_sub, 0.0)
    dy_sub = np.where((iy > 0) & (iy < k - 1), dy_sub, 0.0)

    return u + (ix - search) + dx_sub, v + (iy - search) + dy_sub


def _parabolic_offset(cm: np.ndarray, c0: np.ndarray, cp: np.ndarray) -> np.ndarray:
    denom = cm + cp - 2.0 * c0
    off = np.divide(cm - cp, 2.0 * denom, out=np.zeros_like(c0), where=denom > 0)
    return np.clip(off, -0.5, 0.5)


def block_matching_flow(
    a: ImageBuffer,
    b: ImageBuffer,
    patch_radius: int = 3,
    search_radius: int = 2,
    max_levels: int = 4,
    smooth_size: int = 5,
) -> FlowField:
    """Dense flow from a to b by coarse-to-fine patch matching.

    At every pyramid level the second image is warped by the current estimate,
    residual integer displacements are found by exhaustive SSD search, refined
    to sub-pixel by parabola fitting, then median-smoothed. Deterministic;
    bit-identical inputs return an exactly zero field.
    """
    if a.shape != b.shape:
        raise GeometryError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if np.array_equal(a.channels, b.channels):
        return FlowField.zero(a.shape)

    ga, gb = _to_gray(a), _to_gray(b)
    pyramid = [(ga, gb)]
    min_side = 2 * (2 * patch_radius + 1)
    while len(pyramid) < max_levels and min(pyramid[-1][0].shape) // 2 >= min_side:
        pyramid.append((_downsample2(pyramid[-1][0]), _downsample2(pyramid[-1][1])))

    u = np.zeros(pyramid[-1][0].shape)
    v = np.zeros(pyramid[-1][0].shape)
    for level, (la, lb) in enumerate(reversed(pyramid)):
        if level > 0:
            u = 2.0 * _upsample_to(u, la.shape)
            v = 2.0 * _upsample_to(v, la.shape)
        u, v = _refine_level(la, lb, u, v, patch_radius, search_radius)
        u = ndimage.median_filter(u, size=smooth_size, mode="nearest")
        v = ndimage.median_filter(v, size=smooth_size, mode="nearest")
    return FlowField(u, v, np.ones(a.shape, dtype=bool))


def _upsample_to(field: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    sh, sw = field.shape
    ys = np.arange(h) * (sh / h)
    xs = np.arange(w) * (sw / w)
    return _sample_clamped(field, *np.meshgrid(xs, ys))
