"""Middlebury .flo flow file reading and writing.

Layout: 4 magic bytes "PIEH" (the float32 202021.25), width and height as
little-endian int32, then row-major interleaved (du, dv) float32 pairs.
Invalid pixels use the conventional huge sentinel (|value| > 1e9).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FLO_MAGIC = b"PIEH"
INVALID_SENTINEL = 1e10
_INVALID_CUTOFF = 1e9


class FlowFileError(IOError):
    pass


def read_flo(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a .flo file; returns (du, dv, validity) float64/bool grids."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FLO_MAGIC:
        raise FlowFileError(f"{path}: not a Middlebury flow file")
    w, h = struct.unpack("<ii", raw[4:12])
    if w <= 0 or h <= 0:
        raise FlowFileError(f"{path}: bad dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FlowFileError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float64)
    du, dv = data[:, :, 0], data[:, :, 1]
    validity = (np.abs(du) < _INVALID_CUTOFF) & (np.abs(dv) < _INVALID_CUTOFF)
    return np.where(validity, du, 0.0), np.where(validity, dv, 0.0), validity


def write_flo(path, du: np.ndarray, dv: np.ndarray, validity: np.ndarray | None = None) -> None:
    du = np.asarray(du, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    if du.shape != dv.shape or du.ndim != 2:
        raise FlowFileError(f"flow component shapes disagree: {du.shape} vs {dv.shape}")
    h, w = du.shape
    data = np.stack([du, dv], axis=2)
    if validity is not None:
        data = np.where(np.asarray(validity, bool)[:, :, None], data, INVALID_SENTINEL)
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(data.astype("<f4").tobytes())
