"""Trajectory metrics: ATE RMSE after rigid alignment, and tracking rate.

Alignment is rigid only (no scale): RGB-D recovers metric scale, and scale
fitting would mask real error. Tracking rate is the contiguous first-to-last
tracked span over the sequence duration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import associate_timestamps
from .dataset import read_trajectory_file, write_trajectory_file
from .geometry import PoseSE3


class EvaluationError(ValueError):
    pass


@dataclass
class Trajectory:
    timestamps: np.ndarray
    poses: list[PoseSE3]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.timestamps) != len(self.poses):
            raise EvaluationError("timestamp/pose count mismatch")
        if np.any(np.diff(self.timestamps) <= 0):
            raise EvaluationError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    @staticmethod
    def load(path) -> "Trajectory":
        stamps, poses = read_trajectory_file(path)
        return Trajectory(stamps, poses)

    def save(self, path) -> None:
        write_trajectory_file(path, self.timestamps, self.poses)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass
class EvalReport:
    ate_rmse: float
    tracking_rate: float
    matched_pairs: int
    alignment: RigidTransform

    def as_lines(self) -> list[str]:
        return [
            f"matched_pairs {self.matched_pairs}",
            f"ate_rmse {self.ate_rmse:.9f}",
            f"tracking_rate {self.tracking_rate:.6f}",
        ]

    def summary(self) -> str:
        return (
            f"ATE RMSE {self.ate_rmse * 100:.2f} cm over {self.matched_pairs} pairs, "
            f"tracking rate {self.tracking_rate:.2f}"
        )


def associate_trajectories(
    est: Trajectory, gt: Trajectory, max_gap: float = 0.02
) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp pairing; each pose matched at most once."""
    if len(est) == 0 or len(gt) == 0:
        raise EvaluationError("cannot associate empty trajectories")
    matches = associate_timestamps(est.timestamps, gt.timestamps, max_gap)
    if not matches:
        raise EvaluationError("no timestamp pairs within the association gap")
    return matches


def align_umeyama(est_positions: np.ndarray, gt_positions: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform taking estimated positions onto ground truth."""
    est = np.asarray(est_positions, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt_positions, dtype=float).reshape(-1, 3)
    if est.shape != gt.shape or len(est) < 3:
        raise EvaluationError("alignment needs >= 3 corresponding positions")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    cov = (gt - mu_g).T @ (est - mu_e)
    if np.linalg.matrix_rank(cov) < 2:
        raise EvaluationError("degenerate geometry: positions are collinear")
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return RigidTransform(R, mu_g - R @ mu_e)


def ate_rmse(
    est_positions: np.ndarray, gt_positions: np.ndarray, alignment: RigidTransform
) -> float:
    est = np.asarray(est_positions, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt_positions, dtype=float).reshape(-1, 3)
    if len(est) == 0 or est.shape != gt.shape:
        raise EvaluationError("need matching non-empty position arrays")
    err = alignment.apply(est) - gt
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def tracking_rate(est: Trajectory | None, span: tuple[float, float]) -> float:
    """Tracked-time fraction: (last - first estimate stamp) / sequence span."""
    t0, t1 = span
    if not t1 > t0:
        raise EvaluationError(f"bad sequence span [{t0}, {t1}]")
    if est is None or len(est) == 0:
        return 0.0
    tracked = float(est.timestamps[-1] - est.timestamps[0])
    return float(np.clip(tracked / (t1 - t0), 0.0, 1.0))


def evaluate(
    est: Trajectory,
    gt: Trajectory,
    span: tuple[float, float] | None = None,
    max_gap: float = 0.02,
) -> EvalReport:
    """Associate, align, and score one estimated trajectory against truth."""
    matches = associate_trajectories(est, gt, max_gap)
    est_pos = est.positions()[[i for i, _ in matches]]
    gt_pos = gt.positions()[[j for _, j in matches]]
    if len(matches) >= 3:
        try:
            alignment = align_umeyama(est_pos, gt_pos)
        except EvaluationError:
            alignment = RigidTransform.identity()
    else:
        alignment = RigidTransform.identity()
    if span is None:
        span = (float(gt.timestamps[0]), float(gt.timestamps[-1]))
    return EvalReport(
        ate_rmse=ate_rmse(est_pos, gt_pos, alignment),
        tracking_rate=tracking_rate(est, span),
        matched_pairs=len(matches),
        alignment=alignment,
    )
