"""Probability-gated map-point lifecycle and fixed-weight bundle adjustment.

Each tracked point carries a motion probability and the derived weight
w = 1 - p. The solver minimizes sum_i w_i ||x_i - proj(R X_i + t)||^2 with
damped Gauss-Newton; weights stay constant across all iterations (no robust
kernel re-weighting), so confidently static points keep full influence and
dynamic ones never regain it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import (
    BehindCameraError,
    Intrinsics,
    Point3,
    PoseSE3,
    project,
    se3_exp,
)

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12


class DegenerateProblemError(RuntimeError):
    """Normal equations are rank deficient; the problem is not well posed."""


@dataclass(frozen=True)
class TrackedPoint:
    """Abstract feature / map point with its motion probability and BA weight."""

    id: int
    pixel: tuple[float, float]
    world: Point3
    motion_prob: float
    weight: float | None = None  # derived as 1 - motion_prob when omitted

    def __post_init__(self):
        if not 0.0 <= self.motion_prob <= 1.0:
            raise ValueError(f"motion probability {self.motion_prob} outside [0, 1]")
        if self.weight is None:
            object.__setattr__(self, "weight", 1.0 - self.motion_prob)
        elif abs(self.weight - (1.0 - self.motion_prob)) > WEIGHT_TOL:
            raise ValueError(f"weight {self.weight} != 1 - {self.motion_prob}")
        object.__setattr__(self, "pixel", (float(self.pixel[0]), float(self.pixel[1])))

    def with_probability(self, prob: float) -> "TrackedPoint":
        return replace(self, motion_prob=float(prob), weight=None)


@dataclass(frozen=True)
class SelectionParams:
    p_add: float = 0.05
    p_del: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p_add <= self.p_del <= 1.0:
            raise ValueError(f"need 0 <= p_add <= p_del <= 1, got {self.p_add}, {self.p_del}")


def select_map_points(
    candidates: list[TrackedPoint], params: SelectionParams = SelectionParams()
) -> list[TrackedPoint]:
    """Keep candidates confidently static: motion_prob <= p_add (inclusive)."""
    return [c for c in candidates if c.motion_prob <= params.p_add]


def cull_map_points(
    existing: list[TrackedPoint],
    current_probs: dict[int, float],
    params: SelectionParams = SelectionParams(),
) -> list[TrackedPoint]:
    """Drop points whose current-frame probability reached p_del (inclusive).

    Observed survivors get the fresh probability and weight; unobserved points
    are retained unchanged (no evidence, no action).
    """
    survivors = []
    for pt in existing:
        prob = current_probs.get(pt.id)
        if prob is None:
            survivors.append(pt)
        elif prob < params.p_del:
            survivors.append(pt.with_probability(prob))
    return survivors


# --- bundle adjustment ----------------------------------------------------------


@dataclass
class BAProblem:
    poses: list[PoseSE3]
    pose_fixed: list[bool]
    points: list[TrackedPoint]
    point_fixed: list[bool]
    observations: list[tuple[int, int, tuple[float, float]]]  # (pose idx, point idx, pixel)
    intrinsics: Intrinsics

    def __post_init__(self):
        if len(self.poses) != len(self.pose_fixed) or len(self.points) != len(self.point_fixed):
            raise ValueError("fixed-flag lists must match poses/points")
        for pi, qi, _ in self.observations:
            if not (0 <= pi < len(self.poses) and 0 <= qi < len(self.points)):
                raise ValueError(f"observation references missing pose {pi} or point {qi}")
        if all(self.pose_fixed) and all(self.point_fixed):
            raise ValueError("problem has no free variables")

    def weights(self) -> np.ndarray:
        return np.array([self.points[qi].weight for _, qi, _ in self.observations])

    def with_state(self, poses, points) -> "BAProblem":
        return BAProblem(
            poses=list(poses),
            pose_fixed=list(self.pose_fixed),
            points=list(points),
            point_fixed=list(self.point_fixed),
            observations=list(self.observations),
            intrinsics=self.intrinsics,
        )


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    damping_init: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 10.0
    cost_rel_tol: float = 1e-10
    step_tol: float = 1e-12


@dataclass
class SolveReport:
    final_cost: float
    iterations: int
    converged: bool
    initial_cost: float
    cost_history: list[float] | None = None  # initial cost, then each accepted step


def weighted_residuals(problem: BAProblem, warn: bool = True):
    """Stacked reprojection residuals (2 per observation) with aligned weights.

    Behind-camera observations are excluded with a warning; the returned index
    list maps residual rows back to problem.observations.
    """
    residuals, weights, kept = [], [], []
    for idx, (pi, qi, measured) in enumerate(problem.observations):
        cam = problem.poses[pi].apply(problem.points[qi].world.as_array())
        if cam[2] <= 0:
            if warn:
                log.warning("observation %d: point %d behind camera %d, excluded", idx, qi, pi)
            continue
        u, v = project(Point3.from_array(cam), problem.intrinsics)
        residuals.append([measured[0] - u, measured[1] - v])
        weights.append(problem.points[qi].weight)
        kept.append(idx)
    return (
        np.asarray(residuals, dtype=float).reshape(-1, 2),
        np.asarray(weights, dtype=float),
        kept,
    )


def residual_jacobians(pose: PoseSE3, point: Point3, k: Intrinsics):
    """Analytic 2x6 (pose twist) and 2x3 (point) blocks of the residual.

    Residual is measured - projected; the pose block differentiates against a
    left-multiplied twist (rotation part first), matching the solver update
    pose' = se3_exp(delta) o pose.
    """
    cam = pose.apply(point.as_array())
    x, y, z = cam
    if z <= 0:
        raise BehindCameraError(f"point at z={z}")
    fx, fy = k.fx, k.fy
    d_proj = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
    skew = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    j_pose = np.hstack([d_proj @ skew, -d_proj])
    j_point = -d_proj @ pose.rotation
    return j_pose, j_point


def _cost(problem: BAProblem) -> float:
    res, wts, _ = weighted_residuals(problem, warn=False)
    return 0.5 * float(np.sum(wts * np.sum(res**2, axis=1)))


def _parameter_layout(problem: BAProblem):
    free_poses = [i for i, f in enumerate(problem.pose_fixed) if not f]
    free_points = [i for i, f in enumerate(problem.point_fixed) if not f]
    cols, col = {}, 0
    for i in free_poses:
        cols[("pose", i)] = col
        col += 6
    for i in free_points:
        cols[("point", i)] = col
        col += 3
    return free_poses, free_points, cols, col


def solve_weighted_ba(
    problem: BAProblem, config: SolverConfig = SolverConfig()
) -> tuple[BAProblem, SolveReport]:
    """Damped Gauss-Newton over the free poses/points of a BAProblem.

    Observation weights are read once from the problem and held constant for
    every iteration. Zero-weight observations are skipped outright, so their
    influence is bit-identical to removing them. Returns the optimized problem
    (input left untouched) and a report; raises DegenerateProblemError when
    the normal equations are rank deficient at the initial point.
    """
    free_poses, free_points, cols, n_params = _parameter_layout(problem)
    if 2 * len(problem.observations) < n_params:
        raise DegenerateProblemError(
            f"{2 * len(problem.observations)} residual rows for {n_params} parameters"
        )

    poses = list(problem.poses)
    points = list(problem.points)
    current = problem.with_state(poses, points)
    cost = _cost(current)
    initial_cost = cost
    history = [cost]
    damping = config.damping_init
    converged = cost == 0.0
    iterations = 0

    while not converged and iterations < config.max_iters:
        iterations += 1
        H = np.zeros((n_params, n_params))
        g = np.zeros(n_params)
        for pi, qi, measured in current.observations:
            w = points[qi].weight
            if w == 0.0:
                continue
            pose = poses[pi]
            cam = pose.apply(points[qi].world.as_array())
            if cam[2] <= 0:
                continue
            u, v = project(Point3.from_array(cam), current.intrinsics)
            r = np.array([measured[0] - u, measured[1] - v])
            j_pose, j_point = residual_jacobians(pose, points[qi].world, current.intrinsics)
            blocks = []
            if ("pose", pi) in cols:
                blocks.append((cols[("pose", pi)], j_pose))
            if ("point", qi) in cols:
                blocks.append((cols[("point", qi)], j_point))
            for c0, jac in blocks:
                g[c0 : c0 + jac.shape[1]] += w * (jac.T @ r)
                for c1, jac2 in blocks:
                    H[c0 : c0 + jac.shape[1], c1 : c1 + jac2.shape[1]] += w * (jac.T @ jac2)

        if iterations == 1:
            rank = np.linalg.matrix_rank(H)
            if rank < n_params:
                raise DegenerateProblemError(
                    f"normal equations rank {rank} < {n_params} parameters"
                )

        step = np.linalg.solve(H + damping * np.eye(n_params), -g)
        trial_poses = list(poses)
        trial_points = list(points)
        for i in free_poses:
            c = cols[("pose", i)]
            trial_poses[i] = se3_exp(step[c : c + 6]).compose(poses[i])
        for i in free_points:
            c = cols[("point", i)]
            moved = points[i].world.as_array() + step[c : c + 3]
            trial_points[i] = replace(points[i], world=Point3.from_array(moved))
        trial = current.with_state(trial_poses, trial_points)
        trial_cost = _cost(trial)

        if trial_cost <= cost:
            rel_drop = (cost - trial_cost) / max(cost, 1e-300)
            poses, points, current = trial_poses, trial_points, trial
            cost = trial_cost
            history.append(cost)
            damping /= config.damping_down
            if rel_drop < config.cost_rel_tol or np.linalg.norm(step) < config.step_tol:
                converged = True
        else:
            damping *= config.damping_up
            if damping > 1e12:
                break

    report = SolveReport(
        final_cost=cost,
        iterations=iterations,
        converged=converged,
        initial_cost=initial_cost,
        cost_history=history,
    )
    if not report.converged:
        log.warning("BA did not converge after %d iterations (cost %.3e)", iterations, cost)
    return current, report


# --- problem file format ----------------------------------------------------------
#
#   BAPROBLEM <n_poses> <n_points> <n_obs>
#   INTRINSICS fx fy cx cy width height
#   POSE idx fixed qw qx qy qz tx ty tz
#   POINT idx fixed x y z prob
#   OBS pose_idx point_idx u v


def save_problem(problem: BAProblem, path) -> None:
    k = problem.intrinsics
    lines = [
        f"BAPROBLEM {len(problem.poses)} {len(problem.points)} {len(problem.observations)}",
        "INTRINSICS "
        + " ".join(_fmt(v) for v in (k.fx, k.fy, k.cx, k.cy))
        + f" {k.width} {k.height}",
    ]
    for i, (pose, fixed) in enumerate(zip(problem.poses, problem.pose_fixed)):
        qx, qy, qz, qw = pose.quaternion_xyzw()
        t = pose.translation
        lines.append(
            f"POSE {i} {int(fixed)} "
            + " ".join(_fmt(v) for v in (qw, qx, qy, qz, t[0], t[1], t[2]))
        )
    for i, (pt, fixed) in enumerate(zip(problem.points, problem.point_fixed)):
        lines.append(
            f"POINT {i} {int(fixed)} "
            + " ".join(_fmt(v) for v in (pt.world.x, pt.world.y, pt.world.z, pt.motion_prob))
        )
    for pi, qi, (u, v) in problem.observations:
        lines.append(f"OBS {pi} {qi} {_fmt(u)} {_fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path) -> BAProblem:
    lines = [
        ln.strip()
        for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.startswith("#")
    ]
    if not lines or not lines[0].startswith("BAPROBLEM"):
        raise ValueError(f"{path}: missing BAPROBLEM header")
    n_poses, n_points, n_obs = (int(v) for v in lines[0].split()[1:4])
    intrinsics = None
    poses: list = [None] * n_poses
    pose_fixed = [False] * n_poses
    points: list = [None] * n_points
    point_fixed = [False] * n_points
    observations = []
    for ln in lines[1:]:
        tag, *vals = ln.split()
        if tag == "INTRINSICS":
            intrinsics = Intrinsics(
                float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]),
                int(vals[4]), int(vals[5]),
            )
        elif tag == "POSE":
            idx = int(vals[0])
            qw, qx, qy, qz = (float(v) for v in vals[2:6])
            poses[idx] = PoseSE3.from_quaternion_xyzw(
                [qx, qy, qz, qw], [float(v) for v in vals[6:9]]
            )
            pose_fixed[idx] = bool(int(vals[1]))
        elif tag == "POINT":
            idx = int(vals[0])
            points[idx] = TrackedPoint(
                id=idx,
                pixel=(math.nan, math.nan),
                world=Point3(float(vals[2]), float(vals[3]), float(vals[4])),
                motion_prob=float(vals[5]),
            )
            point_fixed[idx] = bool(int(vals[1]))
        elif tag == "OBS":
            observations.append((int(vals[0]), int(vals[1]), (float(vals[2]), float(vals[3]))))
        else:
            raise ValueError(f"{path}: unknown record {tag!r}")
    if intrinsics is None:
        raise ValueError(f"{path}: missing INTRINSICS record")
    if any(p is None for p in poses) or any(p is None for p in points):
        raise ValueError(f"{path}: header counts do not match records")
    if len(observations) != n_obs:
        raise ValueError(f"{path}: expected {n_obs} observations, found {len(observations)}")
    return BAProblem(poses, pose_fixed, points, point_fixed, observations, intrinsics)


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"
