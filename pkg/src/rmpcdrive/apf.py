"""Artificial potential field and quintic lane-change trajectory selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSigma, NoFeasibleCandidate, OutOfRoad, ValidationError

#: Lower bound on the longitudinal convergence coefficient (m^2).
SIGMA_X_FLOOR = 0.25


@dataclass(frozen=True)
class ObstacleDesc:
    """Obstacle as seen by the planner.

    ``y_dot_obs`` is only used to predict the obstacle along the rollout; the
    potential itself depends on position and longitudinal speed.
    """

    x_obs: float
    y_obs: float
    x_dot_obs: float = 0.0
    length_obs: float = 4.5
    width_obs: float = 1.8
    amp: float = 10.0
    shape_c: float = 1.0
    y_dot_obs: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.length_obs <= 0 or self.width_obs <= 0:
            raise ValidationError("obstacle length and width must be positive")
        if self.amp <= 0:
            raise ValidationError("obstacle amplitude must be positive")
        if self.shape_c < 1:
            raise ValidationError("obstacle shape exponent must be >= 1")

    def predicted(self, dt: float) -> "ObstacleDesc":
        return replace(
            self, x_obs=self.x_obs + self.x_dot_obs * dt, y_obs=self.y_obs + self.y_dot_obs * dt
        )


@dataclass(frozen=True)
class RoadDesc:
    lane_marks: tuple[float, ...] = (1.75,)
    lane_dist: float = 0.6
    y_road_min: float = -1.75
    y_road_max: float = 5.25
    amp_lane: float = 0.5
    road_gain: float = 0.005
    safety_eps: float = 0.5

    def __post_init__(self):
        if not self.y_road_min < self.y_road_max:
            raise ValidationError("road requires y_road_min < y_road_max")
        for y in self.lane_marks:
            if not self.y_road_min < y < self.y_road_max:
                raise ValidationError(f"lane mark {y} lies outside the road bounds")
        if self.lane_dist <= 0:
            raise ValidationError("lane_dist must be positive")
        if self.safety_eps < 0:
            raise ValidationError("safety_eps must be non-negative")

    @property
    def lane_centers(self) -> tuple[float, ...]:
        edges = [self.y_road_min, *sorted(self.lane_marks), self.y_road_max]
        return tuple(0.5 * (lo + hi) for lo, hi in zip(edges[:-1], edges[1:]))

    def lane_of(self, y: float) -> int:
        centers = self.lane_centers
        return int(np.argmin([abs(y - c) for c in centers]))


@dataclass(frozen=True)
class PotentialScene:
    road: RoadDesc
    obstacles: tuple[ObstacleDesc, ...] = ()

    def predicted(self, dt: float) -> "PotentialScene":
        return replace(self, obstacles=tuple(o.predicted(dt) for o in self.obstacles))


def obstacle_potential(
    obstacles: Iterable[ObstacleDesc],
    x_glo: float,
    y_glo: float,
    x_dot: float,
    eps: float = 0.0,
    sigma_floor: float = SIGMA_X_FLOOR,
) -> float:
    """Sum of the obstacle bells at ``(x_glo, y_glo)`` for ego speed ``x_dot``.

    Ahead of an obstacle the longitudinal coefficient is the smaller of the
    squared speed difference and the squared distance, mixing (m/s)^2 with
    m^2 exactly as the model prescribes; behind it, ``(L_obs + eps)^2``.
    """
    total = 0.0
    for ob in obstacles:
        dx = x_glo - ob.x_obs
        if x_glo <= ob.x_obs:
            sigma_x = min((x_dot - ob.x_dot_obs) ** 2, dx * dx)
        else:
            sigma_x = (ob.length_obs + eps) ** 2
        sigma_x = max(sigma_x, sigma_floor)
        if sigma_x <= 0:
            raise DegenerateSigma(f"sigma_x = 0 for obstacle {ob.name or ob}")
        sigma_y = (ob.width_obs / 2.0) ** 2
        dy = y_glo - ob.y_obs
        arg = dx * dx / (2.0 * sigma_x) + dy * dy / (2.0 * sigma_y)
        total += ob.amp * math.exp(-(arg**ob.shape_c))
    return total


def lane_potential(road: RoadDesc, y_glo: float) -> float:
    d2 = road.lane_dist**2
    return sum(road.amp_lane * math.exp(-((y_glo - y) ** 2) / d2) for y in road.lane_marks)


def road_potential(road: RoadDesc, y_glo: float) -> float:
    if not road.y_road_min < y_glo < road.y_road_max:
        raise OutOfRoad(f"y={y_glo} outside ({road.y_road_min}, {road.y_road_max})")
    inner = 1.0 / (y_glo - road.y_road_max) - 1.0 / (y_glo - road.y_road_min)
    return 0.5 * road.road_gain * inner * inner


def potential_terms(scene: PotentialScene, x_glo: float, y_glo: float, x_dot: float):
    """``(J_obs, J_lane, J_road)`` at one point."""
    road = scene.road
    return (
        obstacle_potential(scene.obstacles, x_glo, y_glo, x_dot, road.safety_eps),
        lane_potential(road, y_glo),
        road_potential(road, y_glo),
    )


def total_potential(scene: PotentialScene, x_glo: float, y_glo: float, x_dot: float) -> float:
    j_obs, j_lane, j_road = potential_terms(scene, x_glo, y_glo, x_dot)
    return j_obs + j_lane + j_road


# -- quintic references ------------------------------------------------------


@dataclass(frozen=True)
class QuinticRef:
    """Lateral quintic ``y(s) = sum c_i s^i`` over progress ``s = x_rel / x_m``.

    Beyond the maneuver the path holds ``y1``; before it, ``y0``.
    """

    coeffs: tuple[float, ...]
    y0: float
    y1: float
    x_m: float

    def _s(self, x_rel):
        return np.clip(np.asarray(x_rel, dtype=float) / self.x_m, 0.0, 1.0)

    def y(self, x_rel):
        s = self._s(x_rel)
        return np.polynomial.polynomial.polyval(s, self.coeffs)

    def dy(self, x_rel):
        """dy/dx (per metre)."""
        s = self._s(x_rel)
        inside = (np.asarray(x_rel) >= 0) & (np.asarray(x_rel) <= self.x_m)
        d = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.coeffs))
        return np.where(inside, d / self.x_m, 0.0)

    def ddy(self, x_rel):
        s = self._s(x_rel)
        inside = (np.asarray(x_rel) >= 0) & (np.asarray(x_rel) <= self.x_m)
        d = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.coeffs, 2))
        return np.where(inside, d / self.x_m**2, 0.0)


def quintic_path(y0: float, y1: float, x_m: float, dy0: float = 0.0, ddy0: float = 0.0) -> QuinticRef:
    """Quintic from ``y0`` to ``y1`` over ``x_m`` metres, flat at the end.

    ``dy0``/``ddy0`` are the initial slope (dy/dx) and curvature (d2y/dx2);
    with both zero this is the smoothstep ``y0 + (y1-y0)(10s^3 - 15s^4 + 6s^5)``.
    """
    if x_m <= 0:
        raise ValueError("maneuver length must be positive")
    # derivatives with respect to normalized progress s
    d1, d2 = dy0 * x_m, ddy0 * x_m**2
    c0, c1, c2 = y0, d1, d2 / 2.0
    # remaining coefficients from y(1)=y1, y'(1)=0, y''(1)=0
    rhs = np.array([y1 - c0 - c1 - c2, -c1 - 2 * c2, -2 * c2])
    m = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    c3, c4, c5 = np.linalg.solve(m, rhs)
    return QuinticRef((c0, c1, c2, float(c3), float(c4), float(c5)), y0, y1, x_m)


@dataclass(frozen=True)
class ShiftedPath:
    """A path re-expressed from a later origin: ``y(x_rel) = base.y(x_rel + shift)``."""

    base: "QuinticRef | ShiftedPath"
    shift: float

    @property
    def y1(self) -> float:
        return self.base.y1

    def y(self, x_rel):
        return self.base.y(np.asarray(x_rel, dtype=float) + self.shift)

    def dy(self, x_rel):
        return self.base.dy(np.asarray(x_rel, dtype=float) + self.shift)

    def ddy(self, x_rel):
        return self.base.ddy(np.asarray(x_rel, dtype=float) + self.shift)


# -- trajectory selection ------------------------------------------------------


@dataclass(frozen=True)
class PlannerWeights:
    q_traj: float = 1.0
    r_traj: float = 0.01
    s_traj: float = 20.0
    n_traj: int = 60
    ts_plan: float = 0.1
    potential_ceiling: float = math.inf

    def __post_init__(self):
        if self.n_traj < 2:
            raise ValidationError("n_traj must be >= 2")
        if min(self.q_traj, self.r_traj, self.s_traj) < 0:
            raise ValidationError("planner weights must be non-negative")
        if self.ts_plan <= 0:
            raise ValidationError("ts_plan must be positive")

    def scaled(self, k: float) -> "PlannerWeights":
        return replace(self, q_traj=k * self.q_traj, r_traj=k * self.r_traj, s_traj=k * self.s_traj)


@dataclass(frozen=True)
class CandidateSet:
    offsets: tuple[float, ...] = (-0.5, 0.0, 0.5)
    lengths: tuple[float, ...] = (40.0, 60.0, 80.0)
    #: maneuver length of the tracking reference toward the commanded lane
    ref_length: float = 60.0


@dataclass(frozen=True)
class EgoPlanState:
    """Where a plan starts: position, speed and the lateral slope/curvature
    of the reference it continues from (zero for a fresh start)."""

    x: float
    y: float
    v_x: float
    dy: float = 0.0
    ddy: float = 0.0


@dataclass
class PlannedTrajectory:
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray
    ts_plan: float
    v_x: float
    cost: float
    breakdown: dict
    path: "QuinticRef | ShiftedPath"
    x0: float
    target_y: float
    label: str = ""
    t0: float = 0.0

    @property
    def n_samples(self) -> int:
        return len(self.x)

    def lateral_state(self, x: float):
        """Reference ``(y, dy/dx, d2y/dx2)`` at station ``x``."""
        rel = x - self.x0
        return float(self.path.y(rel)), float(self.path.dy(rel)), float(self.path.ddy(rel))


@dataclass
class _Scored:
    index: int
    label: str
    path: "QuinticRef | ShiftedPath"
    y: np.ndarray
    cost: float
    breakdown: dict
    feasible: bool
    reason: str = ""


def candidate_paths(ego: EgoPlanState, road: RoadDesc, cands: CandidateSet, current=None):
    """Enumerate ``(label, path)``: lane-keep first, then the remainder of the
    ``current`` trajectory when given, then targets x lengths."""
    out = [("keep", quintic_path(ego.y, ego.y, min(cands.lengths), ego.dy, ego.ddy))]
    if current is not None:
        out.append(("continue", ShiftedPath(current.path, ego.x - current.x0)))
    for c in road.lane_centers:
        for off in cands.offsets:
            for x_m in cands.lengths:
                tgt = c + off
                out.append(
                    (f"y={tgt:+.2f}/L={x_m:g}", quintic_path(ego.y, tgt, x_m, ego.dy, ego.ddy))
                )
    return out


def score_candidate(
    path: QuinticRef,
    y_ref: np.ndarray,
    scene: PotentialScene,
    ego: EgoPlanState,
    w: PlannerWeights,
):
    """Rollout cost of one path. Returns ``(y samples, cost, breakdown, feasible, reason)``."""
    dx = ego.v_x * w.ts_plan
    xs_rel = dx * np.arange(w.n_traj + 1)
    y = np.asarray(path.y(xs_rel), dtype=float)
    track = w.q_traj * float(np.sum((y[1:] - y_ref[1:]) ** 2))
    # y[-1] from the initial slope/curvature so a continued plan is not penalized at its seam
    y_prev = ego.y - ego.dy * dx + 0.5 * ego.ddy * dx * dx
    ext = np.concatenate([[y_prev], y])
    u = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / w.ts_plan**2
    inp = w.r_traj * float(np.sum(u**2))
    pot = 0.0
    for k in range(1, w.n_traj + 1):
        t_k = k * w.ts_plan
        try:
            j = total_potential(scene.predicted(t_k), ego.x + xs_rel[k], y[k], ego.v_x)
        except OutOfRoad:
            return y, math.inf, {}, False, "out of road"
        if j > w.potential_ceiling:
            return y, math.inf, {}, False, "potential ceiling"
        pot += j
    cost = track + inp + w.s_traj * pot
    return y, cost, {"tracking": track, "input": inp, "potential": pot}, True, ""


def plan_trajectory(
    scene: PotentialScene,
    ego: EgoPlanState,
    weights: PlannerWeights,
    candidates: CandidateSet = CandidateSet(),
    target_y: float | None = None,
    t0: float = 0.0,
    return_all: bool = False,
    current: PlannedTrajectory | None = None,
    reference: "tuple[QuinticRef | ShiftedPath, float] | None" = None,
):
    """Pick the cheapest candidate maneuver.

    The tracking term compares each rollout with the quintic from the start
    state to ``target_y`` (default: the center of the lane the ego is in).
    Passing the ``current`` trajectory adds its continuation as a candidate,
    so a replan only switches maneuvers when that pays off. ``reference``
    ``(path, x_origin)`` overrides the tracking quintic, letting the caller
    keep one anchored reference per commanded lane. Ties go to the lowest
    candidate index.
    """
    if not scene.road.y_road_min < ego.y < scene.road.y_road_max:
        raise OutOfRoad(f"ego y={ego.y} outside the road")
    if target_y is None:
        target_y = scene.road.lane_centers[scene.road.lane_of(ego.y)]
    dx = ego.v_x * weights.ts_plan
    xs_rel = dx * np.arange(weights.n_traj + 1)
    if reference is None:
        ref = quintic_path(ego.y, target_y, candidates.ref_length, ego.dy, ego.ddy)
        y_ref = np.asarray(ref.y(xs_rel), dtype=float)
    else:
        path, x_origin = reference
        y_ref = np.asarray(path.y(ego.x - x_origin + xs_rel), dtype=float)

    scored = []
    for i, (label, path) in enumerate(candidate_paths(ego, scene.road, candidates, current)):
        y, cost, br, ok, why = score_candidate(path, y_ref, scene, ego, weights)
        scored.append(_Scored(i, label, path, y, cost, br, ok, why))
    feasible = [s for s in scored if s.feasible]
    if not feasible:
        raise NoFeasibleCandidate("all candidates leave the road or exceed the potential ceiling")
    best = min(feasible, key=lambda s: (s.cost, s.index))
    traj = _to_trajectory(best, ego, weights, target_y, t0)
    if return_all:
        return traj, scored
    return traj


def _to_trajectory(best: _Scored, ego: EgoPlanState, w: PlannerWeights, target_y, t0):
    dx = ego.v_x * w.ts_plan
    x = ego.x + dx * np.arange(w.n_traj + 1)
    y = best.y
    psi = np.arctan2(np.diff(y), dx)
    psi = np.concatenate([psi, psi[-1:]])
    psi_dot = np.diff(psi) / w.ts_plan
    psi_dot = np.concatenate([psi_dot, psi_dot[-1:]])
    return PlannedTrajectory(
        x=x,
        y=y.copy(),
        psi=psi,
        psi_dot=psi_dot,
        ts_plan=w.ts_plan,
        v_x=ego.v_x,
        cost=best.cost,
        breakdown=dict(best.breakdown),
        path=best.path,
        x0=ego.x,
        target_y=target_y,
        label=best.label,
        t0=t0,
    )


def min_clearance_to_centers(traj: PlannedTrajectory, obstacles: Sequence[ObstacleDesc]) -> float:
    """Smallest distance from a trajectory sample to a (predicted) obstacle center."""
    best = math.inf
    for k in range(traj.n_samples):
        t_k = k * traj.ts_plan
        for ob in obstacles:
            p = ob.predicted(t_k)
            best = min(best, math.hypot(traj.x[k] - p.x_obs, traj.y[k] - p.y_obs))
    return best


def potential_grid(scene: PotentialScene, xs: Sequence[float], ys: Sequence[float], x_dot: float):
    """``J_syn`` on a grid, rows over ``ys``; cells on/outside the road are NaN."""
    out = np.full((len(ys), len(xs)), np.nan)
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            try:
                out[i, j] = total_potential(scene, float(xv), float(yv), x_dot)
            except OutOfRoad:
                pass
    return out
