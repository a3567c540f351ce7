"""Closed-loop scenario simulation.

The plant is a linear-tire single-track model whose stiffnesses are scaled
by the road adhesion, integrated with RK4. Surrounding traffic follows the
IDM, pedestrians walk a trapezoidal speed profile, and V2X events reveal
hazards to the planner. The controller only ever sees the tracking error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .apf import (
    CandidateSet,
    EgoPlanState,
    ObstacleDesc,
    PlannedTrajectory,
    PlannerWeights,
    PotentialScene,
    RoadDesc,
    plan_trajectory,
    quintic_path,
)
from .controllers import CONTROLLER_NAMES, Controller, ControllerState
from .errors import NoFeasibleCandidate, OffTrajectory, OutOfRoad, ValidationError
from .idm import IdmParams, LongitudinalState, Platoon, SpeedProfile, make_platoon, platoon_step
from .vehicle import ChassisParams, ErrorState

#: Ego footprint (m).
EGO_LENGTH = 4.5
EGO_WIDTH = 1.8
#: IDM integration step (s).
IDM_DT = 0.1
#: Replan period while a hazard is active (s).
REPLAN_PERIOD = 0.5
#: Longitudinal window around the ego in which a known obstacle keeps a hazard active (m).
HAZARD_BEHIND = 50.0
HAZARD_AHEAD = 150.0
#: Distance ahead at which a slower obstacle makes the behavior layer leave a lane (m).
LANE_BLOCK_LOOKAHEAD = 120.0

LOG_COLUMNS = (
    "t", "X", "Y", "psi", "vy", "psidot", "ey", "eydot", "epsi", "epsidot",
    "delta_f", "du", "step_ms", "region_flag",
)  # fmt: skip


# -- plant -----------------------------------------------------------------------


@dataclass(frozen=True)
class PlantState:
    X: float = 0.0
    Y: float = 0.0
    psi: float = 0.0
    v_y: float = 0.0
    psi_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.psi, self.v_y, self.psi_dot])


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _plant_rhs(s: np.ndarray, delta: float, v_x: float, c_f: float, c_r: float, p: ChassisParams):
    _, _, psi, vy, r = s
    alpha_f = delta - (vy + p.l_f * r) / v_x
    alpha_r = -(vy - p.l_r * r) / v_x
    fyf = 2.0 * c_f * alpha_f * math.cos(delta)
    fyr = 2.0 * c_r * alpha_r
    return np.array(
        [
            v_x * math.cos(psi) - vy * math.sin(psi),
            v_x * math.sin(psi) + vy * math.cos(psi),
            r,
            (fyf + fyr) / p.m - v_x * r,
            (p.l_f * fyf - p.l_r * fyr) / p.i_z,
        ]
    )


def plant_step(
    ps: PlantState, delta_f: float, v_x: float, mu: float, chassis: ChassisParams, ts: float
) -> PlantState:
    """One RK4 step of the single-track plant with stiffnesses ``mu * C``."""
    if v_x <= 0:
        raise ValueError("v_x must be positive")
    if not 0 < mu <= 1:
        raise ValueError(f"adhesion must lie in (0, 1], got {mu}")
    cf, cr = mu * chassis.c_f, mu * chassis.c_r
    s = ps.as_array()
    f = lambda z: _plant_rhs(z, delta_f, v_x, cf, cr, chassis)  # noqa: E731
    k1 = f(s)
    k2 = f(s + 0.5 * ts * k1)
    k3 = f(s + 0.5 * ts * k2)
    k4 = f(s + ts * k3)
    n = s + ts / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return PlantState(float(n[0]), float(n[1]), _wrap(float(n[2])), float(n[3]), float(n[4]))


def steady_yaw_rate(delta_f: float, v_x: float, chassis: ChassisParams, mu: float = 1.0) -> float:
    """Closed-form steady-state yaw rate of the linear single-track model."""
    p = chassis
    cf, cr = 2 * mu * p.c_f, 2 * mu * p.c_r
    wheelbase = p.l_f + p.l_r
    k_us = p.m * (p.l_r * cr - p.l_f * cf) / (cf * cr * wheelbase)
    return v_x * delta_f / (wheelbase + k_us * v_x**2)


# -- reference tracking error ------------------------------------------------------


def reference_at(traj: PlannedTrajectory, x: float):
    """``(y_ref, psi_ref, psi_dot_ref)`` at station ``x`` on the planned polyline.

    The station is projected onto the segment between the neighbouring
    samples: ``y_ref`` interpolates linearly, while heading and yaw-rate
    references are those of the segment, i.e. the planner's samples held
    constant until the next station.

    Raises:
        OffTrajectory: ``x`` lies outside the planned stations.
    """
    if x > traj.x[-1] + 1e-9 or x < traj.x[0] - 1e-9:
        raise OffTrajectory(f"station {x:.3f} m outside plan [{traj.x[0]:.3f}, {traj.x[-1]:.3f}]")
    dx = traj.x[1] - traj.x[0]
    k = min(max(int((x - traj.x[0]) / dx), 0), traj.n_samples - 2)
    f = (x - traj.x[k]) / dx
    y = traj.y[k] + f * (traj.y[k + 1] - traj.y[k])
    return float(y), float(traj.psi[k]), float(traj.psi_dot[k])


def error_from_plant(ps: PlantState, traj: PlannedTrajectory, v_x: float) -> ErrorState:
    """Tracking error of the plant against the planned reference at its station."""
    y_ref, psi_ref, psi_dot_ref = reference_at(traj, ps.X)
    e_psi = _wrap(ps.psi - psi_ref)
    e_y = (ps.Y - y_ref) * math.cos(psi_ref)
    return ErrorState(e_y, ps.v_y + v_x * e_psi, e_psi, ps.psi_dot - psi_dot_ref)


# -- scenario description --------------------------------------------------------


@dataclass(frozen=True)
class EgoSpec:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v_x: float = 15.0

    def __post_init__(self):
        if self.v_x <= 0:
            raise ValidationError("ego v_x must be positive")


@dataclass(frozen=True)
class StaticObstacle:
    name: str
    x: float
    y: float
    length: float = 4.5
    width: float = 1.8
    amp: float = 10.0
    shape_c: float = 1.0


@dataclass(frozen=True)
class TrafficLane:
    """IDM platoon in one lane; vehicle 0 leads with a scripted speed."""

    name: str
    lane_y: float
    vehicles: tuple[tuple[float, float], ...]  # (x, v) front to back
    params: IdmParams = IdmParams()
    leader_profile: SpeedProfile | None = None
    width: float = 1.8
    amp: float = 10.0
    shape_c: float = 1.0

    def vehicle_names(self) -> list[str]:
        return [f"{self.name}.{i}" for i in range(len(self.vehicles))]

    def build(self) -> Platoon:
        vs = [(LongitudinalState(x, v), self.params) for x, v in self.vehicles]
        return make_platoon(vs, self.leader_profile, lane_y=self.lane_y, names=tuple(self.vehicle_names()))


@dataclass(frozen=True)
class PedestrianProfile:
    """Straight lateral crossing with a trapezoidal speed profile.

    The pedestrian waits at ``(x, y)`` until ``t_entry``, then walks
    ``distance`` metres in ``direction`` (+1 toward +y) and stops.
    """

    name: str
    t_entry: float
    x: float
    y: float
    distance: float
    direction: int = 1
    accel: float = 1.0
    cruise: float = 1.5
    decel: float = 1.0
    length: float = 0.6
    width: float = 0.6
    amp: float = 10.0
    shape_c: float = 1.0

    def __post_init__(self):
        if min(self.accel, self.cruise, self.decel, self.distance) <= 0:
            raise ValidationError("pedestrian accel, cruise, decel and distance must be positive")
        if self.direction not in (-1, 1):
            raise ValidationError("pedestrian direction must be -1 or +1")

    def _phases(self):
        """``(t_acc, t_cruise, t_dec, v_peak)``; triangular when the walk is short."""
        d_ramp = 0.5 * self.cruise**2 * (1 / self.accel + 1 / self.decel)
        if d_ramp <= self.distance:
            v = self.cruise
            return v / self.accel, (self.distance - d_ramp) / v, v / self.decel, v
        v = math.sqrt(2 * self.distance / (1 / self.accel + 1 / self.decel))
        return v / self.accel, 0.0, v / self.decel, v

    def progress(self, t: float) -> tuple[float, float]:
        """Walked distance and speed (both >= 0) at time ``t``."""
        tau = t - self.t_entry
        if tau <= 0:
            return 0.0, 0.0
        ta, tc, td, v = self._phases()
        if tau < ta:
            return 0.5 * self.accel * tau**2, self.accel * tau
        s_a = 0.5 * self.accel * ta**2
        if tau < ta + tc:
            return s_a + v * (tau - ta), v
        tau_d = tau - ta - tc
        if tau_d < td:
            return s_a + v * tc + v * tau_d - 0.5 * self.decel * tau_d**2, v - self.decel * tau_d
        return self.distance, 0.0

    def position(self, t: float) -> tuple[float, float, float]:
        """``(x, y, y_dot)`` at time ``t``."""
        s, v = self.progress(t)
        return self.x, self.y + self.direction * s, self.direction * v


@dataclass(frozen=True)
class AdhesionProfile:
    """Piecewise-constant road adhesion ``(t_start, mu)`` sorted by time."""

    breaks: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        if not self.breaks:
            raise ValidationError("adhesion profile needs at least one break")
        times = [b[0] for b in self.breaks]
        if times != sorted(times):
            raise ValidationError("adhesion breaks must be sorted by time")
        for _, mu in self.breaks:
            if not 0.1 <= mu <= 1.0:
                raise ValidationError(f"adhesion {mu} outside [0.1, 1]")

    @classmethod
    def constant(cls, mu: float) -> "AdhesionProfile":
        return cls(((0.0, float(mu)),))

    def __call__(self, t: float) -> float:
        mu = self.breaks[0][1]
        for t0, m in self.breaks:
            if t >= t0 - 1e-9:  # tolerate accumulated clock rounding
                mu = m
            else:
                break
        return mu


@dataclass(frozen=True)
class V2xEvent:
    t: float
    hazards: tuple[str, ...]


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative closed-loop experiment.

    Obstacles named by a V2X event stay unknown to the planner until that
    event fires; every other obstacle is known from the start.
    """

    name: str = "scenario"
    road: RoadDesc = RoadDesc()
    ego: EgoSpec = EgoSpec()
    statics: tuple[StaticObstacle, ...] = ()
    traffic: tuple[TrafficLane, ...] = ()
    pedestrians: tuple[PedestrianProfile, ...] = ()
    adhesion: AdhesionProfile = AdhesionProfile()
    v2x: tuple[V2xEvent, ...] = ()
    duration: float = 10.0
    ts: float = 0.01
    controller: str = "proposed"
    chassis: ChassisParams = ChassisParams()
    kappa: float = 1.3
    planner: PlannerWeights = PlannerWeights()
    candidates: CandidateSet = CandidateSet()

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError("duration must be positive")
        if self.ts <= 0:
            raise ValidationError("ts must be positive")
        if self.controller not in CONTROLLER_NAMES:
            raise ValidationError(f"controller must be one of {', '.join(CONTROLLER_NAMES)}")
        if not self.road.y_road_min < self.ego.y < self.road.y_road_max:
            raise ValidationError("ego must start inside the road")
        names = self.obstacle_names()
        if len(set(names)) != len(names):
            raise ValidationError("obstacle names must be unique")
        for ev in self.v2x:
            for h in ev.hazards:
                if h not in names and h not in {tl.name for tl in self.traffic}:
                    raise ValidationError(f"V2X event at t={ev.t} names unknown obstacle {h!r}")
        if self.ego.v_x != self.chassis.v_x:
            raise ValidationError("ego v_x must match the chassis model speed")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.ts))

    def obstacle_names(self) -> list[str]:
        out = [s.name for s in self.statics] + [p.name for p in self.pedestrians]
        for tl in self.traffic:
            out += tl.vehicle_names()
        return out

    def with_adhesion(self, mu: float) -> "ScenarioSpec":
        return replace(self, adhesion=AdhesionProfile.constant(mu))


# -- simulation log ------------------------------------------------------------


@dataclass
class PlanEpoch:
    t: float
    reason: str
    label: str
    target_y: float
    cost: float


@dataclass
class SimLog:
    """Per-step record; ``n_steps + 1`` rows including the initial sample.

    Row ``k`` holds the state at ``t_k`` and the command applied over
    ``[t_k, t_k+1)``.
    """

    scenario: str
    controller: str
    columns: dict[str, np.ndarray]
    y_ref: np.ndarray
    psi_dot_ref: np.ndarray
    index: np.ndarray
    du_raw: np.ndarray
    degraded: np.ndarray
    clearance: np.ndarray
    plans: list[PlanEpoch] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    du_limit: float = 0.0

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, key: str) -> np.ndarray:
        return self.columns[key]

    def write_csv(self, path) -> None:
        write_log_csv(self.columns, path)


def write_log_csv(columns: dict[str, np.ndarray], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        rows = zip(*(columns[c] for c in LOG_COLUMNS))
        for row in rows:
            w.writerow([f"{float(v):.12g}" for v in row])


def read_log_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != LOG_COLUMNS:
            raise ValueError(f"unexpected log header {header}")
        data = [[float(v) for v in row] for row in r]
    arr = np.array(data, dtype=float).reshape(-1, len(LOG_COLUMNS))
    return {c: arr[:, i].copy() for i, c in enumerate(LOG_COLUMNS)}


# -- world ---------------------------------------------------------------------


def box_clearance(x0, y0, l0, w0, x1, y1, l1, w1) -> float:
    """Separation of two axis-aligned boxes: positive when apart, <= 0 on contact."""
    return max(abs(x0 - x1) - 0.5 * (l0 + l1), abs(y0 - y1) - 0.5 * (w0 + w1))


class World:
    """Ground truth of everything except the ego."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.platoons = [tl.build() for tl in spec.traffic]
        self._t_platoon = 0.0

    def advance_traffic(self, t: float) -> None:
        while self._t_platoon + IDM_DT <= t + 1e-9:
            self.platoons = [platoon_step(p, IDM_DT) for p in self.platoons]
            self._t_platoon = self.platoons[0].t if self.platoons else self._t_platoon + IDM_DT

    def obstacles(self, t: float) -> list[ObstacleDesc]:
        spec = self.spec
        out = [
            ObstacleDesc(s.x, s.y, 0.0, s.length, s.width, s.amp, s.shape_c, name=s.name)
            for s in spec.statics
        ]
        for tl, pl in zip(spec.traffic, self.platoons):
            lag = t - pl.t
            for st, prm, nm in zip(pl.states, pl.params, pl.names):
                out.append(
                    ObstacleDesc(st.x + st.v * lag, pl.lane_y, st.v, prm.length, tl.width, tl.amp, tl.shape_c, name=nm)
                )
        for p in spec.pedestrians:
            x, y, ydot = p.position(t)
            out.append(ObstacleDesc(x, y, 0.0, p.length, p.width, p.amp, p.shape_c, ydot, p.name))
        return out


def choose_target(road: RoadDesc, known: Sequence[ObstacleDesc], x: float, v_x: float, target: float) -> float:
    """Commanded lane center: leave a lane a slower known obstacle blocks ahead."""
    centers = road.lane_centers

    def blocked(lane: int) -> bool:
        return any(
            road.lane_of(o.y_obs) == lane and 0.0 < o.x_obs - x <= LANE_BLOCK_LOOKAHEAD and o.x_dot_obs < v_x
            for o in known
        )

    cur = road.lane_of(target)
    if not blocked(cur):
        return target
    free = [i for i in range(len(centers)) if not blocked(i)]
    if not free:
        return target
    best = min(free, key=lambda i: (abs(centers[i] - centers[cur]), i))
    return centers[best]


def run_closed_loop(spec: ScenarioSpec, controller: Controller) -> SimLog:
    """Simulate ``spec`` with ``controller`` and record every sample.

    Planner and controller failures do not abort the run: the previous plan
    or steering is kept and the step is flagged degraded.
    """
    world = World(spec)
    v_x = spec.ego.v_x
    ts = spec.ts
    n = spec.n_steps
    ps = PlantState(spec.ego.x, spec.ego.y, spec.ego.psi, 0.0, 0.0)
    cs = ControllerState()
    hazard_names = {h for ev in spec.v2x for h in ev.hazards}
    # a traffic-lane name in an event reveals all its vehicles
    lane_members = {tl.name: set(tl.vehicle_names()) for tl in spec.traffic}
    hidden = set()
    for h in hazard_names:
        hidden |= lane_members.get(h, {h})
    revealed: set[str] = set()
    pending = sorted(spec.v2x, key=lambda e: e.t)
    plans: list[PlanEpoch] = []
    events: list[str] = []

    target = spec.road.lane_centers[spec.road.lane_of(spec.ego.y)]
    traj: PlannedTrajectory | None = None
    reference = None
    last_plan_t = -math.inf

    def known_obstacles(t):
        return [o for o in world.obstacles(t) if o.name not in hidden or o.name in revealed]

    def replan(t, reason):
        nonlocal traj, target, last_plan_t, reference
        known = known_obstacles(t)
        if traj is None:
            start = EgoPlanState(ps.X, spec.ego.y, v_x)
        else:
            x_start = min(max(ps.X, traj.x[0]), traj.x[-1])
            y_r, dy_r, ddy_r = traj.lateral_state(x_start)
            start = EgoPlanState(ps.X, y_r, v_x, dy_r, ddy_r)
        new_target = choose_target(spec.road, known, ps.X, v_x, target)
        if reference is None or new_target != target:
            # tracking reference re-anchored whenever the commanded lane changes
            target = new_target
            reference = (quintic_path(start.y, target, spec.candidates.ref_length, start.dy, start.ddy), start.x)
        scene = PotentialScene(spec.road, tuple(known))
        try:
            new = plan_trajectory(
                scene, start, spec.planner, spec.candidates, target, t0=t, current=traj, reference=reference
            )
        except (NoFeasibleCandidate, OutOfRoad) as exc:
            events.append(f"t={t:.2f} plan failed ({reason}): {exc}")
            last_plan_t = t
            return False
        traj = new
        last_plan_t = t
        plans.append(PlanEpoch(t, reason, new.label, target, new.cost))
        return True

    cols = {c: np.zeros(n + 1) for c in LOG_COLUMNS}
    y_ref_log = np.zeros(n + 1)
    r_log = np.zeros(n + 1)
    idx_log = np.zeros(n + 1, dtype=int)
    du_raw_log = np.zeros(n + 1)
    degraded = np.zeros(n + 1, dtype=bool)
    clear_log = np.full(n + 1, math.inf)

    for k in range(n + 1):
        t = k * ts
        world.advance_traffic(t)
        step_degraded = False
        reason = "initial" if traj is None else ""
        while pending and pending[0].t <= t + 1e-9:
            ev = pending.pop(0)
            for h in ev.hazards:
                revealed |= lane_members.get(h, {h})
            events.append(f"t={t:.2f} v2x {','.join(ev.hazards)}")
            reason = reason or "v2x"
        if not reason and t - last_plan_t >= REPLAN_PERIOD - 1e-9:
            if any(-HAZARD_BEHIND <= o.x_obs - ps.X <= HAZARD_AHEAD for o in known_obstacles(t)):
                reason = "periodic"
        if reason and not replan(t, reason) and traj is None:
            raise NoFeasibleCandidate("no initial plan could be made")
        try:
            err = error_from_plant(ps, traj, v_x)
        except OffTrajectory:
            if not replan(t, "off-trajectory"):
                step_degraded = True
            err = error_from_plant(ps, traj, v_x)
        y_ref, _, r_ref = reference_at(traj, ps.X)

        cs, dt_ctrl = controller.step(err.as_array(), r_ref, cs)
        step_degraded = step_degraded or cs.degraded

        for o in world.obstacles(t):
            c = box_clearance(ps.X, ps.Y, EGO_LENGTH, EGO_WIDTH, o.x_obs, o.y_obs, o.length_obs, o.width_obs)
            clear_log[k] = min(clear_log[k], c)

        row = (t, ps.X, ps.Y, ps.psi, ps.v_y, ps.psi_dot, err.e_y, err.e_y_dot, err.e_psi,
               err.e_psi_dot, cs.delta_f, cs.du, 1e3 * dt_ctrl, 0.0 if cs.in_region else 1.0)  # fmt: skip
        for c, v in zip(LOG_COLUMNS, row):
            cols[c][k] = v
        y_ref_log[k] = y_ref
        r_log[k] = r_ref
        idx_log[k] = cs.index
        du_raw_log[k] = cs.du_raw
        degraded[k] = step_degraded

        if k < n:
            ps = plant_step(ps, cs.delta_f, v_x, spec.adhesion(t), spec.chassis, ts)

    return SimLog(
        spec.name, controller.name, cols, y_ref_log, r_log, idx_log, du_raw_log, degraded,
        clear_log, plans, events, controller.du_max,
    )  # fmt: skip


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    rms_ey: float
    max_abs_ey: float
    max_abs_du: float
    steering_tv: float
    min_clearance: float
    mean_step_ms: float
    max_step_ms: float
    violations: int
    degraded_steps: int = 0
    out_of_region_steps: int = 0

    @property
    def collided(self) -> bool:
        return self.min_clearance <= 0.0


METRIC_FIELDS = (
    "rms_ey", "max_abs_ey", "max_abs_du", "steering_tv", "min_clearance",
    "mean_step_ms", "max_step_ms", "violations", "degraded_steps", "out_of_region_steps",
)  # fmt: skip
TIMING_FIELDS = ("mean_step_ms", "max_step_ms")


def count_violations(du_raw, du_limit: float) -> int:
    """Steps whose unclipped steering increment exceeds the bound."""
    return int(np.sum(np.abs(np.asarray(du_raw)) > du_limit * (1.0 + 1e-6)))


def steering_total_variation(delta_f) -> float:
    return float(np.sum(np.abs(np.diff(np.asarray(delta_f, dtype=float)))))


def compute_metrics(log: SimLog, spec: ScenarioSpec | None = None) -> Metrics:
    """Summary statistics; timing skips the first (warm-up) step."""
    ey = log["ey"]
    ms = log["step_ms"][1:] if len(log) > 1 else log["step_ms"]
    clear = float(np.min(log.clearance)) if np.isfinite(log.clearance).any() else math.inf
    return Metrics(
        rms_ey=float(np.sqrt(np.mean(ey**2))),
        max_abs_ey=float(np.max(np.abs(ey))),
        max_abs_du=float(np.max(np.abs(log["du"]))),
        steering_tv=steering_total_variation(log["delta_f"]),
        min_clearance=clear,
        mean_step_ms=float(np.mean(ms)),
        max_step_ms=float(np.max(ms)),
        violations=count_violations(log.du_raw, log.du_limit),
        degraded_steps=int(np.sum(log.degraded)),
        out_of_region_steps=int(np.sum(log["region_flag"] > 0)),
    )
