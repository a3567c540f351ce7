"""Intelligent Driver Model for the surrounding human-driven vehicles.

Sign convention: the relative speed is ``dv = v_follower - v_leader``, so it is
positive while the follower closes in and the interaction term of the desired
gap then grows. Some IDM references use the opposite sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import CollisionDetected, NonPositiveGap, ValidationError


@dataclass(frozen=True)
class IdmParams:
    """Car-following parameters of one vehicle.

    Attributes:
        a_max: maximum acceleration (m/s^2).
        b_comf: comfortable deceleration (m/s^2).
        v_des: desired free-road speed (m/s).
        delta_exp: free acceleration exponent.
        s0: jam gap (m).
        t_gap: safe time headway (s).
        length: vehicle length (m).
    """

    a_max: float = 1.5
    b_comf: float = 2.0
    v_des: float = 30.0
    delta_exp: float = 4.0
    s0: float = 2.0
    t_gap: float = 1.5
    length: float = 4.5

    def __post_init__(self):
        if self.a_max <= 0 or self.b_comf <= 0 or self.v_des <= 0:
            raise ValidationError("IDM requires a_max > 0, b_comf > 0, v_des > 0")
        if self.s0 <= 0 or self.t_gap < 0 or self.length <= 0:
            raise ValidationError("IDM requires s0 > 0, t_gap >= 0, length > 0")


@dataclass(frozen=True)
class LongitudinalState:
    x: float
    v: float

    def __post_init__(self):
        if self.v < 0:
            raise ValidationError(f"speed must be non-negative, got {self.v}")


def desired_gap(p: IdmParams, v: float, dv: float) -> float:
    """Desired bumper gap ``s*`` for speed ``v`` and relative speed ``dv``.

    Clamped at zero from below so a strongly opening gap never turns the
    interaction term into an attraction.
    """
    s_star = p.s0 + v * p.t_gap + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    return max(0.0, s_star)


def idm_acceleration(p: IdmParams, v: float, s: float, dv: float) -> float:
    if s <= 0:
        raise NonPositiveGap(f"gap {s} m is not positive")
    s_star = desired_gap(p, v, dv)
    return p.a_max * (1.0 - (v / p.v_des) ** p.delta_exp - (s_star / s) ** 2)


def free_road_acceleration(p: IdmParams, v: float) -> float:
    return p.a_max * (1.0 - (v / p.v_des) ** p.delta_exp)


def equilibrium_gap(p: IdmParams, v: float) -> float:
    """Gap at which a follower matching its leader's speed ``v`` has zero acceleration.

    Solves ``1 - (v/v_des)^delta - (s*(v, 0)/s)^2 = 0``; equals ``s*(v, 0)``
    only when the free-road term vanishes. Undefined for ``v >= v_des``.
    """
    free = 1.0 - (v / p.v_des) ** p.delta_exp
    if free <= 0:
        raise ValueError(f"no finite equilibrium gap at v={v} >= v_des={p.v_des}")
    return desired_gap(p, v, 0.0) / math.sqrt(free)


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-constant speed as a function of time.

    ``breaks`` holds ``(t_start, speed)`` pairs sorted by time; before the
    first break the first speed applies.
    """

    breaks: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.breaks:
            raise ValidationError("speed profile needs at least one break")
        times = [b[0] for b in self.breaks]
        if times != sorted(times):
            raise ValidationError("speed profile breaks must be sorted by time")
        if any(b[1] < 0 for b in self.breaks):
            raise ValidationError("speed profile speeds must be non-negative")

    @classmethod
    def constant(cls, v: float) -> "SpeedProfile":
        return cls(((0.0, float(v)),))

    def __call__(self, t: float) -> float:
        v = self.breaks[0][1]
        for t0, vk in self.breaks:
            if t >= t0 - 1e-9:  # tolerate accumulated clock rounding
                v = vk
            else:
                break
        return v


@dataclass(frozen=True)
class Platoon:
    """Single-lane column of vehicles; index 0 is the exogenous leader."""

    states: tuple[LongitudinalState, ...]
    params: tuple[IdmParams, ...]
    leader_profile: SpeedProfile
    t: float = 0.0
    lane_y: float = 0.0
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.states) != len(self.params) or not self.states:
            raise ValidationError("platoon needs matching, non-empty states and params")
        for i, s in enumerate(self.gaps(), start=1):
            if s <= 0:
                raise ValidationError(f"vehicle {i} overlaps its predecessor (gap {s:.3f} m)")

    def gaps(self) -> list[float]:
        """Bumper gaps ``x[i-1] - x[i] - l[i-1]`` for the followers."""
        xs = self.states
        return [
            xs[i - 1].x - xs[i].x - self.params[i - 1].length for i in range(1, len(xs))
        ]

    def accelerations(self) -> list[float]:
        """Follower accelerations from the current snapshot (leader entry is 0)."""
        acc = [0.0]
        for i in range(1, len(self.states)):
            me, ahead = self.states[i], self.states[i - 1]
            s = ahead.x - me.x - self.params[i - 1].length
            acc.append(idm_acceleration(self.params[i], me.v, s, me.v - ahead.v))
        return acc


def make_platoon(
    vehicles: Sequence[tuple[LongitudinalState, IdmParams]],
    leader_profile: SpeedProfile | None = None,
    **kwargs,
) -> Platoon:
    states = tuple(v[0] for v in vehicles)
    params = tuple(v[1] for v in vehicles)
    if leader_profile is None:
        leader_profile = SpeedProfile.constant(states[0].v)
    return Platoon(states, params, leader_profile, **kwargs)


def platoon_step(pl: Platoon, dt: float) -> Platoon:
    """Advance the platoon by ``dt`` with semi-implicit Euler.

    Followers use gaps and relative speeds from the pre-step snapshot; the
    leader takes the speed its profile prescribes at the step start.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    acc = pl.accelerations()
    new = []
    for i, st in enumerate(pl.states):
        v = pl.leader_profile(pl.t) if i == 0 else max(0.0, st.v + acc[i] * dt)
        new.append(LongitudinalState(st.x + v * dt, v))
    for i in range(1, len(new)):
        gap = new[i - 1].x - new[i].x - pl.params[i - 1].length
        if gap <= 0:
            raise CollisionDetected(f"vehicle {i} hit its predecessor at t={pl.t + dt:.2f} s")
    return replace(pl, states=tuple(new), t=pl.t + dt)
