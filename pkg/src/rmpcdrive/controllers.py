"""Steering controllers: the proposed look-up-table law and three baselines.

Every controller consumes the 4-state tracking error, the current yaw-rate
reference and its own :class:`ControllerState`, and returns the new state
whose ``delta_f`` is the steering command. All of them clip the integrated
steering angle to the same physical range so comparisons are fair.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import Infeasible, SolverFailure, SteadyStateSingular
from .lmi import LookupTable, RmpcProgram, RmpcWeights
from .vehicle import ExtendedModel, PolytopeModel

#: Physical steering range (rad).
STEER_MAX = 0.5

CONTROLLER_NAMES = ("proposed", "offset-offline", "online", "offline-no-am")


@dataclass(frozen=True)
class ControllerState:
    """Per-controller memory between samples.

    Attributes:
        delta_f: steering angle applied over the last sample (rad).
        index: table entry used last (-1 before the first step or for online).
        in_region: whether the last state lay inside the outermost ellipsoid.
        du: applied steering increment of the last step (rad).
        du_raw: increment before any clipping (rad).
        degraded: the last step fell back to holding the steering.
    """

    delta_f: float = 0.0
    index: int = -1
    in_region: bool = True
    du: float = 0.0
    du_raw: float = 0.0
    degraded: bool = False


def _dot(k_gain, x) -> float:
    return float(np.ravel(k_gain) @ x)


def _augmented(e4, delta_f: float, psi_dot_ref: float) -> np.ndarray:
    return np.concatenate([np.asarray(e4, dtype=float), [delta_f, psi_dot_ref]])


def _apply_increment(cs: ControllerState, du_raw: float, du_max: float, **kw) -> ControllerState:
    du = float(np.clip(du_raw, -du_max, du_max))
    delta = float(np.clip(cs.delta_f + du, -STEER_MAX, STEER_MAX))
    return replace(cs, delta_f=delta, du=delta - cs.delta_f, du_raw=float(du_raw), **kw)


def offline_control_step(table: LookupTable, xi, cs: ControllerState):
    """``du = K xi`` with the gain of the innermost ellipsoid containing ``xi``."""
    xi = np.asarray(xi, dtype=float)
    k, idx, inside = table.lookup_gain(xi)
    du = _dot(k, xi)
    out = _apply_increment(cs, du, table.du_max, index=idx, in_region=inside, degraded=False)
    return out.delta_f, out


def online_control_step(xi, program: RmpcProgram, cs: ControllerState):
    """Solve the robust program at ``xi`` (cold start) and apply its gain.

    Returns ``(delta_f, state, solve_time)``. When the program is infeasible
    or the solver fails the previous steering is held and the state is
    flagged degraded.
    """
    xi = np.asarray(xi, dtype=float)
    t0 = time.perf_counter()
    try:
        sol = program.solve(xi)
    except (Infeasible, SolverFailure):
        dt = time.perf_counter() - t0
        out = replace(cs, du=0.0, du_raw=0.0, degraded=True, in_region=False)
        return out.delta_f, out, dt
    dt = time.perf_counter() - t0
    du = _dot(sol.k_gain, xi)
    out = _apply_increment(cs, du, program.weights.du_max, in_region=True, degraded=False)
    return out.delta_f, out, dt


def steady_target(ext: ExtendedModel, psi_dot_ref: float, tol: float = 1e-9) -> np.ndarray:
    """Zero-error steady state ``[0, 0, e_psi, 0, delta]`` of the extended model.

    Holding the steering (``du = 0``) the state must satisfy
    ``(A - I) xi + E r = 0`` with ``e_y`` and the error rates at zero, which
    leaves the heading error and the steering angle as unknowns.

    Raises:
        SteadyStateSingular: the two unknown columns are rank deficient.
    """
    m = (ext.a - np.eye(ext.a.shape[0]))[:, [2, 4]]
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] <= tol * max(sv[0], 1.0):
        raise SteadyStateSingular("steady-state relation is rank deficient")
    z, *_ = np.linalg.lstsq(m, -ext.e[:, 0] * psi_dot_ref, rcond=None)
    out = np.zeros(ext.a.shape[0])
    out[2], out[4] = z
    return out


@dataclass
class OffsetCompensator:
    """Feed-forward ``du0`` restoring a zero-error equilibrium under a yaw-rate reference.

    The target is computed per unit reference once, so ``du0`` is linear in
    the reference by construction.
    """

    ext: ExtendedModel
    unit_target: np.ndarray | None = None
    singular: bool = False

    def __post_init__(self):
        try:
            self.unit_target = steady_target(self.ext, 1.0)
        except SteadyStateSingular:
            self.unit_target = np.zeros(self.ext.a.shape[0])
            self.singular = True

    def target(self, psi_dot_ref: float) -> np.ndarray:
        return np.concatenate([self.unit_target * psi_dot_ref, [psi_dot_ref]])

    def du0(self, k_gain: np.ndarray, psi_dot_ref: float) -> float:
        return -_dot(k_gain, self.target(psi_dot_ref))


def offset_offline_step(table: LookupTable, xi, psi_dot_ref: float, comp: OffsetCompensator, cs: ControllerState):
    """``du = K xi + du0``: the table law plus the steady-state offset."""
    xi = np.asarray(xi, dtype=float)
    k, idx, inside = table.lookup_gain(xi)
    du = _dot(k, xi) + comp.du0(k, psi_dot_ref)
    out = _apply_increment(cs, du, table.du_max, index=idx, in_region=inside, degraded=comp.singular)
    return out.delta_f, out


def no_am_control_step(table4: LookupTable, e4, cs: ControllerState):
    """Steering angle directly from the 4-state table, ``delta = K e``."""
    e4 = np.asarray(e4, dtype=float)
    k, idx, inside = table4.lookup_gain(e4)
    raw = _dot(k, e4)
    delta = float(np.clip(raw, -STEER_MAX, STEER_MAX))
    du = delta - cs.delta_f
    out = replace(cs, delta_f=delta, du=du, du_raw=raw - cs.delta_f, index=idx, in_region=inside, degraded=False)
    return out.delta_f, out


# -- uniform wrappers used by the simulator ---------------------------------------


class Controller:
    """Common interface: ``step(e4, psi_dot_ref, cs) -> (state, compute_seconds)``."""

    name = ""
    du_max: float = 0.0

    def step(self, e4, psi_dot_ref: float, cs: ControllerState):
        raise NotImplementedError


class ProposedController(Controller):
    name = "proposed"

    def __init__(self, table: LookupTable):
        self.table = table
        self.du_max = table.du_max

    def step(self, e4, psi_dot_ref, cs):
        xi = _augmented(e4, cs.delta_f, psi_dot_ref)
        t0 = time.perf_counter()
        _, out = offline_control_step(self.table, xi, cs)
        return out, time.perf_counter() - t0


class OffsetOfflineController(Controller):
    name = "offset-offline"

    def __init__(self, table: LookupTable, ext: ExtendedModel):
        self.table = table
        self.du_max = table.du_max
        self.comp = OffsetCompensator(ext)

    def step(self, e4, psi_dot_ref, cs):
        xi = _augmented(e4, cs.delta_f, psi_dot_ref)
        t0 = time.perf_counter()
        _, out = offset_offline_step(self.table, xi, psi_dot_ref, self.comp, cs)
        return out, time.perf_counter() - t0


class OnlineController(Controller):
    name = "online"

    def __init__(self, polytope: PolytopeModel, weights: RmpcWeights, backend=None):
        self.program = RmpcProgram(polytope, weights, backend)
        self.du_max = weights.du_max

    def step(self, e4, psi_dot_ref, cs):
        xi = _augmented(e4, cs.delta_f, psi_dot_ref)
        t0 = time.perf_counter()
        _, out, _ = online_control_step(xi, self.program, cs)
        return out, time.perf_counter() - t0


class NoAmController(Controller):
    name = "offline-no-am"

    def __init__(self, table4: LookupTable, du_max: float):
        self.table = table4
        # steering rate is not constrained by this design; the bound only feeds metrics
        self.du_max = du_max

    def step(self, e4, psi_dot_ref, cs):
        t0 = time.perf_counter()
        _, out = no_am_control_step(self.table, e4, cs)
        return out, time.perf_counter() - t0
