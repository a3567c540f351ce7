"""Lateral tracking-error model, its discrete/extended/augmented forms and the
four-vertex cornering-stiffness polytope.

State ordering of the augmented model is fixed everywhere (including table
files): ``[e_y, e_y_dot, e_psi, e_psi_dot, delta_f, psi_dot_ref]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import SingularSpeed, ValidationError

STATE_NAMES = ("e_y", "e_y_dot", "e_psi", "e_psi_dot", "delta_f", "psi_dot_ref")

#: Default sampling time of the control model (s).
TS = 0.01
#: Per-step persistence of the yaw-rate reference used for synthesis
#: (time constant of 10 s at ``TS``); 1.0 reproduces the constant-reference model.
REF_DECAY = 0.999


@dataclass(frozen=True)
class ChassisParams:
    m: float = 1500.0
    i_z: float = 2500.0
    l_f: float = 1.2
    l_r: float = 1.4
    c_f: float = 80000.0
    c_r: float = 80000.0
    v_x: float = 15.0

    def __post_init__(self):
        for name in ("m", "i_z", "l_f", "l_r", "c_f", "c_r"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"chassis parameter {name} must be positive")

    def with_stiffness(self, c_f: float, c_r: float) -> "ChassisParams":
        return replace(self, c_f=c_f, c_r=c_r)


@dataclass(frozen=True)
class ErrorState:
    e_y: float
    e_y_dot: float
    e_psi: float
    e_psi_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot])


@dataclass(frozen=True)
class DiscreteModel:
    a_d: np.ndarray
    b_d: np.ndarray
    e_d: np.ndarray
    ts: float


@dataclass(frozen=True)
class ExtendedModel:
    a: np.ndarray
    b: np.ndarray
    e: np.ndarray


@dataclass(frozen=True)
class AugmentedModel:
    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class UncertaintyBox:
    kappa: float
    c_f: float
    c_r: float

    def __post_init__(self):
        if self.kappa < 1:
            raise ValidationError(f"kappa must be >= 1, got {self.kappa}")

    def corners(self) -> list[tuple[float, float]]:
        """Stiffness corners in the fixed order (--, -+, +-, ++)."""
        fs = (self.c_f / self.kappa, self.c_f * self.kappa)
        rs = (self.c_r / self.kappa, self.c_r * self.kappa)
        return [(f, r) for f in fs for r in rs]


@dataclass(frozen=True)
class PolytopeModel:
    """Vertices ``a[j], b[j]`` of the uncertain model, j = 0..3.

    ``e`` carries the matching disturbance columns (4-state and extended
    models only) so steady-state computations can reuse the same vertices.
    """

    a: np.ndarray
    b: np.ndarray
    corners: tuple[tuple[float, float], ...]
    ts: float
    e: np.ndarray | None = None

    def __post_init__(self):
        if self.a.shape[0] != 4 or self.b.shape[0] != 4:
            raise ValidationError("polytope must have exactly 4 vertices")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValidationError("polytope vertices must be finite")

    @property
    def n(self) -> int:
        return self.a.shape[1]

    def vertices(self):
        return [(self.a[j], self.b[j]) for j in range(4)]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.a).tobytes())
        h.update(np.ascontiguousarray(self.b).tobytes())
        return h.hexdigest()[:16]


def continuous_error_dynamics(p: ChassisParams):
    """Continuous-time ``(A_c, B_c, E_c)`` of the lateral error model."""
    if p.v_x <= 0:
        raise SingularSpeed(f"v_x must be positive, got {p.v_x}")
    m, iz, lf, lr, cf, cr, vx = p.m, p.i_z, p.l_f, p.l_r, p.c_f, p.c_r, p.v_x
    c_sum = 2.0 * (cf + cr)
    c_mom = 2.0 * (lf * cf - lr * cr)
    c_sq = 2.0 * (lf**2 * cf + lr**2 * cr)
    a = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -c_sum / (m * vx), c_sum / m, -c_mom / (m * vx)],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, -c_mom / (iz * vx), c_mom / iz, -c_sq / (iz * vx)],
        ]
    )
    b = np.array([[0.0], [2.0 * cf / m], [0.0], [2.0 * lf * cf / iz]])
    e = np.array([[0.0], [-(c_mom / (m * vx) + vx)], [0.0], [-c_sq / (iz * vx)]])
    return a, b, e


def discretize(a_c, b_c, e_c, ts: float) -> DiscreteModel:
    """Forward-Euler discretization (keeps entries affine in the stiffnesses)."""
    if ts <= 0:
        raise ValueError("ts must be positive")
    n = a_c.shape[0]
    return DiscreteModel(np.eye(n) + ts * a_c, ts * np.asarray(b_c), ts * np.asarray(e_c), ts)


def extend_model(d: DiscreteModel) -> ExtendedModel:
    """Append the previous steering angle to the state; input becomes its increment."""
    n = d.a_d.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = d.a_d
    a[:n, n:] = d.b_d
    a[n, n] = 1.0
    b = np.vstack([d.b_d, [[1.0]]])
    e = np.vstack([d.e_d, [[0.0]]])
    return ExtendedModel(a, b, e)


def augment_model(ext: ExtendedModel, ref_decay: float = 1.0) -> AugmentedModel:
    """Append the yaw-rate reference as a state.

    ``ref_decay`` is the reference's one-step persistence; the default 1.0
    holds it constant between samples.
    """
    n = ext.a.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = ext.a
    a[:n, n:] = ext.e
    a[n, n] = ref_decay
    b = np.vstack([ext.b, [[0.0]]])
    return AugmentedModel(a, b)


def build_augmented(p: ChassisParams, ts: float = TS, ref_decay: float = 1.0) -> AugmentedModel:
    return augment_model(extend_model(discretize(*continuous_error_dynamics(p), ts)), ref_decay)


def polytope_vertices(
    p: ChassisParams, u: UncertaintyBox, ts: float = TS, ref_decay: float = REF_DECAY
) -> PolytopeModel:
    """Augmented-model vertices at the four stiffness corners of ``u``."""
    a, b, e = [], [], []
    for cf, cr in u.corners():
        ext = extend_model(discretize(*continuous_error_dynamics(p.with_stiffness(cf, cr)), ts))
        aug = augment_model(ext, ref_decay)
        a.append(aug.a)
        b.append(aug.b)
        e.append(ext.e)
    return PolytopeModel(np.array(a), np.array(b), tuple(u.corners()), ts, np.array(e))


def error_polytope_vertices(p: ChassisParams, u: UncertaintyBox, ts: float = TS) -> PolytopeModel:
    """Vertices of the plain 4-state discrete model (steering angle as input)."""
    a, b, e = [], [], []
    for cf, cr in u.corners():
        d = discretize(*continuous_error_dynamics(p.with_stiffness(cf, cr)), ts)
        a.append(d.a_d)
        b.append(d.b_d)
        e.append(d.e_d)
    return PolytopeModel(np.array(a), np.array(b), tuple(u.corners()), ts, np.array(e))


def open_loop_lateral_eigenvalues(p: ChassisParams) -> np.ndarray:
    """Eigenvalues of the body-frame (v_y, yaw rate) dynamics with fixed steering."""
    m, iz, lf, lr, cf, cr, vx = p.m, p.i_z, p.l_f, p.l_r, p.c_f, p.c_r, p.v_x
    a = np.array(
        [
            [-2 * (cf + cr) / (m * vx), -vx - 2 * (lf * cf - lr * cr) / (m * vx)],
            [-2 * (lf * cf - lr * cr) / (iz * vx), -2 * (lf**2 * cf + lr**2 * cr) / (iz * vx)],
        ]
    )
    return np.linalg.eigvals(a)


def is_understeering(p: ChassisParams) -> bool:
    return p.l_r * p.c_r - p.l_f * p.c_f > 0
