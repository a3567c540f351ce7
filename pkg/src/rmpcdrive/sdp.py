"""Minimal semidefinite-program interface and its interior-point backend.

A problem is ``min c.x`` subject to ``F0_k + sum_i x_i F_ik >= 0`` (PSD) for
every block ``k``. Blocks are built from any callable that evaluates the
symmetric matrix at a numeric point and is affine in that point, so the same
assembly code serves both the solver and residual checks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import Infeasible, SolverFailure

#: Environment variable overriding the relative duality-gap tolerance.
TOL_ENV = "RMPCDRIVE_SOLVER_TOL"
DEFAULT_GAP_TOL = 1e-8
FEAS_TOL = 1e-7


@dataclass
class AffineBlock:
    """Symmetric block ``f0 + sum_i x_i fi[i]``."""

    f0: np.ndarray
    fi: np.ndarray  # (n_vars, m, m)
    name: str = ""

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], np.ndarray], n_vars: int, name: str = ""):
        f0 = np.asarray(fn(np.zeros(n_vars)), dtype=float)
        fi = np.empty((n_vars,) + f0.shape)
        basis = np.zeros(n_vars)
        for i in range(n_vars):
            basis[i] = 1.0
            fi[i] = np.asarray(fn(basis), dtype=float) - f0
            basis[i] = 0.0
        return cls(f0, fi, name)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.f0 + np.tensordot(x, self.fi, axes=1)

    @property
    def size(self) -> int:
        return self.f0.shape[0]


@dataclass
class SdpProblem:
    c: np.ndarray
    blocks: list[AffineBlock] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def add(self, block: AffineBlock) -> None:
        if block.fi.shape[0] != self.n_vars:
            raise ValueError("block variable count does not match the objective")
        self.blocks.append(block)


@dataclass
class SdpResult:
    x: np.ndarray
    status: str
    objective: float
    gap: float
    iterations: int


class SdpBackend(Protocol):
    def solve(self, problem: SdpProblem) -> SdpResult: ...


def scaled_min_eig(mat: np.ndarray) -> float:
    """Smallest eigenvalue after symmetric diagonal scaling to unit diagonal.

    The scaling is a congruence, so the sign pattern (PSD or not) is kept
    while blocks with very different entry magnitudes become comparable.
    """
    d = np.abs(np.diag(mat)).copy()
    d[d < 1e-300] = 1.0
    s = 1.0 / np.sqrt(d)
    return float(np.linalg.eigvalsh(s[:, None] * mat * s[None, :]).min())


def block_residuals(problem: SdpProblem, x: np.ndarray) -> list[float]:
    return [scaled_min_eig(b.evaluate(x)) for b in problem.blocks]


class CvxoptBackend:
    """Primal-dual interior-point method of ``cvxopt.solvers.sdp``."""

    #: relative gap used when the requested tolerance breaks down numerically
    fallback_gap_tol = 1e-6

    def __init__(self, gap_tol: float | None = None, feas_tol: float = 1e-7, max_iters: int = 100):
        if gap_tol is None:
            gap_tol = float(os.environ.get(TOL_ENV, DEFAULT_GAP_TOL))
        self.gap_tol = gap_tol
        self.feas_tol = feas_tol
        self.max_iters = max_iters

    def _run(self, problem: SdpProblem, gap_tol: float):
        from cvxopt import matrix, solvers

        gs, hs = [], []
        for b in problem.blocks:
            m = b.size
            # cvxopt form: h - G x in the PSD cone, column-major vec
            g = -b.fi.reshape(problem.n_vars, m * m).T
            gs.append(matrix(np.ascontiguousarray(g)))
            hs.append(matrix(np.ascontiguousarray(b.f0)))
        opts = {
            "show_progress": False,
            "reltol": gap_tol,
            "abstol": 1e-7,
            "feastol": self.feas_tol,
            "maxiters": self.max_iters,
        }
        return solvers.sdp(matrix(problem.c), Gs=gs, hs=hs, options=opts)

    def solve(self, problem: SdpProblem) -> SdpResult:
        try:
            sol = self._run(problem, self.gap_tol)
        except (ArithmeticError, ValueError):
            try:
                sol = self._run(problem, max(self.gap_tol, self.fallback_gap_tol))
            except (ArithmeticError, ValueError) as exc:
                raise SolverFailure(f"SDP backend broke down: {exc}") from exc
        status = sol["status"]
        if status in ("primal infeasible", "dual infeasible"):
            raise Infeasible(f"SDP reported {status}")
        if sol["x"] is None or len(sol["x"]) != problem.n_vars:
            raise SolverFailure(f"SDP backend returned no point (status {status!r})")
        x = np.array(sol["x"]).ravel()
        pobj = sol.get("primal objective")
        gap = sol.get("relative gap")
        return SdpResult(
            x=x,
            status=status,
            objective=float(pobj) if pobj is not None else float(problem.c @ x),
            gap=float(gap) if gap is not None else float("nan"),
            iterations=int(sol.get("iterations", 0)),
        )


_default_backend: SdpBackend | None = None


def default_backend() -> SdpBackend:
    global _default_backend
    if _default_backend is None:
        _default_backend = CvxoptBackend()
    return _default_backend


def solve_checked(
    problem: SdpProblem, backend: SdpBackend | None = None, feas_tol: float = FEAS_TOL
) -> SdpResult:
    """Solve and verify every block is PSD to within ``feas_tol``.

    A backend stopping short of its gap tolerance is accepted when the point
    still passes the block check; an uncertified point raises SolverFailure.
    """
    res = (backend or default_backend()).solve(problem)
    worst = min(block_residuals(problem, res.x), default=0.0)
    if worst < -feas_tol:
        if res.status == "optimal":
            raise SolverFailure(f"solution violates a block by {worst:.3e}")
        raise Infeasible(f"no certified point (status {res.status!r}, worst block {worst:.3e})")
    return res


def stack_blocks(rows: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    return np.block([[np.atleast_2d(b) for b in row] for row in rows])
