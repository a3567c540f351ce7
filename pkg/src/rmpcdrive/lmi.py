"""LMI robust MPC synthesis and the offline look-up table of nested ellipsoids.

Decision variables of every program are ``gamma``, a symmetric ``Q`` and a
row ``Y``; the feedback gain is ``K = Y Q^-1`` and the Lyapunov matrix is
``P = gamma Q^-1``.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import Infeasible, ParseError, SolverFailure, WeightRootFailure
from .sdp import AffineBlock, SdpBackend, SdpProblem, solve_checked, stack_blocks
from .vehicle import PolytopeModel

log = logging.getLogger(__name__)

MAGIC = "RMPCLUT1"
DEFAULT_XI0 = (1.0, 0.0, 0.1, 0.0, 0.0, 0.05)
DEFAULT_N_ENTRIES = 30
DEFAULT_SHRINK = 0.85
#: norm of the probe state standing in for the origin
ORIGIN_PROBE = 1e-6
# gamma inflation ladder used to certify the Lyapunov decrease in P coordinates
_CERT_LADDER = (0.0,) + tuple(10.0**k for k in range(-12, -1))


@dataclass(frozen=True)
class RmpcWeights:
    """State/input weights and bounds.

    ``du_max`` bounds the model input: the steering increment (rad/step) for
    the augmented model, the steering angle itself for the 4-state model.
    """

    q_bar: np.ndarray
    r_bar: float
    du_max: float
    xi_max: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_bar, dtype=float)
        if q.shape[0] != q.shape[1] or not np.allclose(q, q.T):
            raise ValueError("q_bar must be square and symmetric")
        if self.r_bar <= 0 or self.du_max <= 0:
            raise ValueError("r_bar and du_max must be positive")
        if np.any(np.asarray(self.xi_max) <= 0) or len(self.xi_max) != q.shape[0]:
            raise ValueError("xi_max must be positive with one entry per state")

    @property
    def n(self) -> int:
        return self.q_bar.shape[0]

    def q_sqrt(self) -> np.ndarray:
        return weight_sqrt(self.q_bar)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.q_bar, [self.r_bar, self.du_max], self.xi_max):
            h.update(np.ascontiguousarray(np.asarray(arr, dtype=float)).tobytes())
        return h.hexdigest()[:16]


def weight_sqrt(w: np.ndarray) -> np.ndarray:
    """Symmetric square root; eigenvalues in (-1e-10, 0) are clamped to zero."""
    vals, vecs = np.linalg.eigh(np.asarray(w, dtype=float))
    if vals.min() < -1e-10:
        raise WeightRootFailure(f"weight has negative eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def default_weights() -> RmpcWeights:
    q = np.diag([10.0, 1.0, 10.0, 1.0, 0.1, 0.0])
    q[5, 5] = 1e-9
    return RmpcWeights(
        q_bar=q,
        r_bar=50.0,
        du_max=0.02,
        xi_max=np.array([1.5, 3.0, 0.3, 1.0, 0.5, 1.0]),
    )


def default_weights_no_am() -> RmpcWeights:
    return RmpcWeights(
        q_bar=np.diag([10.0, 1.0, 10.0, 1.0]),
        r_bar=50.0,
        du_max=0.5,
        xi_max=np.array([1.5, 3.0, 0.3, 1.0]),
    )


# -- variable layout -----------------------------------------------------------


class VariableLayout:
    """Packs ``(gamma, Q, Y)`` into the solver vector ``[gamma, vech(Q), Y]``."""

    def __init__(self, n: int):
        self.n = n
        self.iu = np.triu_indices(n)
        self.n_q = len(self.iu[0])
        self.n_vars = 1 + self.n_q + n

    def unpack(self, x: np.ndarray):
        n = self.n
        q = np.zeros((n, n))
        q[self.iu] = x[1 : 1 + self.n_q]
        q = q + q.T - np.diag(np.diag(q))
        y = np.asarray(x[1 + self.n_q :]).reshape(1, n)
        return float(x[0]), q, y

    def pack(self, gamma: float, q: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.concatenate([[gamma], q[self.iu], np.ravel(y)])

    def objective(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        c[0] = 1.0
        return c


# -- block assembly ------------------------------------------------------------


def assemble_input_lmi(q: np.ndarray, y: np.ndarray, du_max: float) -> np.ndarray:
    """``[[du_max^2, Y], [Y^T, Q]]``, equivalent to ``Y Q^-1 Y^T <= du_max^2``."""
    y = np.atleast_2d(y)
    u_cons = du_max**2 * np.eye(y.shape[0])
    return stack_blocks([[u_cons, y], [y.T, q]])


def assemble_state_lmis(q, y, polytope: PolytopeModel, xi_max) -> list[np.ndarray]:
    """Per-vertex bound on the one-step image of the ellipsoid:
    ``[[X, A Q + B Y], [(A Q + B Y)^T, Q]]`` with ``X = diag(xi_max^2)``."""
    x_cons = np.diag(np.asarray(xi_max, dtype=float) ** 2)
    y = np.atleast_2d(y)
    out = []
    for a, b in polytope.vertices():
        m = a @ q + b @ y
        out.append(stack_blocks([[x_cons, m], [m.T, q]]))
    return out


def assemble_stability_lmis(q, y, gamma, polytope: PolytopeModel, weights: RmpcWeights, q_sqrt=None):
    """Per-vertex robust Lyapunov-decrease blocks (Schur form)."""
    n = q.shape[0]
    y = np.atleast_2d(y)
    nu = y.shape[0]
    qs = weights.q_sqrt() if q_sqrt is None else q_sqrt
    rs = np.sqrt(weights.r_bar)
    z_nn, z_un = np.zeros((n, n)), np.zeros((nu, n))
    out = []
    for a, b in polytope.vertices():
        m = a @ q + b @ y
        out.append(
            stack_blocks(
                [
                    [q, m.T, (qs @ q).T, (rs * y).T],
                    [m, q, z_nn, z_un.T],
                    [qs @ q, z_nn, gamma * np.eye(n), z_un.T],
                    [rs * y, z_un, z_un, gamma * np.eye(nu)],
                ]
            )
        )
    return out


def assemble_initial_state_lmi(xi, q) -> np.ndarray:
    """``[[1, xi^T], [xi, Q]]``, i.e. ``xi^T Q^-1 xi <= 1`` for ``Q > 0``."""
    xi = np.asarray(xi, dtype=float).reshape(-1, 1)
    return stack_blocks([[np.ones((1, 1)), xi.T], [xi, q]])


# -- programs ----------------------------------------------------------------------


@dataclass
class RmpcSolution:
    gamma: float
    q: np.ndarray
    y: np.ndarray
    k_gain: np.ndarray
    gamma_raw: float
    status: str
    solve_time: float


class RmpcProgram:
    """Blocks that do not depend on the current state, built once.

    Only the initial-state block (and an optional nesting block) changes
    between solves, which keeps the per-step cost of the online controller
    down to the solver itself.
    """

    def __init__(self, polytope: PolytopeModel, weights: RmpcWeights, backend: SdpBackend | None = None):
        if polytope.n != weights.n:
            raise ValueError("polytope and weights disagree on the state dimension")
        self.polytope = polytope
        self.weights = weights
        self.backend = backend
        self.layout = lay = VariableLayout(polytope.n)
        nv = lay.n_vars
        qs = weights.q_sqrt()
        self._q_sqrt = qs
        blocks = [
            AffineBlock.from_callable(
                lambda x: assemble_input_lmi(lay.unpack(x)[1], lay.unpack(x)[2], weights.du_max),
                nv,
                "input",
            )
        ]
        for j in range(4):
            blocks.append(
                AffineBlock.from_callable(
                    lambda x, j=j: assemble_state_lmis(
                        lay.unpack(x)[1], lay.unpack(x)[2], polytope, weights.xi_max
                    )[j],
                    nv,
                    f"state[{j}]",
                )
            )
        for j in range(4):
            blocks.append(
                AffineBlock.from_callable(
                    lambda x, j=j: assemble_stability_lmis(
                        lay.unpack(x)[1], lay.unpack(x)[2], x[0], polytope, weights, qs
                    )[j],
                    nv,
                    f"stability[{j}]",
                )
            )
        self.static_blocks = blocks

    def problem(self, xi, q_prev: np.ndarray | None = None, scale: float = 1.0) -> SdpProblem:
        """SDP for seed ``xi`` in variables scaled by ``scale**2``.

        With ``Q = s^2 Qs``, ``Y = s^2 Ys`` and ``gamma = s^2 gs`` the
        stability blocks are homogeneous and every other block keeps its
        shape with the constant term divided by ``s^2``. Solving for the
        scaled variables at ``xi / s`` is the same program, but it stays
        well conditioned for small states, where the solver's absolute
        tolerances would otherwise dominate.
        """
        lay = self.layout
        inv2 = 1.0 / (scale * scale)
        xi_s = np.asarray(xi, dtype=float) / scale
        blocks = [
            b if inv2 == 1.0 else AffineBlock(b.f0 * inv2, b.fi, b.name) for b in self.static_blocks
        ]
        prob = SdpProblem(lay.objective(), blocks)
        prob.add(
            AffineBlock.from_callable(
                lambda x: assemble_initial_state_lmi(xi_s, lay.unpack(x)[1]), lay.n_vars, "initial"
            )
        )
        if q_prev is not None:
            qp = np.asarray(q_prev) * inv2
            prob.add(AffineBlock.from_callable(lambda x: qp - lay.unpack(x)[1], lay.n_vars, "nesting"))
        return prob

    def solve(self, xi, q_prev: np.ndarray | None = None) -> RmpcSolution:
        """Minimize ``gamma`` at seed ``xi``.

        At the origin the optimum is ``gamma = 0`` with ``Q = 0``, where no
        gain is defined; the limit is realized by solving along the first
        state axis at norm ``ORIGIN_PROBE``, which returns a stabilizing gain
        with a vanishing ``gamma``.
        """
        t0 = time.perf_counter()
        xi = np.asarray(xi, dtype=float)
        norm = float(np.linalg.norm(xi))
        if norm == 0.0:
            xi = np.zeros_like(xi)
            xi[0] = norm = ORIGIN_PROBE
        scale = min(1.0, norm)
        res = solve_checked(self.problem(xi, q_prev, scale), self.backend)
        gs, qs, ys = self.layout.unpack(res.x)
        try:
            qs_inv = np.linalg.inv(qs)
        except np.linalg.LinAlgError as exc:
            raise Infeasible("solver returned a singular Q") from exc
        k = ys @ qs_inv
        g_cert = certify_gamma(qs, k, gs, self.polytope, self.weights)
        s2 = scale * scale
        return RmpcSolution(
            g_cert * s2, qs * s2, ys * s2, k, gs * s2, res.status, time.perf_counter() - t0
        )


def lyapunov_margin(p: np.ndarray, k: np.ndarray, polytope: PolytopeModel, weights: RmpcWeights) -> float:
    """Worst-vertex min eigenvalue of ``P - Acl^T P Acl - Qbar - K^T R K``."""
    worst = np.inf
    cost = weights.q_bar + weights.r_bar * (k.T @ k)
    for a, b in polytope.vertices():
        acl = a + b @ k
        worst = min(worst, float(np.linalg.eigvalsh(p - acl.T @ p @ acl - cost).min()))
    return worst


def certify_gamma(q, k, gamma, polytope: PolytopeModel, weights: RmpcWeights) -> float:
    """Smallest inflation ``gamma (1 + theta)`` making the decrease hold exactly in ``P``.

    Raising gamma with ``Q, Y`` fixed keeps every block feasible, so this only
    absorbs the interior-point residual that ``P = gamma Q^-1`` amplifies.
    """
    q_inv = np.linalg.inv(q)
    for theta in _CERT_LADDER:
        g = gamma * (1.0 + theta)
        if lyapunov_margin(g * q_inv, k, polytope, weights) >= 0.0:
            return g
    log.warning("Lyapunov decrease could not be certified by gamma inflation")
    return gamma * (1.0 + _CERT_LADDER[-1])


def solve_rmpc_sdp(
    xi,
    polytope: PolytopeModel,
    weights: RmpcWeights,
    q_prev: np.ndarray | None = None,
    backend: SdpBackend | None = None,
) -> RmpcSolution:
    """Minimize ``gamma`` for state ``xi`` subject to all robust blocks."""
    return RmpcProgram(polytope, weights, backend).solve(xi, q_prev)


# -- look-up table -------------------------------------------------------------------


@dataclass
class EllipsoidEntry:
    q: np.ndarray
    q_inv: np.ndarray
    y: np.ndarray
    k_gain: np.ndarray
    gamma: float
    seed_state: np.ndarray

    def membership(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.q_inv @ xi)


@dataclass
class LookupTable:
    """Entries ordered outermost (0) to innermost (N-1)."""

    entries: list[EllipsoidEntry]
    ts: float
    weights_digest: str = ""
    polytope_digest: str = ""
    weights: RmpcWeights | None = None
    _stack: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n(self) -> int:
        return self.entries[0].q.shape[0]

    @property
    def du_max(self) -> float | None:
        return None if self.weights is None else self.weights.du_max

    def memberships(self, xi) -> np.ndarray:
        if self._stack is None:
            self._stack = np.array([e.q_inv for e in self.entries])
        xi = np.asarray(xi, dtype=float)
        return np.einsum("i,kij,j->k", xi, self._stack, xi)

    def lookup_gain(self, xi):
        """``(K, index, in_region)`` of the innermost ellipsoid containing ``xi``.

        Outside every ellipsoid the outermost gain is returned with
        ``in_region = False``.
        """
        vals = self.memberships(xi)
        for k in range(len(self.entries) - 1, -1, -1):
            if vals[k] <= 1.0:
                return self.entries[k].k_gain, k, True
        return self.entries[0].k_gain, 0, False


def lookup_gain(table: LookupTable, xi):
    return table.lookup_gain(xi)


def build_offline_table(
    xi0=DEFAULT_XI0,
    n_entries: int = DEFAULT_N_ENTRIES,
    polytope: PolytopeModel | None = None,
    weights: RmpcWeights | None = None,
    shrink: float = DEFAULT_SHRINK,
    backend: SdpBackend | None = None,
) -> LookupTable:
    """Synthesize nested invariant ellipsoids from seed states ``xi0, shrink*xi0, ...``.

    Entry 0 must be feasible. A later infeasible or numerically failed solve
    truncates the table with a warning since the remaining region is already
    small.
    """
    if polytope is None or weights is None:
        raise ValueError("polytope and weights are required")
    if not 0 < shrink < 1:
        raise ValueError("shrink must lie in (0, 1)")
    if n_entries < 1:
        raise ValueError("n_entries must be >= 1")
    prog = RmpcProgram(polytope, weights, backend)
    seed = np.asarray(xi0, dtype=float)
    entries: list[EllipsoidEntry] = []
    q_prev = None
    for k in range(n_entries):
        if entries:
            seed = shrink * seed
            member = entries[-1].membership(seed)
            assert member <= 1.0 + 1e-9, f"seed {k} escapes ellipsoid {k - 1} ({member})"
        try:
            sol = prog.solve(seed, q_prev)
        except (Infeasible, SolverFailure) as exc:
            if k == 0:
                raise
            log.warning("table truncated at %d entries: entry %d failed (%s)", k, k, exc)
            break
        entries.append(
            EllipsoidEntry(sol.q, np.linalg.inv(sol.q), sol.y, sol.k_gain, sol.gamma, seed.copy())
        )
        q_prev = sol.q
    return LookupTable(entries, polytope.ts, weights.digest(), polytope.digest(), weights)


def synthesize_no_am(
    polytope4: PolytopeModel,
    weights4: RmpcWeights,
    xi0=DEFAULT_XI0[:4],
    n_entries: int = DEFAULT_N_ENTRIES,
    shrink: float = DEFAULT_SHRINK,
    backend: SdpBackend | None = None,
) -> LookupTable:
    """Same pipeline on the 4-state model whose input is the steering angle."""
    return build_offline_table(xi0, n_entries, polytope4, weights4, shrink, backend)


# -- persistence ----------------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(values))


def save_table(table: LookupTable, path) -> None:
    """Write the versioned text format; values use 17 significant digits."""
    n = table.n
    lines = [
        MAGIC,
        f"dim {n}",
        f"entries {len(table)}",
        f"ts {table.ts:.17g}",
        f"weights {table.weights_digest or '-'}",
        f"polytope {table.polytope_digest or '-'}",
    ]
    if table.weights is not None:
        w = table.weights
        lines += [
            f"q_bar {_fmt(w.q_bar)}",
            f"r_bar {w.r_bar:.17g}",
            f"du_max {w.du_max:.17g}",
            f"xi_max {_fmt(w.xi_max)}",
        ]
    for i, e in enumerate(table.entries):
        lines += [
            f"entry {i}",
            f"Q {_fmt(e.q)}",
            f"Qinv {_fmt(e.q_inv)}",
            f"Y {_fmt(e.y)}",
            f"K {_fmt(e.k_gain)}",
            f"gamma {e.gamma:.17g}",
            f"seed {_fmt(e.seed_state)}",
        ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path) -> LookupTable:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ParseError(f"{path}: missing {MAGIC} header")
    header: dict[str, str] = {}
    entries_raw: list[dict[str, str]] = []
    for lineno, raw in enumerate(text[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key == "entry":
            entries_raw.append({})
            continue
        target = entries_raw[-1] if entries_raw else header
        if key in target:
            raise ParseError(f"{path}:{lineno}: duplicate field {key!r}")
        target[key] = rest
    try:
        n = int(header["dim"])
        count = int(header["entries"])
        ts = float(header["ts"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad header ({exc})") from exc
    if count != len(entries_raw):
        raise ParseError(f"{path}: header says {count} entries, found {len(entries_raw)}")

    def arr(d, key, shape):
        try:
            vals = np.array([float(t) for t in d[key].split()])
            return vals.reshape(shape)
        except (KeyError, ValueError) as exc:
            raise ParseError(f"{path}: field {key!r}: {exc}") from exc

    weights = None
    if "q_bar" in header:
        weights = RmpcWeights(
            arr(header, "q_bar", (n, n)),
            float(header["r_bar"]),
            float(header["du_max"]),
            arr(header, "xi_max", (n,)),
        )
    entries = []
    for d in entries_raw:
        entries.append(
            EllipsoidEntry(
                q=arr(d, "Q", (n, n)),
                q_inv=arr(d, "Qinv", (n, n)),
                y=arr(d, "Y", (1, n)),
                k_gain=arr(d, "K", (1, n)),
                gamma=float(arr(d, "gamma", (1,))[0]),
                seed_state=arr(d, "seed", (n,)),
            )
        )
    digest = lambda k: "" if header.get(k, "-") == "-" else header[k]  # noqa: E731
    return LookupTable(entries, ts, digest("weights"), digest("polytope"), weights)
