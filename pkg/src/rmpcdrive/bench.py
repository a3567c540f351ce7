"""Controller construction, table caching and the four-controller benchmark."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import svg
from .apf import PotentialScene, potential_grid
from .controllers import (
    CONTROLLER_NAMES,
    Controller,
    NoAmController,
    OffsetOfflineController,
    OnlineController,
    ProposedController,
)
from .lmi import (
    LookupTable,
    RmpcWeights,
    build_offline_table,
    default_weights,
    default_weights_no_am,
    load_table,
    save_table,
    synthesize_no_am,
)
from .sim import METRIC_FIELDS, TIMING_FIELDS, Metrics, ScenarioSpec, SimLog, compute_metrics, run_closed_loop
from .vehicle import (
    ChassisParams,
    UncertaintyBox,
    discretize,
    continuous_error_dynamics,
    error_polytope_vertices,
    extend_model,
    polytope_vertices,
)

log = logging.getLogger(__name__)


@dataclass
class ControllerSuite:
    """Everything the four controllers need for one chassis/uncertainty design."""

    chassis: ChassisParams
    kappa: float
    table: LookupTable | None
    table4: LookupTable | None
    weights: RmpcWeights = field(default_factory=default_weights)

    @property
    def polytope(self):
        return polytope_vertices(self.chassis, UncertaintyBox(self.kappa, self.chassis.c_f, self.chassis.c_r))

    def make(self, name: str) -> Controller:
        if name not in CONTROLLER_NAMES:
            raise ValueError(f"unknown controller {name!r}; choose from {', '.join(CONTROLLER_NAMES)}")
        if (name == "offline-no-am" and self.table4 is None) or (
            name in ("proposed", "offset-offline") and self.table is None
        ):
            raise ValueError(f"suite was built without the table {name!r} needs")
        if name == "proposed":
            return ProposedController(self.table)
        if name == "offset-offline":
            ext = extend_model(discretize(*continuous_error_dynamics(self.chassis), self.table.ts))
            return OffsetOfflineController(self.table, ext)
        if name == "online":
            return OnlineController(self.polytope, self.weights)
        if name == "offline-no-am":
            return NoAmController(self.table4, self.weights.du_max)
        raise ValueError(f"unknown controller {name!r}; choose from {', '.join(CONTROLLER_NAMES)}")


def synthesize_table(chassis: ChassisParams, kappa: float, weights: RmpcWeights | None = None) -> LookupTable:
    weights = weights or default_weights()
    poly = polytope_vertices(chassis, UncertaintyBox(kappa, chassis.c_f, chassis.c_r))
    return build_offline_table(polytope=poly, weights=weights)


def synthesize_table4(chassis: ChassisParams, kappa: float, weights4: RmpcWeights | None = None) -> LookupTable:
    weights4 = weights4 or default_weights_no_am()
    poly4 = error_polytope_vertices(chassis, UncertaintyBox(kappa, chassis.c_f, chassis.c_r))
    return synthesize_no_am(poly4, weights4)


def _cached(path: Path | None, build, expect_poly: str, expect_w: str) -> LookupTable:
    if path is not None and path.exists():
        t = load_table(path)
        if t.polytope_digest == expect_poly and t.weights_digest == expect_w:
            return t
        log.info("cached table %s is stale, re-synthesizing", path)
    t = build()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_table(t, path)
    return t


def build_suite(
    chassis: ChassisParams,
    kappa: float,
    cache_dir=None,
    weights: RmpcWeights | None = None,
    controllers: Sequence[str] = CONTROLLER_NAMES,
    table: LookupTable | None = None,
) -> ControllerSuite:
    """Synthesize (or load from ``cache_dir``) the tables ``controllers`` need.

    A caller-supplied ``table`` replaces the augmented-model synthesis; it
    must have been built for the same uncertainty polytope.
    """
    w, w4 = weights or default_weights(), default_weights_no_am()
    box = UncertaintyBox(kappa, chassis.c_f, chassis.c_r)
    poly, poly4 = polytope_vertices(chassis, box), error_polytope_vertices(chassis, box)
    cache = Path(cache_dir) if cache_dir is not None else None
    t6 = t4 = None
    if table is not None:
        if table.polytope_digest != poly.digest():
            raise ValueError("table was synthesized for a different model or uncertainty box")
        t6 = table
    elif {"proposed", "offset-offline"} & set(controllers):
        t6 = _cached(
            cache / f"proposed_{poly.digest()}_{w.digest()}.lut" if cache else None,
            lambda: build_offline_table(polytope=poly, weights=w),
            poly.digest(),
            w.digest(),
        )
    if "offline-no-am" in controllers:
        t4 = _cached(
            cache / f"no_am_{poly4.digest()}_{w4.digest()}.lut" if cache else None,
            lambda: synthesize_no_am(poly4, w4),
            poly4.digest(),
            w4.digest(),
        )
    return ControllerSuite(chassis, kappa, t6, t4, w)


# -- benchmark -----------------------------------------------------------------


@dataclass
class RunResult:
    scenario: str
    controller: str
    metrics: Metrics | None
    error: str = ""
    log_path: str = ""

    @property
    def degraded(self) -> bool:
        return self.metrics is None or self.metrics.degraded_steps > 0 or self.metrics.collided


@dataclass
class BenchReport:
    runs: list[RunResult]
    controllers: tuple[str, ...]
    scenarios: tuple[str, ...]
    seed: int = 0

    def get(self, scenario: str, controller: str) -> RunResult:
        for r in self.runs:
            if r.scenario == scenario and r.controller == controller:
                return r
        raise KeyError((scenario, controller))

    def timing_table(self) -> dict[str, tuple[float, float]]:
        """Mean and max step time per controller over all its successful runs."""
        out = {}
        for c in self.controllers:
            ms = [r.metrics for r in self.runs if r.controller == c and r.metrics is not None]
            if ms:
                out[c] = (float(np.mean([m.mean_step_ms for m in ms])), max(m.max_step_ms for m in ms))
        return out

    def summary_rows(self, include_timing: bool = True) -> list[dict]:
        rows = []
        for r in self.runs:
            row = {"scenario": r.scenario, "controller": r.controller, "error": r.error}
            if r.metrics is not None:
                for k in METRIC_FIELDS:
                    if include_timing or k not in TIMING_FIELDS:
                        row[k] = getattr(r.metrics, k)
            rows.append(row)
        return rows

    def summary_text(self) -> str:
        head = f"{'scenario':<12} {'controller':<15} {'rms_ey':>9} {'max|du|':>9} {'TV':>8} {'clear':>7} {'mean ms':>9} {'max ms':>9} {'viol':>5}"
        lines = [head, "-" * len(head)]
        for r in self.runs:
            if r.metrics is None:
                lines.append(f"{r.scenario:<12} {r.controller:<15} FAILED: {r.error}")
                continue
            m = r.metrics
            lines.append(
                f"{r.scenario:<12} {r.controller:<15} {m.rms_ey:9.4f} {m.max_abs_du:9.5f} "
                f"{m.steering_tv:8.4f} {m.min_clearance:7.3f} {m.mean_step_ms:9.3f} {m.max_step_ms:9.3f} {m.violations:5d}"
            )
        lines.append("")
        lines.append("controller      mean step [ms]   max step [ms]")
        for c, (mean, mx) in self.timing_table().items():
            lines.append(f"{c:<15} {mean:14.4f} {mx:15.4f}")
        return "\n".join(lines) + "\n"

    def write_summary_csv(self, path, include_timing: bool = True) -> None:
        fields = ["scenario", "controller", "error"] + [
            k for k in METRIC_FIELDS if include_timing or k not in TIMING_FIELDS
        ]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for row in self.summary_rows(include_timing):
                w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in row.items()})


def run_one(spec: ScenarioSpec, controller: Controller, out_dir: Path | None = None) -> tuple[RunResult, SimLog | None]:
    try:
        sim_log = run_closed_loop(spec, controller)
    except Exception as exc:  # recorded in the report; the sweep goes on
        log.exception("run %s/%s failed", spec.name, controller.name)
        return RunResult(spec.name, controller.name, None, f"{type(exc).__name__}: {exc}"), None
    res = RunResult(spec.name, controller.name, compute_metrics(sim_log, spec))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        p = out_dir / f"{spec.name}_{controller.name}.csv"
        sim_log.write_csv(p)
        res.log_path = str(p)
    return res, sim_log


def _run_job(args):
    spec, suite, name, out = args
    return run_one(spec, suite.make(name), out)


def run_benchmark(
    specs: Sequence[ScenarioSpec],
    suite: ControllerSuite,
    controllers: Sequence[str] = CONTROLLER_NAMES,
    out_dir=None,
    seed: int = 0,
    plots: bool = True,
    jobs: int = 1,
) -> BenchReport:
    """Run every controller on every scenario; failures are recorded, not raised.

    With ``jobs > 1`` runs fan out over worker processes; each writes its own
    log and the summary is assembled afterwards in a fixed order. Parallel
    runs share the CPU, so their step timings are less representative.

    The simulation has no stochastic element; ``seed`` is recorded so
    reports state the configuration they came from.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    work = [(spec, suite, name, out) for spec in specs for name in controllers]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = [_run_job(w) for w in work]
    runs = []
    for spec in specs:
        logs = {}
        for (sp, _, name, _), (res, sim_log) in zip(work, results):
            if sp is not spec:
                continue
            runs.append(res)
            if sim_log is not None:
                logs[name] = sim_log
        if out is not None and plots and logs:
            write_scenario_plots(spec.name, logs, out)
    report = BenchReport(runs, tuple(controllers), tuple(s.name for s in specs), seed)
    if out is not None:
        (out / "summary.txt").write_text(report.summary_text())
        report.write_summary_csv(out / "summary.csv")
    return report


PLOT_SIGNALS = (
    ("delta_f", "steering angle [rad]"),
    ("du", "steering increment [rad/step]"),
    ("ey", "lateral error [m]"),
    ("eydot", "lateral error rate [m/s]"),
    ("epsi", "heading error [rad]"),
    ("epsidot", "heading error rate [rad/s]"),
)


def write_scenario_plots(scenario: str, logs: dict[str, SimLog], out: Path) -> list[Path]:
    paths = []
    for key, label in PLOT_SIGNALS:
        series = {name: (lg["t"], lg[key]) for name, lg in logs.items()}
        p = out / f"{scenario}_{key}.svg"
        p.write_text(svg.line_chart(series, title=f"{scenario}: {label}", x_label="t [s]", y_label=label))
        paths.append(p)
    return paths


# -- potential map ----------------------------------------------------------------


def emit_potential_map(scene: PotentialScene, x_range, res: int, out_dir, x_dot: float, stem: str = "potential"):
    """Grid ``J_syn`` over ``x_range`` and the road width; write CSV and SVG.

    Cells on or beyond the road edge (infinite potential) are written as the
    largest finite grid value and flagged in the CSV.
    """
    if res < 10:
        raise ValueError("resolution must be at least 10 per axis")
    road = scene.road
    xs = np.linspace(x_range[0], x_range[1], res)
    ys = np.linspace(road.y_road_min, road.y_road_max, res)
    grid = potential_grid(scene, xs, ys, x_dot)
    finite = grid[np.isfinite(grid)]
    vmax = float(finite.max()) if finite.size else 0.0
    sat = np.where(np.isfinite(grid), grid, vmax)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "J", "out_of_road"])
        for i, yv in enumerate(ys):
            for j, xv in enumerate(xs):
                w.writerow([f"{xv:.12g}", f"{yv:.12g}", f"{sat[i, j]:.12g}", int(not math.isfinite(grid[i, j]))])
    (out / f"{stem}.svg").write_text(
        svg.heatmap(sat, xs, ys, title="potential field", overlay_y=(road.y_road_min, *road.lane_marks, road.y_road_max))
    )
    return xs, ys, sat
