"""Run acceptance criteria and parameter sweeps, write JSON reports and CSV tables.

Report JSON (``schema = "tentspde-report/1"``)::

    {"schema", "seed", "config", "passed",
     "criteria": [{"id", "name", "anchor", "value", "threshold", "passed",
                   "stderr", "runtime", "detail"}, ...]}

``runtime`` is the only field that varies between runs of the same config
and seed.  CSV tables have a header row and full-precision decimals;
criteria tables carry one row per criterion, sweep tables one row per axis
value with an ``<estimator>`` and ``<estimator>_se`` column per estimator.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import criteria, heat, parabolic, spde, stochastic, tent
from .config import ExperimentConfig
from .grid import GridSpec

SCHEMA = "tentspde-report/1"
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _map(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------ run


@dataclass(frozen=True)
class Report:
    seed: int
    config: dict
    results: tuple[criteria.CriterionResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.results]

    def as_dict(self, runtime: bool = True) -> dict:
        rows = [r.as_dict() for r in self.results]
        if not runtime:
            for row in rows:
                row.pop("runtime")
        return {"schema": SCHEMA, "seed": self.seed, "config": self.config,
                "passed": self.passed, "criteria": rows}

    def to_json(self, runtime: bool = True) -> str:
        return json.dumps(self.as_dict(runtime), indent=2, sort_keys=True)


def _run_one(args) -> criteria.CriterionResult:
    cid, seed, samples, quick = args
    return criteria.run_criterion(cid, criteria.Context(seed, samples, quick))


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> Report:
    """Run the enabled criteria; writes ``report.json`` and ``criteria.csv`` when ``out`` is given."""
    r = cfg.run
    jobs = [(cid, r.seed, r.samples, r.quick) for cid in sorted(r.criteria)]
    results = tuple(_map(_run_one, jobs, r.workers))
    report = Report(r.seed, cfg.as_dict(), results)
    if out is not None:
        write_report(report, out)
    return report


CRITERIA_COLUMNS = ("id", "name", "value", "threshold", "passed", "stderr", "runtime")


def write_report(report: Report, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    rows = [{k: r.as_dict()[k] for k in CRITERIA_COLUMNS} for r in report.results]
    write_csv(out / "criteria.csv", CRITERIA_COLUMNS, rows)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, columns, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


# ---------------------------------------------------------------- sweep


ESTIMATORS = ("lions_tp", "half_identity_error", "q_ratio", "s_ratio", "v1_ratio", "solution_ratio")


@dataclass(frozen=True)
class SweepPoint:
    """Parameters of one sweep row; everything but the swept axis comes from the config."""

    grid: GridSpec
    p: float
    T: float
    K: int
    law: str
    lam: float
    Lam: float
    cellsize: float | None
    skew: float
    kmax: int
    scales: tuple[float, float, float]
    samples: int
    seed: int


def sweep_points(cfg: ExperimentConfig, axis: str | None = None) -> list[tuple[object, SweepPoint]]:
    axis = axis or cfg.sweep.axis
    c, d, g = cfg.coefficients, cfg.data, cfg.grid_spec()
    base = SweepPoint(
        grid=g, p=cfg.menus.p[0], T=cfg.T_menu()[-1], K=d.K, law=c.law, lam=c.lam, Lam=c.Lam,
        cellsize=c.cellsize, skew=c.skew, kmax=d.kmax, scales=(d.psi_scale, d.F_scale, d.g_scale),
        samples=cfg.run.samples or 8, seed=cfg.run.seed,
    )
    values = list(cfg.sweep.values)
    if not values:
        # a single-point sweep evaluates the configured parameters
        return [(None, base)]
    out = []
    for v in values:
        if axis == "p":
            pt = dataclasses.replace(base, p=float(v))
        elif axis == "resolution":
            pt = dataclasses.replace(base, grid=GridSpec(g.n, v[0], v[1], g.L, g.T_max))
        elif axis == "T":
            pt = dataclasses.replace(base, T=float(v))
        elif axis == "K":
            pt = dataclasses.replace(base, K=int(v))
        elif axis == "lambda_ratio":
            pt = dataclasses.replace(base, Lam=base.lam * float(v))
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        out.append((v, pt))
    return out


def _stat(values) -> tuple[float, float]:
    s = stochastic.EnsembleStat.of("", values)
    return s.mean, s.stderr


def _rng(pt: SweepPoint, salt: int, i: int) -> np.random.Generator:
    # streams depend on the root seed and sample index only, so rows share inputs
    return np.random.default_rng(np.random.SeedSequence(pt.seed, spawn_key=(salt, i)))


def point_estimates(pt: SweepPoint) -> dict[str, tuple[float, float]]:
    """Mean and standard error of every ratio estimator at one sweep point."""
    g, p, n = pt.grid, pt.p, pt.samples
    a = parabolic.sample_coefficients(g, pt.law, pt.lam, pt.Lam, cellsize=pt.cellsize, seed=pt.seed,
                                      skew=pt.skew if g.n == 2 else 0.0)
    H = parabolic.factorize(a)
    kind = tent.tent(p)
    out = {}

    vals = []
    for i in range(n):
        F = criteria.cell_field(g, _rng(pt, 1, i), g.n, cells=8)
        vals.append(tent.norm(parabolic.lions(H, F), kind) / tent.norm(F, kind))
    out["lions_tp"] = _stat(vals)

    vals = []
    for i in range(n):
        rng = _rng(pt, 2, i)
        psi = criteria.band_limited_psi(g, rng, pt.kmax, mean=float(rng.standard_normal()))
        vals.append(abs(heat.half_identity(psi).error) / stochastic.l2_squared(psi))
    out["half_identity_error"] = _stat(vals)

    vals = []
    for i in range(n):
        f = criteria.early_mode_field(g, _rng(pt, 3, i))
        vals.append(stochastic.l2_squared(heat.q_operator(f)) / stochastic.l2_squared(f))
    out["q_ratio"] = _stat(vals)

    vals = []
    for i in range(n):
        h = criteria.random_field(g, _rng(pt, 4, i), d=2)
        vals.append(tent.carleson_norm(stochastic.s_operator(pt.T, h)) / (np.sqrt(pt.T) * tent.carleson_norm(h)))
    out["s_ratio"] = _stat(vals)

    gfield = criteria.early_mode_field(g, _rng(pt, 5, 0), d=pt.K, frac=0.5)
    den = tent.norm(gfield, kind) ** p
    vals = []
    for i in range(n):
        W = stochastic.sample_bm(g, pt.K, np.random.SeedSequence(pt.seed, spawn_key=(6, i)))
        vals.append(tent.norm(stochastic.stoch_convolution_gradient(gfield, W), kind) ** p / den)
    out["v1_ratio"] = _stat(vals)

    if p > 1:
        rep = spde.maxreg_ratio(H, p, n, pt.seed, K=pt.K, scales=pt.scales, T_menu=(pt.T,))
        out["solution_ratio"] = (rep.ratios[0], rep.stderr[0]) if not rep.degenerate else (np.nan, np.nan)
    else:
        # the solution estimate is only defined for p > 1
        out["solution_ratio"] = (np.nan, np.nan)
    return out


@dataclass(frozen=True)
class SweepTable:
    axis: str
    columns: tuple[str, ...]
    rows: tuple[dict, ...]

    def write(self, path: str | Path) -> None:
        write_csv(path, self.columns, list(self.rows))


def sweep(cfg: ExperimentConfig, axis: str | None = None, out: str | Path | None = None) -> SweepTable:
    axis = axis or cfg.sweep.axis
    points = sweep_points(cfg, axis)
    estimates = _map(point_estimates, [pt for _, pt in points], cfg.run.workers)
    columns = (axis,) + tuple(c for e in ESTIMATORS for c in (e, f"{e}_se"))
    rows = []
    for (value, _), est in zip(points, estimates):
        row = {axis: "x".join(map(str, value)) if isinstance(value, list) else value}
        for e in ESTIMATORS:
            row[e], row[f"{e}_se"] = est[e]
        rows.append(row)
    table = SweepTable(axis, columns, tuple(rows))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        table.write(Path(out) / f"sweep_{axis}.csv")
    return table
