"""Command-line entry point ``tentspde``.

Exit codes: 0 pass, 1 criterion failure, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import criteria, harness, heat, parabolic, spde, stochastic, tent
from . import decomposition as cz
from .grid import SpaceTimeField, load_field


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--seed", type=int, help="root seed, overrides run.seed")
    common.add_argument("--out", help="output directory, overrides run.out")
    common.add_argument("--samples", type=int, help="ensemble size, overrides run.samples")
    common.add_argument("--workers", type=int, help="worker processes, overrides run.workers")

    ap = argparse.ArgumentParser(prog="tentspde", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("norm", parents=[common], help="tent-space or vertical norm of a field")
    p.add_argument("--kind", default="tent", choices=[f.value for f in tent.Family])
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--input", help="field file; a random field on the config grid if omitted")

    sub.add_parser("heat", parents=[common], help="half-identity check for the heat semigroup")
    sub.add_parser("lions", parents=[common], help="Lions operator ratios for random forcing")
    sub.add_parser("quad", parents=[common], help="quadratic operator identity and contraction")

    p = sub.add_parser("czdecomp", parents=[common], help="Calderón–Zygmund splitting of a random field")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--lam", type=float, help="height; the median of the level function if omitted")

    sub.add_parser("spde", parents=[common], help="assemble one SPDE solution and report its norms")

    p = sub.add_parser("verify", parents=[common], help="run acceptance criteria")
    p.add_argument("--criteria", help="comma-separated ids, overrides run.criteria")
    p.add_argument("--quick", action="store_true", help="small grids and ensembles")

    p = sub.add_parser("sweep", parents=[common], help="ratio estimators along one parameter axis")
    p.add_argument("--axis", choices=cfgmod.SWEEP_AXES)
    return ap


def _load(args) -> cfgmod.ExperimentConfig:
    if args.config:
        cfg = cfgmod.load(args.config)
    elif args.command == "verify":
        cfg = cfgmod.load(cfgmod.packaged("acceptance-n1"))
    else:
        cfg = cfgmod.from_dict({"run": {"seed": 0}})
    overrides = dict(seed=args.seed, out=args.out, samples=args.samples, workers=args.workers)
    if getattr(args, "criteria", None):
        try:
            overrides["criteria"] = tuple(int(c) for c in args.criteria.split(","))
        except ValueError as exc:
            raise cfgmod.ConfigError("--criteria", "expected comma-separated integers") from exc
    if getattr(args, "quick", False):
        overrides["quick"] = True
    return cfg.with_overrides(**overrides)


def _emit(record: dict, cfg: cfgmod.ExperimentConfig, name: str, to_file: bool) -> None:
    text = json.dumps(criteria._plain(record), indent=2, sort_keys=True)
    print(text)
    if to_file:
        out = Path(cfg.run.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text + "\n")


def _coefficients(cfg, grid):
    c = cfg.coefficients
    return parabolic.sample_coefficients(grid, c.law, c.lam, c.Lam, cellsize=c.cellsize, seed=cfg.run.seed,
                                         skew=c.skew if grid.n == 2 else 0.0)


def _rng(cfg, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.run.seed, spawn_key=(salt,)))


def cmd_norm(cfg, args) -> dict:
    if args.input:
        f = load_field(args.input)
        if not isinstance(f, SpaceTimeField):
            raise ValueError("norm needs a space-time field")
    else:
        f = criteria.random_field(cfg.grid_spec(), _rng(cfg, 1))
    return json.loads(tent.norm_record(f, tent.NormKind(args.kind, args.p)))


def cmd_heat(cfg, args) -> dict:
    g, rng = cfg.grid_spec(), _rng(cfg, 2)
    rows = []
    for _ in range(cfg.run.samples or 4):
        psi = criteria.band_limited_psi(g, rng, cfg.data.kmax, mean=float(rng.standard_normal()))
        h = heat.half_identity(psi)
        rows.append({"time_sum": h.time_sum, "tail": h.tail, "target": h.target,
                     "relative_error": abs(h.error) / stochastic.l2_squared(psi)})
    return {"grid": g.fingerprint(), "samples": rows}


def cmd_lions(cfg, args) -> dict:
    g = cfg.grid_spec()
    H = parabolic.factorize(_coefficients(cfg, g))
    rng = _rng(cfg, 3)
    rows = []
    for _ in range(cfg.run.samples or 4):
        F = criteria.random_field(g, rng, d=g.n)
        grad = parabolic.lions(H, F)
        row = {"l2_ratio_times_lam": np.sqrt(stochastic.l2_squared(grad) / stochastic.l2_squared(F)) * cfg.coefficients.lam}
        for p in cfg.menus.p:
            row[f"tent_ratio_p={p:g}"] = tent.norm(grad, tent.tent(p)) / tent.norm(F, tent.tent(p))
        rows.append(row)
    return {"grid": g.fingerprint(), "samples": rows}


def cmd_quad(cfg, args) -> dict:
    g, rng = cfg.grid_spec(), _rng(cfg, 4)
    rows = []
    for _ in range(cfg.run.samples or 4):
        f = criteria.early_mode_field(g, rng)
        base = stochastic.l2_squared(f)
        row = {"q_ratio": stochastic.l2_squared(heat.q_operator(f)) / base}
        for T in cfg.T_menu():
            row[f"q_trunc_ratio_T={T:g}"] = np.sqrt(stochastic.l2_squared(heat.q_trunc(T, f)) / base)
        rows.append(row)
    return {"grid": g.fingerprint(), "samples": rows}


def cmd_czdecomp(cfg, args) -> dict:
    g, rng = cfg.grid_spec(), _rng(cfg, 5)
    coords = g.coordinates()
    c = rng.uniform(0, g.L, g.n)
    d2 = sum(((x - ci + g.L / 2) % g.L - g.L / 2) ** 2 for x, ci in zip(coords, c))
    f = SpaceTimeField(g, rng.standard_normal((g.M,) + g.spatial_shape) * np.exp(-d2 / 0.005))
    lam = args.lam if args.lam is not None else float(np.median(cz.level_function(f, args.p).scalar()))
    dec = cz.cz_decompose(f, args.p, lam)
    rep = cz.cz_verify(dec, f, args.p, lam)
    record = json.loads(dec.to_json())
    record["checks"] = {k: {"value": v, "bound": b, "passed": ok} for k, (v, b, ok) in rep.checks.items()}
    return record


def cmd_spde(cfg, args) -> dict:
    g, d = cfg.grid_spec(), cfg.data
    H = parabolic.factorize(_coefficients(cfg, g))
    sample = spde.draw_data(g, d.K, stochastic.sample_seed(cfg.run.seed, 0),
                            d.psi_scale, d.F_scale, d.g_scale, d.kmax)
    bundle = spde.assemble_solution(H, sample.psi, sample.F, sample.g, sample.W)
    phi = spde.bump_test_function(g, (g.L / 2,) * g.n, 0.3 * g.L, omega=3.0)
    norms = {f"p={p:g}": bundle.norm_report(p, T) for p in cfg.menus.p for T in cfg.T_menu()[-1:]}
    return {"grid": g.fingerprint(), "pw_residual": spde.pw_residual(bundle, phi), "norms": norms}


def cmd_verify(cfg, args) -> harness.Report:
    report = harness.run(cfg, cfg.run.out)
    for r in report.results:
        print(r.line())
    return report


def cmd_sweep(cfg, args) -> harness.SweepTable:
    table = harness.sweep(cfg, args.axis, cfg.run.out)
    print(",".join(table.columns))
    for row in table.rows:
        print(",".join(harness._cell(row.get(c)) for c in table.columns))
    return table


COMMANDS = {
    "norm": cmd_norm, "heat": cmd_heat, "lions": cmd_lions, "quad": cmd_quad,
    "czdecomp": cmd_czdecomp, "spde": cmd_spde, "verify": cmd_verify, "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    try:
        result = COMMANDS[args.command](cfg, args)
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return harness.EXIT_RUNTIME
    if isinstance(result, harness.Report):
        return harness.EXIT_PASS if result.passed else harness.EXIT_FAIL
    if isinstance(result, dict):
        _emit(result, cfg, args.command, args.out is not None or args.config is not None)
    return harness.EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
