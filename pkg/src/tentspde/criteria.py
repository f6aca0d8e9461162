"""Acceptance criteria as runnable checks.

Each criterion takes a :class:`Context` and returns a :class:`CriterionResult`
with the measured value, its threshold and a pass flag.  ``Context.quick``
shrinks grids and ensembles for smoke runs; the default sizes are the
desk-scale ones used by the acceptance suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import decomposition as cz
from . import heat, parabolic, spde, stochastic, tent
from .grid import GridSpec, SpaceField, SpaceTimeField, ball_members

# Frozen once from seeds 0-3 at desk scale: Carleson ratios peaked at 1.40, Hölder ratios at 0.62.
CARLESON_C = 2.0
HOLDER_C = 2.0
ATOM_BOUND_FACTOR = 2.0


@dataclass
class Context:
    seed: int = 0
    samples: int | None = None
    quick: bool = False

    def pick(self, desk, quick):
        return quick if self.quick else desk

    def n_samples(self, desk: int, quick: int) -> int:
        if self.samples is not None:
            return self.samples
        return self.pick(desk, quick)

    def rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(salt,)))


@dataclass
class CriterionResult:
    id: int
    name: str
    anchor: str
    value: float
    threshold: float
    passed: bool
    stderr: float | None = None
    runtime: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        se = "" if self.stderr is None else f" se={self.stderr:.3g}"
        return f"[{tag}] C{self.id:02d} {self.name}: value={self.value:.6g} threshold={self.threshold:.6g}{se}"

    def as_dict(self) -> dict:
        return {
            "id": self.id, "name": self.name, "anchor": self.anchor, "value": float(self.value),
            "threshold": float(self.threshold), "passed": bool(self.passed),
            "stderr": None if self.stderr is None else float(self.stderr),
            "runtime": self.runtime, "detail": _plain(self.detail),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


@dataclass(frozen=True)
class Criterion:
    id: int
    name: str
    anchor: str
    run: Callable[[Context], tuple]


REGISTRY: dict[int, Criterion] = {}


def criterion(id: int, name: str, anchor: str):
    def wrap(fn):
        REGISTRY[id] = Criterion(id, name, anchor, fn)
        return fn

    return wrap


def run_criterion(id: int, ctx: Context) -> CriterionResult:
    c = REGISTRY[id]
    start = time.perf_counter()
    value, threshold, passed, stderr, detail = c.run(ctx)
    return CriterionResult(id, c.name, c.anchor, value, threshold, bool(passed), stderr,
                           time.perf_counter() - start, detail)


# ------------------------------------------------------------- generators


def random_field(grid: GridSpec, rng: np.random.Generator, d: int = 1) -> SpaceTimeField:
    return SpaceTimeField(grid, rng.standard_normal((grid.M,) + grid.spatial_shape + (d,)))


def cell_field(grid: GridSpec, rng: np.random.Generator, d: int, cells: int = 16) -> SpaceTimeField:
    """Piecewise constant on ``cells`` continuum cells per axis; refinement samples the same function."""
    raw = rng.standard_normal((cells,) + (cells,) * grid.n + (d,))
    t_idx = np.arange(grid.M) * cells // grid.M
    x_idx = np.arange(grid.N) * cells // grid.N
    return SpaceTimeField(grid, raw[np.ix_(t_idx, *([x_idx] * grid.n))])


def early_mode_field(grid: GridSpec, rng: np.random.Generator, d: int = 1, frac: float = 0.1) -> SpaceTimeField:
    """Lowest nonzero Fourier modes on axis 0 with smooth random time profiles on ``(0, frac T_max]``."""
    coords = grid.coordinates()
    t = grid.times / (frac * grid.T_max)
    out = np.zeros((grid.M,) + grid.spatial_shape + (d,))
    for k in range(d):
        for basis in (np.cos(2 * np.pi * coords[0] / grid.L), np.sin(2 * np.pi * coords[0] / grid.L)):
            c0, c1 = rng.standard_normal(2)
            prof = np.where(t < 1, np.sin(np.pi * t) ** 2 * (c0 + c1 * np.cos(2 * np.pi * t)), 0.0)
            out[..., k] += prof.reshape((-1,) + (1,) * grid.n) * basis
    return SpaceTimeField(grid, out)


def band_limited_psi(grid: GridSpec, rng: np.random.Generator, kmax: int = 4, mean: float = 0.0) -> SpaceField:
    return SpaceField(grid, spde.band_limited(grid, rng, kmax) + mean)


def cz_corpus(seed: int, count: int = 50, quick: bool = False):
    """Corpus of ``(f, p, lam)`` triples: smooth, localized and rough fields on n=1 and n=2 grids."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9,)))
    g1 = GridSpec(1, 64, 64, 1.0, 0.05) if quick else GridSpec(1, 128, 128, 1.0, 0.05)
    g2 = GridSpec(2, 16, 16, 1.0, 0.05) if quick else GridSpec(2, 32, 32, 1.0, 0.05)
    ps = (0.9, 1.0, 1.5, 2.0)
    out = []
    for i in range(count):
        g = g1 if i % 2 == 0 else g2
        kind = (i // 2) % 3
        if kind == 0:
            prof = rng.standard_normal((g.M,) + (1,) * g.n)
            v = spde.band_limited(g, rng, 3)[None] * (1 + 0.5 * prof)
        elif kind == 1:
            coords = g.coordinates()
            c = rng.uniform(0, g.L, g.n)
            d2 = sum(((x - ci + g.L / 2) % g.L - g.L / 2) ** 2 for x, ci in zip(coords, c))
            width = (0.02, 0.005, 0.001)[i % 3]
            v = rng.standard_normal((g.M,) + g.spatial_shape) * np.exp(-d2 / width)
        else:
            v = rng.standard_normal((g.M,) + g.spatial_shape) ** 3
        f = SpaceTimeField(g, v)
        p = ps[i % 4]
        level = cz.level_function(f, p).scalar()
        lam = float(np.quantile(level, (0.5, 0.75, 0.9)[i % 3]))
        out.append((f, p, lam))
    return out


# --------------------------------------------------------------- criteria


@criterion(1, "tent_l2_identity", "conical square-function norm at p=2 equals the space-time L2 norm")
def c01(ctx: Context):
    rng = ctx.rng(1)
    grids = ctx.pick([GridSpec(1, 256, 256, 1.0, 0.25), GridSpec(2, 64, 128, 1.0, 0.25)],
                     [GridSpec(1, 32, 32), GridSpec(2, 16, 16)])
    worst = 0.0
    for i in range(ctx.n_samples(100, 10)):
        f = random_field(grids[i % 2], rng, d=1 + i % 3)
        l2 = np.sqrt(stochastic.l2_squared(f))
        worst = max(worst, abs(tent.norm(f, tent.tent(2)) - l2) / l2)
    return worst, 1e-12, worst <= 1e-12, None, {}


@criterion(2, "half_identity", "time integral of the squared heat gradient equals half the centred L2 mass")
def c02(ctx: Context):
    rng = ctx.rng(2)
    # small horizon keeps the right-endpoint quadrature bias below 1%; the tail is added exactly
    grids = ctx.pick([GridSpec(1, 256, 256, 1.0, 2e-3), GridSpec(2, 64, 128, 1.0, 1e-3)],
                     [GridSpec(1, 64, 64, 1.0, 2e-3)])
    worst, tail = 0.0, 0.0
    for i in range(ctx.n_samples(20, 4)):
        g = grids[i % len(grids)]
        psi = band_limited_psi(g, rng, kmax=4, mean=rng.standard_normal())
        h = heat.half_identity(psi)
        worst = max(worst, h.error / stochastic.l2_squared(psi))
        tail = max(tail, h.tail)
    return worst, 0.01, worst <= 0.01, None, {"max_tail": tail}


def _q_error(N: int, seed_rng: np.random.Generator) -> float:
    g = GridSpec(1, N, N, 1.0, 0.1)
    f = early_mode_field(g, seed_rng)
    lhs = stochastic.l2_squared(heat.q_operator(f))
    rhs = 0.5 * stochastic.l2_squared(f)
    return abs(lhs - rhs) / rhs


@criterion(3, "q_half_identity", "quadratic maximal-regularity operator is half an isometry on L2")
def c03(ctx: Context):
    fine, coarse = 256, 128
    errs, ratios = [], []
    for i in range(ctx.n_samples(5, 2)):
        e_f = _q_error(fine, ctx.rng(300 + i))
        e_c = _q_error(coarse, ctx.rng(300 + i))
        errs.append(e_f)
        ratios.append(e_c / e_f)
    worst = max(errs)
    ok = worst <= 0.02 and all(1.5 <= r <= 2.5 for r in ratios)
    return worst, 0.02, ok, None, {"halving_ratios": ratios}


@criterion(4, "q_trunc_contraction", "truncated companion operator is an L2 contraction")
def c04(ctx: Context):
    rng = ctx.rng(4)
    g = ctx.pick(GridSpec(1, 128, 128, 1.0, 0.1), GridSpec(1, 32, 32, 1.0, 0.1))
    worst = 0.0
    for _ in range(ctx.n_samples(50, 5)):
        f = random_field(g, rng)
        base = np.sqrt(stochastic.l2_squared(f))
        for T in (g.T_max / 4, g.T_max / 2, g.T_max):
            worst = max(worst, np.sqrt(stochastic.l2_squared(heat.q_trunc(T, f))) / base)
    return worst, 1.02, worst <= 1.02, None, {}


def _coeff_draw(g: GridSpec, i: int, seed: int) -> parabolic.CoefficientField:
    law = ("checkerboard", "smooth", "identity")[i % 3]
    lam, Lam = ((0.5, 2.0), (0.25, 1.0), (0.1, 3.0))[i % 3 if law != "identity" else 0]
    skew = 0.5 * lam if g.n == 2 and i % 2 else 0.0
    return parabolic.sample_coefficients(g, law, lam, Lam, cellsize=g.L / 8, seed=seed, skew=skew)


def _parabolic_grids(ctx):
    return ctx.pick([GridSpec(1, 128, 128, 1.0, 0.1), GridSpec(2, 32, 32, 1.0, 0.1)],
                    [GridSpec(1, 32, 32, 1.0, 0.1), GridSpec(2, 16, 16, 1.0, 0.1)])


@criterion(5, "energy_bound", "running energy plus dissipation never exceeds the initial energy")
def c05(ctx: Context):
    rng = ctx.rng(5)
    grids = _parabolic_grids(ctx)
    worst = 0.0
    for i in range(ctx.n_samples(30, 4)):
        g = grids[i % 2]
        a = _coeff_draw(g, i, int(rng.integers(2**31)))
        psi = SpaceField(g, rng.standard_normal(g.spatial_shape))
        u = parabolic.solve_cauchy(a, psi)
        prof, p0 = parabolic.energy_profile(u, psi, a.lam)
        worst = max(worst, prof.max() / p0)
    return worst, 1 + 1e-8, worst <= 1 + 1e-8, None, {}


@criterion(6, "lions_l2_bound", "solution gradient bounded by forcing over ellipticity")
def c06(ctx: Context):
    rng = ctx.rng(6)
    grids = _parabolic_grids(ctx)
    worst = 0.0
    for i in range(ctx.n_samples(50, 4)):
        g = grids[i % 2]
        a = _coeff_draw(g, i, int(rng.integers(2**31)))
        F = random_field(g, rng, d=g.n)
        ratio = np.sqrt(stochastic.l2_squared(parabolic.lions(a, F)) / stochastic.l2_squared(F))
        worst = max(worst, ratio * a.lam)
    return worst, 1 + 1e-8, worst <= 1 + 1e-8, None, {}


def carleson_suite(g: GridSpec, draws: int, seed: int) -> np.ndarray:
    """Carleson ratios for ``draws`` random (F, a, centre) and three radii; F has T-infinity norm 1."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    radii = (g.L / 16, g.L / 8, g.L / 4)
    out = np.empty((draws, len(radii)))
    for i in range(draws):
        F = cell_field(g, rng, g.n)
        F = F * (1.0 / tent.carleson_norm(F))
        a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=g.L / 8,
                                          seed=int(rng.integers(2**31)))
        grad = parabolic.lions(a, F)
        centre = tuple(int(c) * g.N // 16 for c in rng.integers(0, 16, g.n))
        for j, r in enumerate(radii):
            out[i, j] = parabolic.carleson_ratio(grad, ball_members(g, centre, r))
    return out


@criterion(7, "carleson_estimate", "local gradient energy of bounded-Carleson forcing scales like r^n")
def c07(ctx: Context):
    base = ctx.pick(GridSpec(1, 128, 128, 1.0, 1 / 16), GridSpec(1, 32, 32, 1.0, 1 / 16))
    draws = ctx.n_samples(20, 4)
    coarse = carleson_suite(base, draws, ctx.seed).max()
    fine = carleson_suite(base.refine(), draws, ctx.seed).max()
    change = max(fine / coarse, coarse / fine)
    ok = max(coarse, fine) <= CARLESON_C and change <= 2.0
    return max(coarse, fine), CARLESON_C, ok, None, {"coarse": coarse, "fine": fine, "change": change}


def offdiag_geometry(g: GridSpec):
    """Source ball at the torus centre, targets at several distances, several time lags."""
    src = ball_members(g, (g.N // 2,) * g.n, g.L / 20)
    f = SpaceField(g, src.mask() * 1.0)
    targets = []
    for frac in (0.15, 0.2, 0.25, 0.3):
        centre = (g.N // 2 + int(round(frac * g.N)),) + (g.N // 2,) * (g.n - 1)
        targets.append(ball_members(g, centre, g.L / 20))
    times = [(m, 0) for m in (g.M // 16, g.M // 8, g.M // 4, g.M // 2, g.M)]
    return src, f, targets, times


@criterion(8, "offdiag_decay", "propagator mass between separated sets decays in distance squared over time")
def c08(ctx: Context):
    g = ctx.pick(GridSpec(1, 128, 256, 1.0, 0.02), GridSpec(1, 64, 64, 1.0, 0.02))
    reports = []
    for k in range(ctx.pick(3, 1)):
        a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=g.L / 16, seed=ctx.seed + k)
        H = parabolic.factorize(a)
        src, f, targets, times = offdiag_geometry(g)
        reports += [parabolic.verify_offdiag(H, E, src, f, times) for E in targets]
    fit = parabolic.combine_offdiag(reports)
    ok = fit.c_hat > 0 and abs(fit.rho) >= 0.9 and fit.contraction <= 1 + 1e-8
    return abs(fit.rho), 0.9, ok, None, {"c_hat": fit.c_hat, "contraction": fit.contraction}


@criterion(9, "cz_decomposition", "good part, bad parts, total size and overlap bounded by frozen constants")
def c09(ctx: Context):
    fails, worst = [], {}
    for f, p, lam in cz_corpus(ctx.seed, ctx.n_samples(50, 8), ctx.quick):
        dec = cz.cz_decompose(f, p, lam)
        rep = cz.cz_verify(dec, f, p, lam)
        fails += rep.failures()
        for k, (v, _, _) in rep.checks.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst["good_part"], cz.FROZEN_CZ.C_g, not fails, None, {"max": worst, "failures": fails}


def atom_sweep(g: GridSpec, count: int, seed: int, ps=(0.95, 1.0)) -> dict:
    """max over atoms of the tent (quasi-)norm of the solution gradient, per exponent."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=g.L / 8, seed=seed)
    H = parabolic.factorize(a)
    best = {p: 0.0 for p in ps}
    for i in range(count):
        r = g.L * float(rng.choice([1 / 32, 1 / 16, 1 / 8]))
        centre = tuple(int(c) for c in rng.integers(0, g.N, g.n))
        ball = ball_members(g, centre, r)
        for p in ps:
            atom = cz.make_atom(ball, p, seed=int(rng.integers(2**31)), d=g.n)
            grad = parabolic.lions(H, atom.field)
            best[p] = max(best[p], tent.norm(grad, tent.tent(p)))
    return best


@criterion(10, "atom_sweep", "solution operator maps atoms to uniformly bounded tent quasi-norms")
def c10(ctx: Context):
    base = ctx.pick(GridSpec(1, 128, 128, 1.0, 1 / 16), GridSpec(1, 64, 64, 1.0, 1 / 16))
    count = ctx.n_samples(50, 4)
    coarse = atom_sweep(base, count, ctx.seed)
    fine = atom_sweep(base.refine(), count, ctx.seed)
    change = max(max(fine[p] / coarse[p], coarse[p] / fine[p]) for p in coarse)
    finite = all(np.isfinite(v) for v in (*coarse.values(), *fine.values()))
    ok = finite and change <= ATOM_BOUND_FACTOR
    return change, ATOM_BOUND_FACTOR, ok, None, {"coarse": coarse, "fine": fine}


@criterion(11, "s_operator_carleson", "running square function gains sqrt(T) on the Carleson norm")
def c11(ctx: Context):
    rng = ctx.rng(11)
    g = ctx.pick(GridSpec(1, 128, 128, 1.0, 1 / 16), GridSpec(1, 32, 32, 1.0, 1 / 16))
    worst = 0.0
    for _ in range(ctx.n_samples(50, 4)):
        h = random_field(g, rng, d=2)
        hn = tent.carleson_norm(h)
        for T in (g.T_max / 4, g.T_max / 2, g.T_max):
            worst = max(worst, tent.carleson_norm(stochastic.s_operator(T, h)) / (np.sqrt(T) * hn))
    return worst, 1.0, worst <= 1 + 1e-12, None, {}


def event_process(g: GridSpec, K: int, rng: np.random.Generator) -> stochastic.SimpleAdaptedProcess:
    """Simple adapted process whose events look at the sign of earlier path values."""
    breaks = (0, g.M // 4, g.M // 2, g.M)
    events = []
    for j in range(3):
        evs = []
        for _ in range(2):
            k = int(rng.integers(K))
            sign = float(rng.choice([-1.0, 1.0]))
            pred = (lambda w, k=k, s=sign: s * w[-1, k] >= 0) if j else (lambda w: True)
            prof = spde.band_limited(g, rng, 3)
            evs.append(stochastic.Event(pred, prof, rng.standard_normal(K)))
        events.append(tuple(evs))
    return stochastic.SimpleAdaptedProcess(g, K, breaks, tuple(events))


@criterion(12, "ito_isometry", "second moment of the stochastic integral equals the integrand mass")
def c12(ctx: Context):
    g = ctx.pick(GridSpec(1, 256, 256, 1.0, 1.0), GridSpec(1, 32, 32, 1.0, 1.0))
    K = 8
    proc = event_process(g, K, ctx.rng(12))
    n = ctx.n_samples(1000, 400)
    lhs, rhs = [], []
    for i in range(n):
        W = stochastic.sample_bm(g, K, stochastic.sample_seed(ctx.seed + 12, i))
        gi = proc.realize(W)
        I = stochastic.ito_integral(gi, W)
        lhs.append(stochastic.l2_squared(I.slice(g.M)))
        rhs.append(stochastic.l2_squared(gi))
    diff = stochastic.EnsembleStat.of("ito_gap", np.array(lhs) - np.array(rhs), ctx.seed)
    scale = np.mean(rhs)
    rel, se = abs(diff.mean) / scale, diff.stderr / scale
    return rel, 3 * se, rel <= 3 * se, se, {"mean_mass": scale}


def _v1_ratio(g: GridSpec, K: int, p: float, n: int, seed: int) -> float:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(13,)))
    gfield = early_mode_field(g, rng, d=K, frac=0.5)
    num = []
    for i in range(n):
        W = stochastic.sample_bm(g, K, stochastic.sample_seed(seed + 13, i))
        num.append(tent.norm(stochastic.stoch_convolution_gradient(gfield, W), tent.tent(p)) ** p)
    return float(np.mean(num)) / tent.norm(gfield, tent.tent(p)) ** p


@criterion(13, "stochastic_max_regularity", "gradient of the stochastic convolution carries half the integrand mass")
def c13(ctx: Context):
    g = ctx.pick(GridSpec(1, 256, 256, 1.0, 0.1), GridSpec(1, 64, 64, 1.0, 0.1))
    K = 8
    gfield = early_mode_field(g, ctx.rng(13), d=K)
    centred = SpaceTimeField(g, gfield.values - gfield.values.mean(axis=1, keepdims=True))
    target = 0.5 * stochastic.l2_squared(centred)
    vals = []
    for i in range(ctx.n_samples(500, 50)):
        W = stochastic.sample_bm(g, K, stochastic.sample_seed(ctx.seed + 113, i))
        vals.append(stochastic.l2_squared(stochastic.stoch_convolution_gradient(gfield, W)))
    st = stochastic.EnsembleStat.of("grad_v1", vals, ctx.seed)
    gap = abs(st.mean - target)
    ok = gap <= 3 * st.stderr
    detail = {"mean": st.mean, "target": target}
    base = ctx.pick(GridSpec(1, 64, 64, 1.0, 0.1), GridSpec(1, 32, 32, 1.0, 0.1))
    n_p = ctx.pick(100, 40)
    for p in (1.5, 3.0):
        r0 = _v1_ratio(base, 4, p, n_p, ctx.seed)
        r1 = _v1_ratio(base.refine(), 4, p, n_p, ctx.seed)
        change = max(r0 / r1, r1 / r0)
        detail[f"p={p}"] = {"coarse": r0, "fine": r1, "change": change}
        ok = ok and np.isfinite(change) and change <= 2.0
    return gap / target, 3 * st.stderr / target, ok, st.stderr / target, detail


def manufactured_residual(N: int, seed: int) -> float:
    g = GridSpec(1, N, N, 1.0, 0.1)
    a = parabolic.sample_coefficients(g, "smooth", 0.5, 2.0, seed=seed)
    x = g.coordinates()[0]
    t = g.times[:, None]
    k = 2 * np.pi
    u_x = np.exp(-t) * k * np.cos(k * x)
    G = np.exp(-t) * np.cos(k * x) / k  # d/dx G = d/dt u
    F = SpaceTimeField(g, (G - a.values[..., 0, 0] * u_x)[..., None])
    psi = SpaceField(g, np.sin(k * x))
    W = stochastic.sample_bm(g, 1, seed)
    bundle = spde.assemble_solution(a, psi, F, None, W)
    return spde.pw_residual(bundle, spde.bump_test_function(g, (0.5,), 0.3, omega=3.0))


def stochastic_residual(N: int, samples: int, seed: int) -> stochastic.EnsembleStat:
    g = GridSpec(1, N, N, 1.0, 0.1)
    a = parabolic.sample_coefficients(g, "smooth", 0.5, 2.0, seed=seed)
    H = parabolic.factorize(a)
    phi = spde.bump_test_function(g, (0.5,), 0.3, omega=3.0)
    vals = []
    for i in range(samples):
        d = spde.draw_data(g, 4, stochastic.sample_seed(seed + 14, i))
        vals.append(spde.pw_residual(spde.assemble_solution(H, d.psi, d.F, d.g, d.W), phi))
    return stochastic.EnsembleStat.of(f"pw_residual_N={N}", vals, seed)


@criterion(14, "pw_residual", "weak-form identity residual vanishes at first order")
def c14(ctx: Context):
    Ns = ctx.pick((64, 128, 256), (32, 64, 128))
    det = [manufactured_residual(N, ctx.seed) for N in Ns]
    rates = [float(np.log2(det[i] / det[i + 1])) for i in range(len(Ns) - 1)]
    n = ctx.n_samples(100, 20)
    sto = [stochastic_residual(N, n, ctx.seed) for N in Ns]
    drops = [sto[i].mean / sto[i + 1].mean for i in range(len(Ns) - 1)]
    ok = min(rates) >= 0.8 and min(drops) >= 1.7
    return min(rates), 0.8, ok, None, {"det_residuals": det, "rates": rates,
                                        "stoch_means": [s.mean for s in sto], "drops": drops}


@criterion(15, "solution_estimate", "solution-to-data ratio is finite and uniform over the horizon menu")
def c15(ctx: Context):
    g = ctx.pick(GridSpec(1, 64, 64, 1.0, 0.1), GridSpec(1, 32, 32, 1.0, 0.1))
    a = parabolic.sample_coefficients(g, "checkerboard", 0.5, 2.0, cellsize=g.L / 8, seed=ctx.seed)
    H = parabolic.factorize(a)
    n = ctx.n_samples(40, 6)
    spreads, detail = [], {}
    for p in (1.5, 2.0, 3.0):
        rep = spde.maxreg_ratio(H, p, n, ctx.seed + 15, K=4)
        spreads.append(rep.spread)
        detail[f"p={p}"] = {"ratios": rep.ratios, "stderr": rep.stderr}
    worst = max(spreads)
    return worst, 2.0, np.isfinite(worst) and worst <= 2.0, None, detail


def holder_corpus(g: GridSpec, count: int, seed: int) -> list[spde.TestFunction]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(16,)))
    out = []
    for _ in range(count):
        r = float(rng.uniform(0.1, 0.3))
        c = tuple(rng.uniform(r + 0.05, g.L - r - 0.05, g.n))
        out.append(spde.bump_test_function(g, c, r, omega=float(rng.uniform(1, 20)),
                                           phase=float(rng.uniform(0, 2 * np.pi))))
    return out


@criterion(16, "phi_holder_half", "test-function class embeds into half-Hölder continuity in time")
def c16(ctx: Context):
    Ns = ctx.pick((64, 128, 256), (32, 64))
    count = ctx.n_samples(20, 3)
    worst, per_grid = 0.0, {}
    for N in Ns:
        g = GridSpec(1, N, N, 1.0, 0.25)
        ratios = [spde.holder_half_check(phi, p).ratio
                  for phi in holder_corpus(g, count, ctx.seed) for p in (1.5, 2.0, 3.0)]
        per_grid[N] = max(ratios)
        worst = max(worst, per_grid[N])
    vals = list(per_grid.values())
    stable = max(vals) / min(vals) <= 2.0
    return worst, HOLDER_C, worst <= HOLDER_C and stable, None, {"per_grid": per_grid}
