"""Stochastic heat equations with rough coefficients: solution assembly and diagnostics.

``U = V0 + V1 + V2`` with ``V0 = e^{tΔ}ψ``, ``V1`` the stochastic convolution
and ``V2`` the backward-Euler solution with zero initial value and forcing
``div(F + (a - I)∇(V0 + V1))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import DimensionMismatch, GridSpec, SpaceField, SpaceTimeField, gradient_array
from .heat import multiplier, spectral_gradient_field
from .parabolic import CoefficientField, PropagatorHandle, _as_handle, solve_cauchy
from .stochastic import (
    BrownianPaths,
    EnsembleStat,
    SimpleAdaptedProcess,
    ito_integral,
    sample_bm,
    sample_seed,
    stoch_convolution,
    stoch_convolution_gradient,
)
from .tent import NormKind, lp_norm, norm, tent


@dataclass(frozen=True, eq=False)
class SolutionBundle:
    handle: PropagatorHandle
    psi: SpaceField
    F: SpaceTimeField
    g: SpaceTimeField
    W: BrownianPaths
    V0: SpaceTimeField
    V1: SpaceTimeField
    V2: SpaceTimeField
    grad_U: SpaceTimeField
    I_g: SpaceTimeField

    @property
    def grid(self) -> GridSpec:
        return self.V0.grid

    @property
    def U(self) -> SpaceTimeField:
        return self.V0 + self.V1 + self.V2

    def truncated_U(self, T: float) -> SpaceTimeField:
        gr = self.grid
        u = self.U.values.copy()
        u[gr.time_index(T):] = 0.0
        return SpaceTimeField(gr, u / np.sqrt(T))

    def norm_report(self, p: float, T: float | None = None) -> dict:
        T = self.grid.T_max if T is None else T
        kind = tent(p)
        return {
            "psi": lp_norm(self.psi, p),
            "F": norm(self.F, kind),
            "g": norm(self.g, kind),
            "grad_U": norm(self.grad_U, kind),
            "U_trunc": norm(self.truncated_U(T), kind),
        }


def assemble_solution(
    a: CoefficientField | PropagatorHandle,
    psi: SpaceField,
    F: SpaceTimeField | None,
    g: SpaceTimeField | SimpleAdaptedProcess | None,
    W: BrownianPaths,
) -> SolutionBundle:
    H = _as_handle(a)
    gr = H.grid
    if psi.grid != gr or W.grid != gr:
        raise DimensionMismatch("data, noise and coefficients must share a grid")
    F = SpaceTimeField.zeros(gr, gr.n) if F is None else F
    if isinstance(g, SimpleAdaptedProcess):
        g = g.realize(W)
    g = SpaceTimeField.zeros(gr, W.K) if g is None else g

    H0 = multiplier(gr)
    spec0 = H0.forward(psi.scalar())
    decay = np.exp(-gr.times.reshape((-1,) + (1,) * gr.n) * H0.xi2)
    V0 = SpaceTimeField(gr, H0.inverse(decay * spec0))
    V1 = stoch_convolution(g, W)
    grad_heat = spectral_gradient_field(V0).values + stoch_convolution_gradient(g, W).values

    coeff = H.coeff.values
    eye = np.eye(gr.n)
    forcing = F.values + np.einsum("m...ij,m...j->m...i", coeff - eye, grad_heat)
    V2 = solve_cauchy(H, SpaceField.zeros(gr), SpaceTimeField(gr, forcing))
    grad_U = grad_heat + gradient_array(V2.values[..., 0], gr.dx, gr.n)
    return SolutionBundle(
        H, psi, F, g, W, V0, V1, V2, SpaceTimeField(gr, grad_U), ito_integral(g, W)
    )


# ---------------------------------------------------------- test functions


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Samples of φ, ∂_tφ and ∇φ at ``t_0 = 0, t_1, ..., t_M``."""

    __test__ = False  # not a pytest class

    grid: GridSpec
    phi: np.ndarray  # (M+1,) + spatial
    dphi: np.ndarray  # (M+1,) + spatial
    grad: np.ndarray  # (M+1,) + spatial + (n,)

    def __post_init__(self):
        for arr in (self.phi, self.dphi, self.grad):
            if not np.all(np.isfinite(arr)):
                raise ValueError("test function samples must be finite")

    def as_fields(self) -> tuple[SpaceTimeField, SpaceTimeField, SpaceTimeField]:
        gr = self.grid
        return (SpaceTimeField(gr, self.phi[1:]), SpaceTimeField(gr, self.dphi[1:]),
                SpaceTimeField(gr, self.grad[1:]))


def _bump(rho2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``exp(-1/(1-ρ²))`` and its derivative in ρ², zero for ρ >= 1."""
    inside = rho2 < 1
    s = np.where(inside, 1 - rho2, 1.0)
    val = np.where(inside, np.exp(-1 / s), 0.0)
    dval = np.where(inside, -val / s**2, 0.0)
    return val, dval


def bump_test_function(
    grid: GridSpec,
    center: tuple[float, ...],
    radius: float,
    omega: float = 1.0,
    phase: float = 0.0,
) -> TestFunction:
    """``φ(t, x) = cos(ω t + phase) · bump(|x - c| / radius)``, sampled exactly.

    The bump must sit inside the window ``(radius, L - radius)`` on every axis.
    """
    if any(c - radius <= 0 or c + radius >= grid.L for c in center):
        raise ValueError("test function support crosses the torus seam")
    coords = grid.coordinates()
    rel = [x - c for x, c in zip(coords, center)]
    rho2 = sum(r**2 for r in rel) / radius**2
    b, db = _bump(rho2)
    t = np.concatenate([[0.0], grid.times]).reshape((-1,) + (1,) * grid.n)
    time = np.cos(omega * t + phase)
    dtime = -omega * np.sin(omega * t + phase)
    grad_b = np.stack([db * 2 * r / radius**2 for r in rel], axis=-1)
    return TestFunction(grid, time * b, dtime * b, time[..., None] * grad_b)


def zero_test_function(grid: GridSpec) -> TestFunction:
    shape = (grid.M + 1,) + grid.spatial_shape
    return TestFunction(grid, np.zeros(shape), np.zeros(shape), np.zeros(shape + (grid.n,)))


# ------------------------------------------------------------ (PW) residual


def pw_processes(bundle: SolutionBundle, phi: TestFunction) -> tuple[np.ndarray, np.ndarray]:
    """The two sides of the pathwise weak identity at ``t_1..t_M``."""
    gr = bundle.grid
    vol = gr.cell_volume
    sp_axes = tuple(range(1, gr.n + 1))
    U = bundle.U.values[..., 0]
    I = bundle.I_g.values[..., 0]
    lhs = np.sum((U - I) * phi.phi[1:], axis=sp_axes) * vol

    a = bundle.handle.coeff.values
    agrad = np.einsum("m...ij,m...j->m...i", a, bundle.grad_U.values)
    diffusion = np.sum(agrad * phi.grad[1:], axis=sp_axes + (gr.n + 1,)) * vol
    forcing = np.sum(bundle.F.values * phi.grad[1:], axis=sp_axes + (gr.n + 1,)) * vol
    U_prev = np.concatenate([bundle.psi.scalar()[None], U[:-1]])
    I_prev = np.concatenate([np.zeros((1,) + gr.spatial_shape), I[:-1]])
    transport = np.sum((U_prev - I_prev) * phi.dphi[:-1], axis=sp_axes) * vol
    start = float(np.sum(bundle.psi.scalar() * phi.phi[0]) * vol)
    rhs = start + gr.dt * np.cumsum(transport - diffusion - forcing)
    return lhs, rhs


def pw_residual(bundle: SolutionBundle, phi: TestFunction) -> float:
    lhs, rhs = pw_processes(bundle, phi)
    return float(np.abs(lhs - rhs).max())


# ------------------------------------------------------- Φ^p test functions


def _check_exponent(p: float) -> None:
    if not 1 < p < np.inf:
        raise ValueError(f"exponent must lie in (1, inf), got {p}")


def phi_norm(phi: TestFunction, p: float) -> float:
    """``|φ|_{E^p} + |∂_tφ|_{E^p} + |∇φ|_{E^p}``."""
    _check_exponent(p)
    kind = NormKind("E", p)
    return sum(norm(f, kind) for f in phi.as_fields())


@dataclass(frozen=True)
class HolderReport:
    ratio: float
    phi_norm: float
    worst_pair: tuple[int, int]


def holder_half_check(phi: TestFunction, p: float) -> HolderReport:
    """``max_{t > τ} |φ(t) - φ(τ)|_{L^p} / ((t - τ)^{1/2} |φ|_{Φ^p})`` over grid times incl. 0."""
    gr = phi.grid
    total = phi_norm(phi, p)
    if total == 0:
        return HolderReport(0.0, 0.0, (0, 0))
    samples = phi.phi.reshape(gr.M + 1, -1)
    best, pair = 0.0, (0, 0)
    for k in range(gr.M):
        diff = np.abs(samples[k + 1:] - samples[k])
        lp = (np.sum(diff**p, axis=1) * gr.cell_volume) ** (1 / p)
        ratio = lp / np.sqrt(gr.dt * np.arange(1, gr.M + 1 - k))
        j = int(np.argmax(ratio))
        if ratio[j] > best:
            best, pair = float(ratio[j]), (k + 1 + j, k)
    return HolderReport(best / total, total, pair)


# ------------------------------------------------------- ensemble estimates


def increment_ratio(f: SpaceTimeField, window: np.ndarray) -> float:
    """``max_m |f(t_{m+1}) - f(t_m)|_{L^1(window)} / dt``."""
    gr = f.grid
    inc = np.abs(np.diff(f.values[..., 0], axis=0))[:, window]
    return float(inc.sum(axis=1).max() * gr.cell_volume / gr.dt)


@dataclass(frozen=True)
class DataSample:
    psi: SpaceField
    F: SpaceTimeField
    g: SpaceTimeField
    W: BrownianPaths


def band_limited(grid: GridSpec, rng: np.random.Generator, kmax: int, batch: tuple = ()) -> np.ndarray:
    """Random real trigonometric polynomial with frequencies ``|k_j| <= kmax``, zero mean."""
    coords = grid.coordinates()
    out = np.zeros(batch + grid.spatial_shape)
    ks = np.stack(np.meshgrid(*([np.arange(-kmax, kmax + 1)] * grid.n), indexing="ij"), -1).reshape(-1, grid.n)
    for k in ks:
        if not np.any(k) or tuple(k) < tuple(-k):
            continue
        arg = 2 * np.pi * sum(kj * x for kj, x in zip(k, coords)) / grid.L
        scale = 1.0 / (1.0 + float(k @ k))
        a = rng.standard_normal(batch + (1,) * grid.n) * scale
        b = rng.standard_normal(batch + (1,) * grid.n) * scale
        out += a * np.cos(arg) + b * np.sin(arg)
    return out


def draw_data(grid: GridSpec, K: int, seed, psi_scale=1.0, F_scale=1.0, g_scale=1.0, kmax: int = 3) -> DataSample:
    """Smooth random data independent of the noise (hence adapted), plus the noise itself."""
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    data_seq, noise_seq = ss.spawn(2)
    rng = np.random.default_rng(data_seq)
    M = grid.M
    profile = lambda: np.cos(np.pi * rng.uniform(0.5, 2) * grid.times / grid.T_max + rng.uniform(0, 6.3))
    psi = SpaceField(grid, psi_scale * band_limited(grid, rng, kmax))
    F = np.stack([band_limited(grid, rng, kmax) for _ in range(grid.n)], -1)
    F = F_scale * profile().reshape((M,) + (1,) * (grid.n + 1)) * F
    g = np.stack([band_limited(grid, rng, kmax) for _ in range(K)], -1)
    g = g_scale * profile().reshape((M,) + (1,) * (grid.n + 1)) * g
    W = sample_bm(grid, K, noise_seq)
    return DataSample(psi, SpaceTimeField(grid, F), SpaceTimeField(grid, g), W)


@dataclass(frozen=True)
class MaxRegReport:
    p: float
    T_menu: tuple[float, ...]
    ratios: tuple[float, ...]
    stderr: tuple[float, ...]
    numerators: dict = field(default_factory=dict)
    denominator: EnsembleStat | None = None
    degenerate: bool = False

    @property
    def spread(self) -> float:
        r = np.asarray(self.ratios)
        return float(r.max() / r.min()) if r.size and r.min() > 0 else float("inf")


def maxreg_ratio(
    a: CoefficientField | PropagatorHandle,
    p: float,
    samples: int,
    seed: int,
    K: int = 8,
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0),
    T_menu: tuple[float, ...] | None = None,
    data: Callable[[GridSpec, int, object], DataSample] | None = None,
) -> MaxRegReport:
    """Monte-Carlo estimate of the solution-to-data ratio for each T in the menu."""
    _check_exponent(p)
    H = _as_handle(a)
    gr = H.grid
    T_menu = T_menu or (gr.T_max / 4, gr.T_max / 2, gr.T_max)
    data = data or (lambda grid, K, s: draw_data(grid, K, s, *scales))
    kind = tent(p)
    num = {T: [] for T in T_menu}
    den = []
    for i in range(samples):
        d = data(gr, K, sample_seed(seed, i))
        b = assemble_solution(H, d.psi, d.F, d.g, d.W)
        grad = norm(b.grad_U, kind) ** p
        for T in T_menu:
            num[T].append(norm(b.truncated_U(T), kind) ** p + grad)
        den.append(lp_norm(d.psi, p) ** p + norm(d.F, kind) ** p + norm(d.g, kind) ** p)
    dstat = EnsembleStat.of("data", den, seed)
    if dstat.mean == 0:
        return MaxRegReport(p, tuple(T_menu), (), (), degenerate=True)
    ratios, errs, nstats = [], [], {}
    for T in T_menu:
        ns = EnsembleStat.of(f"solution_T={T:g}", num[T], seed)
        nstats[T] = ns
        ratios.append(ns.mean / dstat.mean)
        # ratio of means: first-order error propagation
        rel = np.hypot(ns.stderr / ns.mean if ns.mean else 0.0, dstat.stderr / dstat.mean)
        errs.append(ratios[-1] * rel)
    return MaxRegReport(p, tuple(T_menu), tuple(ratios), tuple(errs), nstats, dstat)
