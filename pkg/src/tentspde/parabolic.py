"""Backward-Euler solver for divergence-form parabolic equations with rough coefficients.

The discrete operator is ``A = sum_ij D_i^T diag(a_ij) D_j`` with ``D_j`` the
forward difference along axis j, so ``-A`` is the discrete ``div(a ∇ .)``
and ``<A u, u> >= lam ||∇u||^2`` holds node by node.  A step solves
``(I + dt A_m) u^m = u^{m-1} - dt sum_j D_j^T F_j^m``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    Ball,
    DimensionMismatch,
    GridSpec,
    SpaceField,
    SpaceTimeField,
    divergence_array,
    gradient_array,
    torus_distance_from,
)
from .heat import heat_apply

RESIDUAL_TOL = 1e-10


class SolverDivergenceError(RuntimeError):
    def __init__(self, step: int, residual: float, iterations: int):
        super().__init__(
            f"linear solve at step {step} stalled: relative residual {residual:.3e} "
            f"after {iterations} iterations"
        )
        self.step = step
        self.residual = residual
        self.iterations = iterations


# ------------------------------------------------------------- coefficients


@dataclass(frozen=True, eq=False)
class CoefficientField:
    grid: GridSpec
    values: np.ndarray  # (M,) + spatial + (n, n)
    lam: float
    Lam: float
    symmetric: bool = True

    def __post_init__(self):
        g = self.grid
        vals = np.array(self.values, dtype=np.float64)
        expected = (g.M,) + g.spatial_shape + (g.n, g.n)
        if vals.shape != expected:
            raise DimensionMismatch(f"coefficient shape {vals.shape}, expected {expected}")
        if not 0 < self.lam <= self.Lam:
            raise ValueError(f"need 0 < lam <= Lam, got lam={self.lam}, Lam={self.Lam}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def slice(self, m: int) -> np.ndarray:
        """Coefficient matrices at t_m (1-based)."""
        return self.values[m - 1]

    def ellipticity_margin(self) -> float:
        """Smallest eigenvalue of the symmetric part over all nodes and times."""
        sym = 0.5 * (self.values + np.swapaxes(self.values, -1, -2))
        return float(np.linalg.eigvalsh(sym).min())

    def check(self) -> None:
        tol = 1e-12 * self.Lam
        if self.ellipticity_margin() < self.lam - tol:
            raise ValueError("coefficient field violates the ellipticity bound")
        if np.abs(self.values).max() > self.Lam + tol:
            raise ValueError("coefficient field exceeds its sup bound")

    def to_field(self) -> SpaceTimeField:
        g = self.grid
        return SpaceTimeField(g, self.values.reshape((g.M,) + g.spatial_shape + (g.n * g.n,)))

    @classmethod
    def from_field(cls, f: SpaceTimeField, lam: float, Lam: float) -> "CoefficientField":
        g = f.grid
        vals = f.values.reshape((g.M,) + g.spatial_shape + (g.n, g.n))
        return cls(g, vals, lam, Lam, bool(np.allclose(vals, np.swapaxes(vals, -1, -2))))


def identity_coefficients(grid: GridSpec) -> CoefficientField:
    eye = np.broadcast_to(np.eye(grid.n), (grid.M,) + grid.spatial_shape + (grid.n, grid.n))
    return CoefficientField(grid, eye, 1.0, 1.0, True)


def sample_coefficients(
    grid: GridSpec,
    law: str,
    lam: float = 0.5,
    Lam: float = 2.0,
    cellsize: float | None = None,
    seed: int = 0,
    skew: float = 0.0,
) -> CoefficientField:
    """Random coefficient field.

    ``checkerboard``: i.i.d. diagonal entries uniform in ``[lam, Lam]``,
    constant on cells of spatial side ``cellsize`` and temporal side
    ``cellsize**2``.  ``smooth``: diagonal entries oscillating smoothly
    between ``lam`` and ``Lam``.  ``skew`` adds an antisymmetric part with
    entries uniform in ``[-skew, skew]``, which leaves ``ξ·aξ`` unchanged.
    """
    if law == "identity":
        return identity_coefficients(grid)
    if not 0 < lam <= Lam:
        raise ValueError(f"need 0 < lam <= Lam, got lam={lam}, Lam={Lam}")
    if skew > Lam:
        raise ValueError("skew part must not exceed Lam")
    rng = np.random.default_rng(seed)
    n, M = grid.n, grid.M
    shape = (M,) + grid.spatial_shape
    if law == "checkerboard":
        cellsize = cellsize if cellsize is not None else grid.L / 8
        sx = max(1, int(round(cellsize / grid.dx)))
        st = max(1, int(round(cellsize**2 / grid.dt)))
        cells = (-(-M // st),) + (-(-grid.N // sx),) * n
        diag = rng.uniform(lam, Lam, size=cells + (n,))
        for axis, rep in enumerate([st] + [sx] * n):
            diag = np.repeat(diag, rep, axis=axis)
        diag = diag[tuple(slice(0, s) for s in shape)]
        skew_cells = rng.uniform(-skew, skew, size=cells) if skew else None
        if skew_cells is not None:
            for axis, rep in enumerate([st] + [sx] * n):
                skew_cells = np.repeat(skew_cells, rep, axis=axis)
            skew_cells = skew_cells[tuple(slice(0, s) for s in shape)]
    elif law == "smooth":
        coords = grid.coordinates()
        t = grid.times.reshape((-1,) + (1,) * n)
        diag = np.empty(shape + (n,))
        for i in range(n):
            k = rng.integers(1, 4, size=n)
            omega = rng.uniform(0.5, 2.0) * 2 * np.pi / grid.T_max
            phase = rng.uniform(0, 2 * np.pi)
            arg = sum(2 * np.pi * k[j] * coords[j] / grid.L for j in range(n)) + omega * t + phase
            diag[..., i] = lam + (Lam - lam) * 0.5 * (1 + np.sin(arg))
        skew_cells = skew * np.sin(2 * np.pi * coords[0] / grid.L + t) if skew else None
    else:
        raise ValueError(f"unknown coefficient law {law!r}")
    vals = np.zeros(shape + (n, n))
    for i in range(n):
        vals[..., i, i] = diag[..., i]
    if skew_cells is not None and n == 2:
        vals[..., 0, 1] = skew_cells
        vals[..., 1, 0] = -skew_cells
    return CoefficientField(grid, vals, lam, Lam, symmetric=skew_cells is None or n == 1)


# ---------------------------------------------------------- sparse operators


@lru_cache(maxsize=16)
def difference_matrices(grid: GridSpec) -> tuple[sp.csr_matrix, ...]:
    """Forward-difference matrices ``D_j`` acting on row-major flattened fields."""
    N = grid.N
    one = sp.eye(N, format="csr")
    shift = sp.csr_matrix((np.ones(N), (np.arange(N), (np.arange(N) + 1) % N)), shape=(N, N))
    D1 = (shift - one) / grid.dx
    if grid.n == 1:
        return (D1.tocsr(),)
    return (sp.kron(D1, one, format="csr"), sp.kron(one, D1, format="csr"))


def stiffness(grid: GridSpec, a_slice: np.ndarray) -> sp.csr_matrix:
    D = difference_matrices(grid)
    A = None
    for i in range(grid.n):
        for j in range(grid.n):
            aij = a_slice[..., i, j].ravel()
            if not np.any(aij):
                continue
            term = D[i].T @ sp.diags(aij) @ D[j]
            A = term if A is None else A + term
    return A.tocsc()


@dataclass(eq=False)
class PropagatorHandle:
    """Factorized one-step operators ``I + dt A_m``, cached per distinct coefficient slice."""

    coeff: CoefficientField
    _keys: list = field(default_factory=list, repr=False)
    _factors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        g = self.coeff.grid
        size = g.N**g.n
        eye = sp.eye(size, format="csc")
        for m in range(1, g.M + 1):
            a_m = self.coeff.slice(m)
            key = hashlib.sha1(np.ascontiguousarray(a_m).tobytes()).hexdigest()
            if key not in self._factors:
                K = (eye + g.dt * stiffness(g, a_m)).tocsc()
                self._factors[key] = (K, spla.splu(K))
            self._keys.append(key)

    @property
    def grid(self) -> GridSpec:
        return self.coeff.grid

    def _solve(self, m: int, rhs: np.ndarray, transpose: bool) -> np.ndarray:
        K, lu = self._factors[self._keys[m - 1]]
        b = rhs.ravel()
        x = lu.solve(b, trans="T" if transpose else "N")
        Kop = K.T if transpose else K
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(rhs)
        res = np.linalg.norm(b - Kop @ x) / bnorm
        if res > RESIDUAL_TOL:
            x, res, iters = self._refine(Kop, lu, b, x, transpose)
            if res > RESIDUAL_TOL:
                raise SolverDivergenceError(m, res, iters)
        return x.reshape(rhs.shape)

    def _refine(self, Kop, lu, b, x0, transpose):
        g = self.grid
        maxiter = 10 * g.N**g.n
        precond = spla.LinearOperator(Kop.shape, lambda v: lu.solve(v, trans="T" if transpose else "N"))
        count = [0]

        def tick(_):
            count[0] += 1

        x, _ = spla.gmres(Kop, b, x0=x0, M=precond, rtol=RESIDUAL_TOL * 0.1, atol=0.0,
                          maxiter=maxiter, callback=tick, callback_type="pr_norm")
        res = np.linalg.norm(b - Kop @ x) / np.linalg.norm(b)
        return x, res, count[0]

    def step(self, m: int, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(I + dt A_m) x = rhs``."""
        return self._solve(m, rhs, False)

    def step_adjoint(self, m: int, rhs: np.ndarray) -> np.ndarray:
        return self._solve(m, rhs, True)


def factorize(coeff: CoefficientField) -> PropagatorHandle:
    return PropagatorHandle(coeff)


def _as_handle(a) -> PropagatorHandle:
    return a if isinstance(a, PropagatorHandle) else PropagatorHandle(a)


# ------------------------------------------------------------------- solves


def solve_cauchy(a, psi: SpaceField, F: SpaceTimeField | None = None) -> SpaceTimeField:
    """Backward-Euler solution ``u^1..u^M`` of ``∂_t u = div(a∇u) + div F``, ``u^0 = ψ``."""
    H = _as_handle(a)
    g = H.grid
    if psi.grid != g:
        raise DimensionMismatch("initial datum lives on a different grid")
    if F is not None and (F.grid != g or F.d != g.n):
        raise DimensionMismatch(f"forcing must be an n={g.n} vector field on the same grid")
    u = psi.scalar().copy()
    out = np.empty((g.M,) + g.spatial_shape)
    for m in range(1, g.M + 1):
        rhs = u
        if F is not None:
            rhs = u + g.dt * divergence_array(F.values[m - 1], g.dx, g.n)
        u = H.step(m, rhs)
        out[m - 1] = u
    return SpaceTimeField(g, out)


def discrete_gradient_field(u: SpaceTimeField) -> SpaceTimeField:
    g = u.grid
    return SpaceTimeField(g, gradient_array(u.values[..., 0], g.dx, g.n))


def lions(a, F: SpaceTimeField) -> SpaceTimeField:
    """``F -> ∇u`` for zero initial data and forcing ``div F``."""
    H = _as_handle(a)
    u = solve_cauchy(H, SpaceField.zeros(H.grid), F)
    return discrete_gradient_field(u)


def lions_trunc(T: float, a, F: SpaceTimeField) -> SpaceTimeField:
    """``1_{t_m <= T} T^{-1/2} u(t_m)`` for zero initial data and forcing ``div F``."""
    H = _as_handle(a)
    g = H.grid
    if not 0 < T <= g.T_max * (1 + 1e-12):
        raise ValueError(f"truncation time must lie in (0, {g.T_max}], got {T}")
    u = solve_cauchy(H, SpaceField.zeros(g), F).values.copy()
    u[g.time_index(T):] = 0.0
    return SpaceTimeField(g, u / np.sqrt(T))


def propagator_apply(handle: PropagatorHandle, m: int, l: int, f: SpaceField) -> SpaceField:
    """Γ(t_m, t_l) f for grid indices ``0 <= l <= m``."""
    if l > m:
        raise ValueError(f"propagator needs t_l <= t_m, got l={l}, m={m}")
    u = f.scalar()
    for k in range(l + 1, m + 1):
        u = handle.step(k, u)
    return SpaceField(f.grid, u)


def propagator_adjoint_apply(handle: PropagatorHandle, m: int, l: int, h: SpaceField) -> SpaceField:
    """Adjoint of Γ(t_m, t_l): transposed steps in reverse order."""
    if l > m:
        raise ValueError(f"propagator needs t_l <= t_m, got l={l}, m={m}")
    v = h.scalar()
    for k in range(m, l, -1):
        v = handle.step_adjoint(k, v)
    return SpaceField(h.grid, v)


# -------------------------------------------------------------- diagnostics


def energy_identity_defect(a, psi: SpaceField, F: SpaceTimeField | None, u: SpaceTimeField) -> np.ndarray:
    """Per-step defect of the backward-Euler energy identity.

    ``½|u^m|² - ½|u^{m-1}|² + dt<a∇u^m,∇u^m> + ½|u^m - u^{m-1}|² + dt<F^m,∇u^m>``.
    """
    coeff = a.coeff if isinstance(a, PropagatorHandle) else a
    g = u.grid
    vol = g.cell_volume
    prev = psi.scalar()
    out = np.empty(g.M)
    for m in range(1, g.M + 1):
        cur = u.values[m - 1, ..., 0]
        grad = gradient_array(cur, g.dx, g.n)
        agrad = np.einsum("...ij,...j->...i", coeff.slice(m), grad)
        val = 0.5 * np.sum(cur**2) - 0.5 * np.sum(prev**2) + 0.5 * np.sum((cur - prev) ** 2)
        val += g.dt * np.sum(agrad * grad)
        if F is not None:
            val += g.dt * np.sum(F.values[m - 1] * grad)
        out[m - 1] = val * vol
        prev = cur
    return out


def energy_profile(u: SpaceTimeField, psi: SpaceField, lam: float) -> tuple[np.ndarray, float]:
    """``(|u^m|² + 2 lam sum_{j<=m} dt |∇u^j|²)_m`` and ``|ψ|²``."""
    g = u.grid
    vol = g.cell_volume
    mass = np.sum(u.values[..., 0] ** 2, axis=tuple(range(1, g.n + 1))) * vol
    grad = gradient_array(u.values[..., 0], g.dx, g.n)
    dissip = np.cumsum(np.sum(grad**2, axis=tuple(range(1, g.n + 2))) * vol * g.dt)
    return mass + 2 * lam * dissip, float(np.sum(psi.values**2) * vol)


def set_distance(E: Ball, Fset: Ball) -> float:
    """Torus distance between the node sets of two balls."""
    dmin = np.inf
    emask = E.mask()
    for c in Fset.members:
        dmin = min(dmin, float(torus_distance_from(E.grid, c)[emask].min()))
    return dmin


@dataclass(frozen=True)
class OffDiagReport:
    x: np.ndarray  # d(E,F)^2 / (t - s)
    y: np.ndarray  # log of the restricted propagator ratio
    c_hat: float
    rho: float
    monotone: bool
    contraction: float  # max ||Γ f|| / ||f||


def fit_decay(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of y on x returned as ``(-slope, correlation)``."""
    slope = np.polyfit(x, y, 1)[0]
    rho = float(np.corrcoef(x, y)[0, 1])
    return float(-slope), rho


def _offdiag_points(apply, E, Fset, f, times):
    g = E.grid
    d2 = set_distance(E, Fset) ** 2
    emask = E.mask()
    fnorm = np.sqrt(np.sum(f.scalar() ** 2))
    xs, ys, contr = [], [], 0.0
    for m, l in times:
        out = apply(m, l, f).scalar()
        contr = max(contr, np.sqrt(np.sum(out**2)) / fnorm)
        ratio = np.sqrt(np.sum(out[emask] ** 2)) / fnorm
        xs.append(d2 / ((m - l) * g.dt))
        ys.append(np.log(ratio))
    return np.array(xs), np.array(ys), contr


def _check_offdiag_geometry(E: Ball, Fset: Ball, f: SpaceField, times) -> None:
    if set_distance(E, Fset) <= 0:
        raise ValueError("off-diagonal check needs disjoint sets at positive distance")
    if np.any(f.scalar()[~Fset.mask()] != 0):
        raise ValueError("test function must be supported in the source ball")
    if any(l >= m for m, l in times):
        raise ValueError("each time pair needs t_l < t_m")


def _report(xs, ys, contr) -> OffDiagReport:
    c_hat, rho = fit_decay(xs, ys)
    order = np.argsort(xs)
    monotone = bool(np.all(np.diff(ys[order]) <= 1e-12 * np.abs(ys[order][1:]).max()))
    return OffDiagReport(xs, ys, c_hat, rho, monotone, contr)


def verify_offdiag(handle: PropagatorHandle, E: Ball, Fset: Ball, f: SpaceField, times) -> OffDiagReport:
    """Decay of ``|1_E Γ(t_m, t_l) 1_F f| / |f|`` against ``d(E,F)² / (t_m - t_l)``.

    ``times`` is a sequence of index pairs ``(m, l)`` with ``l < m``.
    """
    _check_offdiag_geometry(E, Fset, f, times)
    return _report(*_offdiag_points(lambda m, l, v: propagator_apply(handle, m, l, v), E, Fset, f, times))


def heat_offdiag(E: Ball, Fset: Ball, f: SpaceField, times) -> OffDiagReport:
    """Same fit with the exact spectral semigroup in place of Γ."""
    _check_offdiag_geometry(E, Fset, f, times)
    g = E.grid
    return _report(*_offdiag_points(lambda m, l, v: heat_apply((m - l) * g.dt, v), E, Fset, f, times))


def combine_offdiag(reports: list[OffDiagReport]) -> OffDiagReport:
    xs = np.concatenate([r.x for r in reports])
    ys = np.concatenate([r.y for r in reports])
    return _report(xs, ys, max(r.contraction for r in reports))


@dataclass(frozen=True)
class CaccioppoliReport:
    rho: float
    small_energy: float
    large_mass: float


def cylinder_mask(grid: GridSpec, center, radius: float, t_end: int) -> tuple[np.ndarray, np.ndarray]:
    """Time indices (0-based) and spatial mask of ``(t_end - radius², t_end] × B(center, radius)``."""
    from .grid import ball_members

    t_hi = t_end * grid.dt
    times = np.flatnonzero((grid.times > t_hi - radius**2 + 1e-12 * grid.dt) & (grid.times <= t_hi + 1e-12 * grid.dt))
    return times, ball_members(grid, center, radius).mask()


def verify_caccioppoli(
    u: SpaceTimeField, ball: Ball, r: float, alpha: float = 1.0, beta: float = 2.0, t_end: int | None = None
) -> CaccioppoliReport:
    """``ρ = ∫∫_small |∇u|² / (r^{-2} ∫∫_large |u|²)`` with cylinders of radii ``αr`` and ``βr`` ending at ``t_end``."""
    g = u.grid
    t_end = g.M if t_end is None else t_end
    if not 0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    if (beta * r) ** 2 > t_end * g.dt * (1 + 1e-12) or beta * r > g.L / 2:
        raise ValueError("dilated cylinder does not fit in the grid")
    ts, ms = cylinder_mask(g, ball.center, alpha * r, t_end)
    tl, ml = cylinder_mask(g, ball.center, beta * r, t_end)
    grad = gradient_array(u.values[ts, ..., 0], g.dx, g.n)
    small = float(np.sum(np.sum(grad**2, axis=-1)[:, ms]) * g.dt * g.cell_volume)
    large = float(np.sum(u.values[tl, ..., 0][:, ml] ** 2) * g.dt * g.cell_volume)
    if large == 0:
        return CaccioppoliReport(0.0, small, large)
    return CaccioppoliReport(small / (large / r**2), small, large)


def carleson_ratio(grad_u: SpaceTimeField, ball: Ball) -> float:
    """``r^{-n} ∫_0^{r²} ∫_B |∇u|²`` for the ball's radius r."""
    g = grad_u.grid
    r = ball.radius
    last = g.time_index(r * r)
    sq = np.sum(grad_u.values[:last] ** 2, axis=-1)
    return float(np.sum(sq[:, ball.mask()]) * g.dt * g.cell_volume / r**g.n)
