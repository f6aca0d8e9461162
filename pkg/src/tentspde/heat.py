"""Spectral heat semigroup on the torus and the quadratic maximal-regularity operators."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import GridSpec, SpaceField, SpaceTimeField, DimensionMismatch


@dataclass(frozen=True, eq=False)
class HeatMultiplier:
    """Symbol tables in ``rfftn`` layout.

    ``xi`` holds the angular frequencies per axis, ``xi2`` their squared norm
    and ``grad`` the (imaginary) gradient factors with Nyquist modes zeroed so
    the spectral derivative of a real field stays real.
    """

    grid: GridSpec
    xi: tuple[np.ndarray, ...]
    xi2: np.ndarray
    grad: np.ndarray  # shape (n,) + spectral shape, purely imaginary

    def symbol(self, t: float) -> np.ndarray:
        return np.exp(-self.xi2 * t)

    def forward(self, values: np.ndarray) -> np.ndarray:
        """rfftn over the n trailing spatial axes of ``values`` (batch axes lead)."""
        axes = tuple(range(values.ndim - self.grid.n, values.ndim))
        return np.fft.rfftn(values, axes=axes)

    def inverse(self, spec: np.ndarray) -> np.ndarray:
        axes = tuple(range(spec.ndim - self.grid.n, spec.ndim))
        return np.fft.irfftn(spec, s=self.grid.spatial_shape, axes=axes)


@lru_cache(maxsize=32)
def multiplier(grid: GridSpec) -> HeatMultiplier:
    n, N = grid.n, grid.N
    full = 2 * np.pi * np.fft.fftfreq(N, d=grid.dx)
    half = 2 * np.pi * np.fft.rfftfreq(N, d=grid.dx)
    axes = [full] * (n - 1) + [half]
    xi = np.meshgrid(*axes, indexing="ij")
    xi2 = sum(k**2 for k in xi)
    nyq = np.pi / grid.dx
    grad = np.stack([1j * np.where(np.isclose(np.abs(k), nyq), 0.0, k) for k in xi])
    for arr in (*xi, xi2, grad):
        arr.setflags(write=False)
    return HeatMultiplier(grid, tuple(xi), xi2, grad)


def _check_time(t: float) -> None:
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")


def heat_apply(t: float, psi: SpaceField) -> SpaceField:
    """e^{tΔ} applied componentwise."""
    _check_time(t)
    if t == 0:
        return psi
    H = multiplier(psi.grid)
    comps = np.moveaxis(psi.values, -1, 0)
    out = H.inverse(H.forward(comps) * H.symbol(t))
    return SpaceField(psi.grid, np.moveaxis(out, 0, -1))


def heat_gradient_apply(t: float, psi: SpaceField) -> SpaceField:
    """Spectral gradient of e^{tΔ}ψ for scalar ψ; result has n components."""
    _check_time(t)
    H = multiplier(psi.grid)
    spec = H.forward(psi.scalar()) * H.symbol(t)
    out = H.inverse(H.grad * spec)
    return SpaceField(psi.grid, np.moveaxis(out, 0, -1))


@dataclass(frozen=True)
class HalfIdentity:
    time_sum: float
    tail: float
    target: float

    @property
    def error(self) -> float:
        return abs(self.time_sum + self.tail - self.target)


def half_identity(psi: SpaceField) -> HalfIdentity:
    """Terms of sum_m dt ||∇e^{t_mΔ}ψ||² + tail against ½||ψ - mean||².

    The tail past T_max is integrated exactly per Fourier mode.
    """
    g = psi.grid
    H = multiplier(g)
    time_sum = 0.0
    for t in g.times:
        grad = heat_gradient_apply(t, psi).values
        time_sum += g.dt * float(np.sum(grad**2) * g.cell_volume)
    # Parseval weights for the rfft half spectrum
    spec = H.forward(psi.scalar())
    weight = _rfft_weights(g)
    g2 = np.sum(np.abs(H.grad) ** 2, axis=0)
    energy = weight * np.abs(spec) ** 2 * g.cell_volume / g.N**g.n
    tail = float(np.sum(energy * np.where(g2 > 0, 0.5 * np.exp(-2 * H.xi2 * g.T_max), 0.0)))
    centred = psi.scalar() - psi.scalar().mean()
    target = 0.5 * float(np.sum(centred**2) * g.cell_volume)
    return HalfIdentity(time_sum, tail, target)


@lru_cache(maxsize=32)
def _rfft_weights(grid: GridSpec) -> np.ndarray:
    # each interior rfft bin on the last axis stands for two conjugate modes
    N = grid.N
    w = np.full(N // 2 + 1, 2.0)
    w[0] = w[-1] = 1.0
    shape = (1,) * (grid.n - 1) + (N // 2 + 1,)
    return w.reshape(shape)


def _decay_table(grid: GridSpec) -> np.ndarray:
    H = multiplier(grid)
    lags = grid.dt * np.arange(grid.M + 1)
    return np.exp(-lags.reshape((-1,) + (1,) * grid.n) * H.xi2)


def _running_square(f: SpaceTimeField, with_gradient: bool, last: int) -> np.ndarray:
    """sum_{l<=m} dt |K e^{(t_m - t_{l-1})Δ} f_l|² for m = 1..last, K = ∇ or identity."""
    g = f.grid
    H = multiplier(g)
    decay = _decay_table(g)
    # (M, d) + spectral
    spec = H.forward(np.moveaxis(f.values, -1, 1))
    out = np.zeros((g.M,) + g.spatial_shape)
    for m in range(1, last + 1):
        lagged = spec[:m] * decay[m - np.arange(m)][:, None]
        if with_gradient:
            lagged = lagged[:, :, None] * H.grad
        vals = H.inverse(lagged)
        out[m - 1] = g.dt * np.sum(vals**2, axis=tuple(range(vals.ndim - g.n)))
    return out


def q_operator(f: SpaceTimeField) -> SpaceTimeField:
    """Quadratic maximal-regularity operator: running square function of the heat gradient history.

    ``Q(f)(t_m, x)² = sum_{l<=m} dt |∇e^{(t_m - t_{l-1})Δ} f_l(x)|²``; every
    component of an H-valued f contributes.
    """
    return SpaceTimeField(f.grid, np.sqrt(_running_square(f, True, f.grid.M)))


def q_trunc(T: float, f: SpaceTimeField) -> SpaceTimeField:
    """Truncated companion without the gradient, normalised by 1/T on t_m <= T."""
    g = f.grid
    if not 0 < T <= g.T_max * (1 + 1e-12):
        raise ValueError(f"truncation time must lie in (0, {g.T_max}], got {T}")
    last = g.time_index(T)
    sq = _running_square(f, False, last) / T
    return SpaceTimeField(g, np.sqrt(sq))


def spectral_gradient_field(f: SpaceTimeField) -> SpaceTimeField:
    """Spectral gradient of a scalar space-time field, slice by slice."""
    if f.d != 1:
        raise DimensionMismatch("spectral gradient expects a scalar field")
    H = multiplier(f.grid)
    spec = H.forward(f.values[..., 0])
    out = H.inverse(spec[:, None] * H.grad)
    return SpaceTimeField(f.grid, np.moveaxis(out, 1, -1))
