"""Truncated cylindrical Brownian motion, simple adapted processes and Itô-type sums.

Increment ``dW[l-1]`` is ``W(t_l) - W(t_{l-1})``.  An integrand slice ``l``
is the value of the process on ``(t_{l-1}, t_l]`` and may depend on the
path up to ``t_{l-1}`` only, so the Itô sum up to ``t_m`` is
``sum_{l<=m} g_l dW_l``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import DimensionMismatch, GridSpec, SpaceField, SpaceTimeField
from .heat import multiplier


def sample_seed(root: int, index: int) -> np.random.SeedSequence:
    """Independent stream for Monte-Carlo sample ``index`` under ``root``."""
    return np.random.SeedSequence(root, spawn_key=(index,))


@dataclass(frozen=True, eq=False)
class BrownianPaths:
    grid: GridSpec
    increments: np.ndarray  # (M, K)
    seed: object = None

    def __post_init__(self):
        inc = np.array(self.increments, dtype=np.float64)
        if inc.ndim != 2 or inc.shape[0] != self.grid.M:
            raise DimensionMismatch(f"increments must have shape (M, K), got {inc.shape}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def K(self) -> int:
        return self.increments.shape[1]

    @property
    def paths(self) -> np.ndarray:
        """``W(t_0..t_M)``, shape ``(M+1, K)`` with a zero first row."""
        return np.vstack([np.zeros((1, self.K)), np.cumsum(self.increments, axis=0)])

    def prefix(self, m: int) -> np.ndarray:
        """Read-only copy of ``W(t_0..t_m)``."""
        out = self.paths[: m + 1].copy()
        out.setflags(write=False)
        return out


def sample_bm(grid: GridSpec, K: int, seed) -> BrownianPaths:
    if K < 1:
        raise ValueError(f"need K >= 1, got {K}")
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((grid.M, K)) * np.sqrt(grid.dt)
    return BrownianPaths(grid, inc, seed)


# ------------------------------------------------------ simple processes


Predicate = Callable[[np.ndarray], bool]


@dataclass(frozen=True)
class Event:
    predicate: Predicate
    profile: np.ndarray  # spatial grid function
    coeff: np.ndarray  # (K,)


@dataclass(frozen=True, eq=False)
class SimpleAdaptedProcess:
    """Piecewise-constant process on grid-aligned intervals ``(b_j, b_{j+1}]``.

    ``breaks`` are grid indices ``0 = b_0 < b_1 < ...``; ``events[j]`` lists
    the events active on interval j.  Predicates see only ``W(t_0..t_{b_j})``.
    """

    grid: GridSpec
    K: int
    breaks: tuple[int, ...]
    events: tuple[tuple[Event, ...], ...] = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.breaks)
        if b[0] != 0 or np.any(np.diff(b) <= 0) or b[-1] > self.grid.M:
            raise ValueError(f"breakpoints must increase from 0 within the grid, got {self.breaks}")
        if len(self.events) != len(b) - 1:
            raise ValueError("need one event list per interval")
        for evs in self.events:
            for ev in evs:
                if np.shape(ev.coeff) != (self.K,) or np.shape(ev.profile) != self.grid.spatial_shape:
                    raise DimensionMismatch("event profile or coefficient has the wrong shape")

    def _active(self, W: BrownianPaths) -> list[list[bool]]:
        return [[bool(ev.predicate(W.prefix(self.breaks[j]))) for ev in evs] for j, evs in enumerate(self.events)]

    def realize(self, W: BrownianPaths) -> SpaceTimeField:
        if W.K != self.K:
            raise DimensionMismatch(f"process has K={self.K}, paths have K={W.K}")
        g = self.grid
        out = np.zeros((g.M,) + g.spatial_shape + (self.K,))
        for j, (evs, act) in enumerate(zip(self.events, self._active(W))):
            lo, hi = self.breaks[j], self.breaks[j + 1]
            for ev, on in zip(evs, act):
                if on:
                    out[lo:hi] += ev.profile[..., None] * ev.coeff
        return SpaceTimeField(g, out)

    def explicit_integral(self, W: BrownianPaths) -> np.ndarray:
        """Telescoping form ``sum 1_A φ <h, W(t ∧ b_{j+1}) - W(t ∧ b_j)>`` at t_1..t_M."""
        g = self.grid
        paths = W.paths
        m = np.arange(1, g.M + 1)
        out = np.zeros((g.M,) + g.spatial_shape)
        for j, (evs, act) in enumerate(zip(self.events, self._active(W))):
            lo, hi = self.breaks[j], self.breaks[j + 1]
            dW = paths[np.minimum(m, hi)] - paths[np.minimum(m, lo)]
            for ev, on in zip(evs, act):
                if on:
                    out += (dW @ ev.coeff).reshape((-1,) + (1,) * g.n) * ev.profile
        return out


# ------------------------------------------------------------ integrals


def _check_K(g: SpaceTimeField, W: BrownianPaths) -> None:
    if g.d != W.K:
        raise DimensionMismatch(f"integrand has {g.d} components, noise has K={W.K}")
    if g.grid != W.grid:
        raise DimensionMismatch("integrand and noise live on different grids")


def _noise_forcing(g: SpaceTimeField, W: BrownianPaths) -> np.ndarray:
    # sum_k g_k(l) dW_{l,k}, shape (M,) + spatial
    return np.einsum("m...k,mk->m...", g.values, W.increments)


def ito_integral(g: SpaceTimeField, W: BrownianPaths) -> SpaceTimeField:
    _check_K(g, W)
    return SpaceTimeField(g.grid, np.cumsum(_noise_forcing(g, W), axis=0))


def _convolution_spectrum(g: SpaceTimeField, W: BrownianPaths) -> np.ndarray:
    """Spectrum of ``V1^m = e^{dtΔ}(V1^{m-1} + sum_k g_k(m) dW_{m,k})``."""
    _check_K(g, W)
    H = multiplier(g.grid)
    forcing = H.forward(_noise_forcing(g, W))
    step = H.symbol(g.grid.dt)
    out = np.empty_like(forcing)
    acc = np.zeros_like(forcing[0])
    for m in range(g.grid.M):
        acc = step * (acc + forcing[m])
        out[m] = acc
    return out


def stoch_convolution(g: SpaceTimeField, W: BrownianPaths) -> SpaceTimeField:
    """``V1(t_m) = sum_{l<=m} e^{(t_m - t_{l-1})Δ} sum_k g_k(l) dW_{l,k}``."""
    H = multiplier(g.grid)
    return SpaceTimeField(g.grid, H.inverse(_convolution_spectrum(g, W)))


def stoch_convolution_gradient(g: SpaceTimeField, W: BrownianPaths) -> SpaceTimeField:
    H = multiplier(g.grid)
    spec = _convolution_spectrum(g, W)
    out = H.inverse(spec[:, None] * H.grad)
    return SpaceTimeField(g.grid, np.moveaxis(out, 1, -1))


def s_operator(T: float, h: SpaceTimeField) -> SpaceTimeField:
    """``1_{t_m <= T} (sum_{l<=m} dt |h_l|²)^{1/2}``."""
    gr = h.grid
    if not 0 < T <= gr.T_max * (1 + 1e-12):
        raise ValueError(f"truncation time must lie in (0, {gr.T_max}], got {T}")
    run = np.cumsum(h.squared_modulus(), axis=0) * gr.dt
    run[gr.time_index(T):] = 0.0
    return SpaceTimeField(gr, np.sqrt(run))


# ----------------------------------------------------------- statistics


@dataclass(frozen=True)
class EnsembleStat:
    estimator: str
    mean: float
    stderr: float
    count: int
    seed: int | None = None

    @classmethod
    def of(cls, name: str, values: Sequence[float], seed: int | None = None) -> "EnsembleStat":
        v = np.asarray(values, dtype=np.float64)
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else float("nan")
        return cls(name, float(v.mean()), se, len(v), seed)

    def to_json(self) -> str:
        return json.dumps(
            {"estimator": self.estimator, "mean": self.mean, "stderr": self.stderr,
             "count": self.count, "seed": self.seed},
            sort_keys=True,
        )


def l2_squared(f: SpaceTimeField | SpaceField) -> float:
    g = f.grid
    w = g.cell_volume * (g.dt if isinstance(f, SpaceTimeField) else 1.0)
    return float(np.sum(f.values**2) * w)
