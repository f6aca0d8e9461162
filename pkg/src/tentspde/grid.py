"""Periodic space-time grid, discrete calculus, balls and field storage.

Space is the torus ``[0, L)^n`` sampled at ``N`` points per axis; time is
sampled at ``t_m = m * dt`` for ``m = 1..M``.  A stored time slice ``m`` is
read as the value of a left-continuous step function on ``(t_{m-1}, t_m]``,
so ``int_0^{t_m} h = sum_{l <= m} dt * h_l``.

Array layout: ``SpaceField.values`` has shape ``(N,)*n + (d,)`` and
``SpaceTimeField.values`` has shape ``(M,) + (N,)*n + (d,)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

MAGIC = b"TENTFLD\x00"
SPACE_MAGIC = b"TENTSPC\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sQQQQQdd")


class DimensionMismatch(ValueError):
    """Raised when field shapes or component counts do not line up."""


@dataclass(frozen=True)
class GridSpec:
    n: int
    N: int
    M: int
    L: float = 1.0
    T_max: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.n}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if self.M < 8:
            raise ValueError(f"M must be >= 8, got {self.M}")
        if not self.L > 0 or not self.T_max > 0:
            raise ValueError("L and T_max must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def dt(self) -> float:
        return self.T_max / self.M

    @property
    def cell_volume(self) -> float:
        return self.dx**self.n

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def times(self) -> np.ndarray:
        """Sample times ``t_1..t_M``."""
        return self.dt * np.arange(1, self.M + 1)

    @property
    def parabolic_resolved(self) -> bool:
        # advisory only
        return self.dt <= self.dx**2

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of node coordinates, ``indexing='ij'``."""
        axis = self.dx * np.arange(self.N)
        return tuple(np.meshgrid(*([axis] * self.n), indexing="ij"))

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.n, self.N * factor, self.M * factor, self.L, self.T_max)

    def time_index(self, t: float) -> int:
        """Largest m with t_m <= t (0 when t < t_1)."""
        return int(np.floor(t / self.dt + 1e-9))

    def fingerprint(self) -> str:
        key = f"{self.n}:{self.N}:{self.M}:{self.L!r}:{self.T_max!r}"
        return hashlib.sha1(key.encode()).hexdigest()[:12]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpaceField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim == self.grid.n:
            vals = _frozen(vals[..., None])
        if vals.shape[:-1] != self.grid.spatial_shape:
            raise DimensionMismatch(
                f"space field shape {vals.shape} does not fit grid {self.grid.spatial_shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("space field has non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def zeros(cls, grid: GridSpec, d: int = 1) -> "SpaceField":
        return cls(grid, np.zeros(grid.spatial_shape + (d,)))

    def scalar(self) -> np.ndarray:
        if self.d != 1:
            raise DimensionMismatch(f"expected a scalar field, got d={self.d}")
        return self.values[..., 0]

    def __add__(self, other: "SpaceField") -> "SpaceField":
        _check_same(self, other)
        return SpaceField(self.grid, self.values + other.values)

    def __sub__(self, other: "SpaceField") -> "SpaceField":
        _check_same(self, other)
        return SpaceField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "SpaceField":
        return SpaceField(self.grid, c * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpaceTimeField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        expected = (self.grid.M,) + self.grid.spatial_shape
        if vals.ndim == self.grid.n + 1:
            vals = _frozen(vals[..., None])
        if vals.shape[:-1] != expected:
            raise DimensionMismatch(
                f"space-time field shape {vals.shape} does not fit grid {expected}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("space-time field has non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def zeros(cls, grid: GridSpec, d: int = 1) -> "SpaceTimeField":
        return cls(grid, np.zeros((grid.M,) + grid.spatial_shape + (d,)))

    def slice(self, m: int) -> SpaceField:
        """Slice at time ``t_m`` (1-based, as the grid)."""
        return SpaceField(self.grid, self.values[m - 1])

    def squared_modulus(self) -> np.ndarray:
        """``|f(t_m, x)|^2`` summed over components, shape ``(M,) + spatial``."""
        return np.sum(self.values**2, axis=-1)

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        _check_same(self, other)
        return SpaceTimeField(self.grid, self.values + other.values)

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        _check_same(self, other)
        return SpaceTimeField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, c * self.values)

    __rmul__ = __mul__


def _check_same(f, h):
    if f.grid != h.grid or f.values.shape != h.values.shape:
        raise DimensionMismatch(
            f"fields do not match: {f.values.shape} on {f.grid} vs {h.values.shape} on {h.grid}"
        )


# ---------------------------------------------------------------- calculus


def gradient_array(u: np.ndarray, dx: float, n: int) -> np.ndarray:
    """Forward differences with wrap-around on the last n axes.

    ``u`` has shape ``batch + (N,)*n``; the result gains a last axis of size n.
    """
    lead = u.ndim - n
    parts = [(np.roll(u, -1, axis=lead + j) - u) / dx for j in range(n)]
    return np.stack(parts, axis=-1)


def divergence_array(G: np.ndarray, dx: float, n: int) -> np.ndarray:
    """Backward differences with wrap-around; the negative adjoint of ``gradient_array``."""
    if G.shape[-1] != n:
        raise DimensionMismatch(f"divergence needs {n} components, got {G.shape[-1]}")
    lead = G.ndim - 1 - n
    out = np.zeros(G.shape[:-1])
    for j in range(n):
        Gj = G[..., j]
        out += (Gj - np.roll(Gj, 1, axis=lead + j)) / dx
    return out


def discrete_gradient(u: SpaceField) -> SpaceField:
    g = u.grid
    return SpaceField(g, gradient_array(u.scalar(), g.dx, g.n))


def discrete_divergence(G: SpaceField) -> SpaceField:
    g = G.grid
    if G.d != g.n:
        raise DimensionMismatch(f"divergence needs d = n = {g.n}, got d = {G.d}")
    return SpaceField(g, divergence_array(G.values, g.dx, g.n))


def inner_product(f: SpaceField, h: SpaceField) -> float:
    _check_same(f, h)
    return float(np.sum(f.values * h.values) * f.grid.cell_volume)


# -------------------------------------------------------------------- balls


@dataclass(frozen=True)
class Ball:
    grid: GridSpec
    center: tuple[int, ...]
    radius: float
    members: np.ndarray = field(repr=False)
    saturated: bool = False

    @property
    def measure(self) -> float:
        return len(self.members) * self.grid.cell_volume

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.spatial_shape, dtype=bool)
        m[tuple(self.members.T)] = True
        return m

    def dilate(self, factor: float) -> "Ball":
        return ball_members(self.grid, self.center, factor * self.radius)


def torus_offsets(n: int, N: int) -> np.ndarray:
    """Signed minimal offsets ``0, 1, ..., -1`` along one axis."""
    k = np.arange(N)
    return np.where(k <= N // 2, k, k - N)


@lru_cache(maxsize=64)
def _squared_index_distance(n: int, N: int) -> np.ndarray:
    off = torus_offsets(n, N).astype(np.float64) ** 2
    if n == 1:
        return off
    return off[:, None] + off[None, :]


def torus_distance_from(grid: GridSpec, center) -> np.ndarray:
    """Euclidean torus distance from ``center`` to every node."""
    d2 = _squared_index_distance(grid.n, grid.N)
    shifted = np.roll(d2, shift=tuple(int(c) for c in np.atleast_1d(center)), axis=tuple(range(grid.n)))
    return grid.dx * np.sqrt(shifted)


def ball_offsets_mask(grid: GridSpec, r: float) -> np.ndarray:
    """Indicator of the ball of radius ``r`` centred at the origin node."""
    # tolerance keeps radii of the form k*dx from flipping on round-off
    d2 = _squared_index_distance(grid.n, grid.N) * grid.dx**2
    return d2 < r * r * (1.0 - 1e-12)


def ball_members(grid: GridSpec, center, r: float) -> Ball:
    if not r > 0:
        raise ValueError(f"ball radius must be positive, got {r}")
    center = tuple(int(c) % grid.N for c in np.atleast_1d(center))
    if len(center) != grid.n:
        raise DimensionMismatch(f"center {center} is not an index of an n={grid.n} grid")
    mask = np.roll(ball_offsets_mask(grid, r), shift=center, axis=tuple(range(grid.n)))
    members = np.argwhere(mask)
    return Ball(grid, center, float(r), members, saturated=r > grid.L / 2)


# ---------------------------------------------------------------------- I/O


def encode_field(f: SpaceField | SpaceTimeField) -> bytes:
    """Fixed 64-byte header then row-major little-endian float64 values.

    Space fields use ``SPACE_MAGIC`` and have no time axis in the body.
    """
    g = f.grid
    magic = MAGIC if isinstance(f, SpaceTimeField) else SPACE_MAGIC
    head = _HEADER.pack(magic, FORMAT_VERSION, g.n, g.N, g.M, f.d, g.L, g.T_max)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def decode_field(blob: bytes) -> SpaceField | SpaceTimeField:
    magic, version, n, N, M, d, L, T_max = _HEADER.unpack_from(blob)
    if magic not in (MAGIC, SPACE_MAGIC):
        raise ValueError("not a field file (bad magic)")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported field format version {version}")
    grid = GridSpec(n, N, M, L, T_max)
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if magic == SPACE_MAGIC:
        return SpaceField(grid, data.reshape(grid.spatial_shape + (d,)))
    return SpaceTimeField(grid, data.reshape((M,) + grid.spatial_shape + (d,)))


def save_field(path: str | Path, f: SpaceField | SpaceTimeField) -> None:
    Path(path).write_bytes(encode_field(f))


def load_field(path: str | Path) -> SpaceField | SpaceTimeField:
    return decode_field(Path(path).read_bytes())
