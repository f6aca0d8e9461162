"""Conical and vertical square functions and the norms built from them."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import GridSpec, SpaceField, SpaceTimeField, ball_offsets_mask, DimensionMismatch


class Family(str, enum.Enum):
    TENT = "tent"
    VERTICAL = "vertical"
    TENT_INF = "tent_inf"
    E = "E"
    F = "F"


@dataclass(frozen=True)
class NormKind:
    family: Family
    p: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is not Family.TENT_INF and not self.p > 0:
            raise ValueError(f"exponent must be positive, got {self.p}")

    def resolve(self) -> "NormKind":
        """Map the E/F selectors to the concrete tent or vertical norm."""
        if self.family is Family.E:
            return NormKind(Family.VERTICAL if self.p >= 2 else Family.TENT, self.p)
        if self.family is Family.F:
            return NormKind(Family.TENT if self.p >= 2 else Family.VERTICAL, self.p)
        return self


TENT_INF = NormKind(Family.TENT_INF, np.inf)


def tent(p: float) -> NormKind:
    return NormKind(Family.TENT, p)


def vertical(p: float) -> NormKind:
    return NormKind(Family.VERTICAL, p)


# ------------------------------------------------------------ ball kernels


_KERNELS: dict[tuple[GridSpec, int], tuple[np.ndarray, np.ndarray]] = {}


def _ball_key(grid: GridSpec, r: float) -> int:
    # balls centred on a node are nested in r, so the member count identifies the set
    return int(ball_offsets_mask(grid, r).sum())


def _ball_kernel(grid: GridSpec, r: float) -> tuple[np.ndarray, int, np.ndarray]:
    """Origin-centred ball mask, its size and its real FFT (cached per distinct ball)."""
    key = (grid, _ball_key(grid, r))
    if key not in _KERNELS:
        mask = ball_offsets_mask(grid, r)
        _KERNELS[key] = (mask, np.fft.rfftn(mask.astype(np.float64)))
    mask, kf = _KERNELS[key]
    return mask, key[1], kf


def ball_groups(grid: GridSpec, radii: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """Group indices of ``radii`` whose discrete balls coincide.

    Returns ``(representative radius, indices)`` pairs in increasing radius.
    """
    keys = np.array([_ball_key(grid, r) for r in radii])
    groups = []
    for key in np.unique(keys):
        idx = np.flatnonzero(keys == key)
        groups.append((float(radii[idx[0]]), idx))
    return groups


def ball_average(grid: GridSpec, h: np.ndarray, r: float, exact_zeros: bool = False) -> np.ndarray:
    """Average of ``h`` over B(x, r) for every node x; batch axes lead.

    With ``exact_zeros`` the average is set to 0 wherever the ball misses the
    support of ``h``, removing FFT round-off that a later square root would
    amplify.
    """
    _, count, kf = _ball_kernel(grid, r)
    axes = tuple(range(h.ndim - grid.n, h.ndim))
    out = np.fft.irfftn(np.fft.rfftn(h, axes=axes) * kf, s=grid.spatial_shape, axes=axes) / count
    if exact_zeros:
        hits = np.fft.irfftn(np.fft.rfftn((h != 0).astype(np.float64), axes=axes) * kf,
                             s=grid.spatial_shape, axes=axes)
        out[hits < 0.5] = 0.0
    return out


# ---------------------------------------------------------- square functions


def _cone_radii(grid: GridSpec) -> np.ndarray:
    return np.sqrt(grid.times)


def conical_sf(f: SpaceTimeField, aperture: float = 1.0) -> SpaceField:
    """Conical square function: per x, sum_m dt * avg over B(x, aperture * sqrt t_m) of |f|^2, rooted."""
    g = f.grid
    sq = f.squared_modulus() * g.dt
    total = np.zeros(g.spatial_shape)
    for r, idx in ball_groups(g, aperture * _cone_radii(g)):
        total += ball_average(g, sq[idx].sum(axis=0), r, exact_zeros=True)
    return SpaceField(g, np.sqrt(np.clip(total, 0.0, None)))


def vertical_sf(f: SpaceTimeField) -> SpaceField:
    g = f.grid
    return SpaceField(g, np.sqrt(np.sum(f.squared_modulus(), axis=0) * g.dt))


def lp_norm(h: SpaceField | np.ndarray, p: float, grid: GridSpec | None = None) -> float:
    """``L^p`` (quasi-)norm of a scalar space function, counting measure times dx^n."""
    if isinstance(h, SpaceField):
        grid, vals = h.grid, np.abs(h.scalar()) if h.d == 1 else np.linalg.norm(h.values, axis=-1)
    else:
        vals = np.abs(h)
    if np.isinf(p):
        return float(vals.max())
    return float((np.sum(vals**p) * grid.cell_volume) ** (1.0 / p))


def carleson_menu(grid: GridSpec) -> list[tuple[float, int]]:
    """Finite radius menu for the T-infinity sup as ``(radius, number of time slices)``.

    Radius ``sqrt(t_m)`` covers slices with ``t_l < t_m``; dyadic radii
    ``sqrt(T_max) * 2^j <= L/2`` cover every slice.
    """
    menu = [(float(np.sqrt(t)), m) for m, t in enumerate(grid.times)]
    r = np.sqrt(grid.T_max) * 2.0
    while r <= grid.L / 2:
        menu.append((float(r), grid.M))
        r *= 2.0
    return menu


def carleson_profile(f: SpaceTimeField) -> np.ndarray:
    """Carleson averages for every menu entry and centre, shape ``(len(menu),) + spatial``."""
    g = f.grid
    sq = f.squared_modulus() * g.dt
    prefix = np.concatenate([np.zeros((1,) + g.spatial_shape), np.cumsum(sq, axis=0)])
    menu = carleson_menu(g)
    radii = np.array([r for r, _ in menu])
    out = np.empty((len(menu),) + g.spatial_shape)
    for r, idx in ball_groups(g, radii):
        counts = [menu[i][1] for i in idx]
        out[idx] = ball_average(g, prefix[counts], r, exact_zeros=True)
    return np.clip(out, 0.0, None)


def carleson_norm(f: SpaceTimeField) -> float:
    return float(np.sqrt(carleson_profile(f).max()))


def norm(f: SpaceTimeField, kind: NormKind) -> float:
    kind = kind.resolve()
    if kind.family is Family.TENT_INF:
        return carleson_norm(f)
    if kind.family is Family.TENT:
        return lp_norm(conical_sf(f), kind.p)
    return lp_norm(vertical_sf(f), kind.p)


def nontangential_max(f: SpaceTimeField) -> SpaceField:
    """max over m and y in B(x, sqrt t_m) of |f(t_m, y)|."""
    if f.d != 1:
        raise DimensionMismatch("nontangential maximal function expects a scalar field")
    g = f.grid
    absf = np.abs(f.values[..., 0])
    out = np.zeros(g.spatial_shape)
    for r, idx in ball_groups(g, _cone_radii(g)):
        mask, _, _ = _ball_kernel(g, r)
        out = np.maximum(out, _wrap_max_filter(absf[idx].max(axis=0), mask))
    return SpaceField(g, out)


def _wrap_max_filter(h: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # centre the origin-based mask into a footprint
    N = mask.shape[0]
    idx = np.argwhere(mask)
    signed = np.where(idx > N // 2, idx - N, idx)
    R = int(np.abs(signed).max())
    fp = np.zeros((2 * R + 1,) * mask.ndim, dtype=bool)
    fp[tuple((signed + R).T)] = True
    return ndimage.maximum_filter(h, footprint=fp, mode="wrap")


def duality_pairing(f: SpaceTimeField, h: SpaceTimeField) -> float:
    if f.grid != h.grid or f.values.shape != h.values.shape:
        raise DimensionMismatch("pairing needs fields of identical shape")
    g = f.grid
    return float(np.sum(f.values * h.values) * g.dt * g.cell_volume)


def norm_record(f: SpaceTimeField, kind: NormKind) -> str:
    """JSON record ``{kind, p, value, grid}`` for norm reports."""
    p = None if kind.family is Family.TENT_INF else kind.p
    return json.dumps(
        {"kind": kind.family.value, "p": p, "value": norm(f, kind), "grid": f.grid.fingerprint()},
        sort_keys=True,
    )
