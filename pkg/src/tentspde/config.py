"""Experiment configuration read from TOML.

Schema (every section optional except ``[run]``, which must carry ``seed``)::

    [run]
    seed = 0                  # root seed, non-negative integer
    samples = 20              # optional ensemble override, >= 1
    quick = false             # smaller grids and ensembles
    workers = 1               # worker processes, >= 1
    criteria = [1, 2, 3]      # enabled acceptance criteria, default none
    out = "out"               # output directory for report.json and CSV tables

    [grid]                    # used by sweeps and the single-operation commands
    n = 1
    N = 64
    M = 64
    L = 1.0
    T_max = 0.1

    [coefficients]
    law = "checkerboard"      # checkerboard | smooth | identity
    lam = 0.5
    Lam = 2.0
    cellsize = 0.125          # optional, default L/8
    skew = 0.0

    [data]
    K = 4
    kmax = 3
    psi_scale = 1.0
    F_scale = 1.0
    g_scale = 1.0

    [menus]
    p = [1.5, 2.0, 3.0]
    T = [0.025, 0.05, 0.1]    # default T_max/4, T_max/2, T_max

    [sweep]
    axis = "p"                # p | resolution | T | K | lambda_ratio
    values = [1.0, 2.0]       # resolution values are [N, M] pairs

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .grid import GridSpec

SWEEP_AXES = ("p", "resolution", "T", "K", "lambda_ratio")
LAWS = ("checkerboard", "smooth", "identity")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class RunSection:
    seed: int
    samples: int | None = None
    quick: bool = False
    workers: int = 1
    criteria: tuple[int, ...] = ()
    out: str = "out"


@dataclass(frozen=True)
class GridSection:
    n: int = 1
    N: int = 64
    M: int = 64
    L: float = 1.0
    T_max: float = 0.1


@dataclass(frozen=True)
class CoefficientSection:
    law: str = "checkerboard"
    lam: float = 0.5
    Lam: float = 2.0
    cellsize: float | None = None
    skew: float = 0.0


@dataclass(frozen=True)
class DataSection:
    K: int = 4
    kmax: int = 3
    psi_scale: float = 1.0
    F_scale: float = 1.0
    g_scale: float = 1.0


@dataclass(frozen=True)
class MenuSection:
    p: tuple[float, ...] = (1.5, 2.0, 3.0)
    T: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SweepSection:
    axis: str = "p"
    values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection
    grid: GridSection = field(default_factory=GridSection)
    coefficients: CoefficientSection = field(default_factory=CoefficientSection)
    data: DataSection = field(default_factory=DataSection)
    menus: MenuSection = field(default_factory=MenuSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    source: str | None = None

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(g.n, g.N, g.M, g.L, g.T_max)

    def T_menu(self) -> tuple[float, ...]:
        if self.menus.T is not None:
            return self.menus.T
        T = self.grid.T_max
        return (T / 4, T / 2, T)

    def with_overrides(self, **run_fields) -> "ExperimentConfig":
        fields = {k: v for k, v in run_fields.items() if v is not None}
        cfg = dataclasses.replace(self, run=dataclasses.replace(self.run, **fields))
        validate(cfg)
        return cfg

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("source")
        return out


_SECTIONS = {
    "run": RunSection,
    "grid": GridSection,
    "coefficients": CoefficientSection,
    "data": DataSection,
    "menus": MenuSection,
    "sweep": SweepSection,
}

# accepted python types per annotation string
_TYPES = {
    "int": (int,),
    "float": (int, float),
    "bool": (bool,),
    "str": (str,),
}


def _convert(path: str, value, annotation: str):
    base = annotation.replace(" | None", "")
    if base.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        inner = base[len("tuple[") : -1].split(",")[0].strip() if "[" in base else None
        if inner is None:
            return tuple(value)
        return tuple(_convert(f"{path}[{i}]", v, inner) for i, v in enumerate(value))
    ok = _TYPES[base]
    if isinstance(value, bool) and base != "bool":
        raise ConfigError(path, f"expected {base}, got bool")
    if not isinstance(value, ok):
        raise ConfigError(path, f"expected {base}, got {type(value).__name__}")
    return float(value) if base == "float" else value


def _section(name: str, cls, table) -> object:
    if not isinstance(table, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in table:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    kwargs = {}
    for key, f in known.items():
        if key in table:
            kwargs[key] = _convert(f"{name}.{key}", table[key], f.type)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{name}.{key}", "required key missing")
    return cls(**kwargs)


def from_dict(raw: dict, source: str | None = None) -> ExperimentConfig:
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(key, "unknown section")
    if "run" not in raw:
        raise ConfigError("run.seed", "required key missing")
    sections = {name: _section(name, cls, raw[name]) for name, cls in _SECTIONS.items() if name in raw}
    cfg = ExperimentConfig(**sections, source=source)
    validate(cfg)
    return cfg


def load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from exc
    return from_dict(raw, str(path))


def validate(cfg: ExperimentConfig) -> None:
    from .criteria import REGISTRY

    r = cfg.run
    if r.seed < 0:
        raise ConfigError("run.seed", "must be non-negative")
    if r.samples is not None and r.samples < 1:
        raise ConfigError("run.samples", "must be >= 1")
    if r.workers < 1:
        raise ConfigError("run.workers", "must be >= 1")
    for i, c in enumerate(r.criteria):
        if c not in REGISTRY:
            raise ConfigError(f"run.criteria[{i}]", f"no criterion {c}")
    if len(set(r.criteria)) != len(r.criteria):
        raise ConfigError("run.criteria", "duplicate criterion id")
    try:
        grid = cfg.grid_spec()
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from exc
    c = cfg.coefficients
    if c.law not in LAWS:
        raise ConfigError("coefficients.law", f"must be one of {LAWS}")
    if not 0 < c.lam <= c.Lam:
        raise ConfigError("coefficients.lam", "need 0 < lam <= Lam")
    if c.cellsize is not None and not 0 < c.cellsize <= grid.L:
        raise ConfigError("coefficients.cellsize", "must lie in (0, L]")
    d = cfg.data
    if d.K < 1:
        raise ConfigError("data.K", "must be >= 1")
    if d.kmax < 1:
        raise ConfigError("data.kmax", "must be >= 1")
    for i, p in enumerate(cfg.menus.p):
        if not 0 < p < float("inf"):
            raise ConfigError(f"menus.p[{i}]", "must be positive and finite")
    for i, T in enumerate(cfg.T_menu()):
        if not 0 < T <= grid.T_max:
            raise ConfigError(f"menus.T[{i}]", f"must lie in (0, {grid.T_max}]")
    _validate_sweep(cfg.sweep, grid)


def _validate_sweep(s: SweepSection, grid: GridSpec) -> None:
    if s.axis not in SWEEP_AXES:
        raise ConfigError("sweep.axis", f"must be one of {SWEEP_AXES}")
    for i, v in enumerate(s.values):
        path = f"sweep.values[{i}]"
        if s.axis == "resolution":
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in v)):
                raise ConfigError(path, "resolution values are [N, M] integer pairs")
            try:
                GridSpec(grid.n, v[0], v[1], grid.L, grid.T_max)
            except ValueError as exc:
                raise ConfigError(path, str(exc)) from exc
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, "expected a number")
        elif s.axis == "K" and (not isinstance(v, int) or v < 1):
            raise ConfigError(path, "K values are integers >= 1")
        elif s.axis == "T" and not 0 < v <= grid.T_max:
            raise ConfigError(path, f"must lie in (0, {grid.T_max}]")
        elif s.axis == "lambda_ratio" and v < 1:
            raise ConfigError(path, "Lam/lam ratio must be >= 1")
        elif s.axis == "p" and v <= 0:
            raise ConfigError(path, "must be positive")


def packaged(name: str) -> Path:
    """Path of a canned config shipped with the package, e.g. ``acceptance-n1``."""
    path = Path(__file__).parent / "configs" / f"{name}.toml"
    if not path.exists():
        raise ConfigError("<file>", f"no canned config {name!r}")
    return path
