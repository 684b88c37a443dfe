"""JSON run configuration with per-field validation messages.

Sections: ``geometry``, ``physics``, ``solver``, ``adapt``, ``optimizer`` and
``outputs``, plus the top-level ``benchmark`` name. Unknown keys are errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

BENCHMARKS = ("cylinder", "horn", "barrier")


@dataclass(frozen=True)
class GeometrySection:
    case: int = 1
    design: tuple | None = None
    n_cp: int | None = None


@dataclass(frozen=True)
class PhysicsSection:
    f: float | None = None
    k: float | None = None
    c: float = 345.0
    aggregate: str = "sum"


@dataclass(frozen=True)
class SolverSection:
    quadrature: int = 5
    initial_level: int = 0


@dataclass(frozen=True)
class AdaptSection:
    eps0: float = 1e-2
    eps_loop: float = 1e-3
    eps_sol: float = 1e-4
    n_max: int = 10
    fraction: float = 0.5
    uniform: bool = False
    max_refine: int = 30


@dataclass(frozen=True)
class OptimizerSection:
    enabled: bool = True
    gradient: str = "fd"
    tol_x: float = 1e-6
    tol_g: float = 1e-6
    max_iter: int = 200


@dataclass(frozen=True)
class OutputsSection:
    vtk: bool = True
    svg: bool = True


@dataclass(frozen=True)
class RunConfig:
    benchmark: str
    geometry: GeometrySection = field(default_factory=GeometrySection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    solver: SolverSection = field(default_factory=SolverSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)

    def to_dict(self) -> dict:
        out: dict = {"benchmark": self.benchmark}
        for f in fields(self):
            if f.name == "benchmark":
                continue
            sec = getattr(self, f.name)
            out[f.name] = {g.name: _plain(getattr(sec, g.name)) for g in fields(sec)}
        return out


_SECTIONS = {
    "geometry": GeometrySection,
    "physics": PhysicsSection,
    "solver": SolverSection,
    "adapt": AdaptSection,
    "optimizer": OptimizerSection,
    "outputs": OutputsSection,
}


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(where: str, value, default):
    """Type-check ``value`` against the kind of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("%s: expected true/false, got %r" % (where, value))
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("%s: expected an integer, got %r" % (where, value))
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError("%s: expected a finite number, got %r" % (where, value))
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError("%s: expected a string, got %r" % (where, value))
        return value
    return value


def _section(name: str, raw) -> object:
    cls = _SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError("%s: expected an object" % name)
    proto = cls()
    known = {f.name for f in fields(cls)}
    kw = {}
    for key, value in raw.items():
        where = "%s.%s" % (name, key)
        if key not in known:
            raise ConfigError("%s: unknown field" % where)
        default = getattr(proto, key)
        if value is None and default is None:
            # optional fields written back by to_dict
            kw[key] = None
        elif name == "geometry" and key == "design":
            if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
            ):
                raise ConfigError("%s: expected a list of numbers" % where)
            kw[key] = tuple(float(v) for v in value)
        elif name == "physics" and key in ("f", "k"):
            kw[key] = _coerce(where, value, 0.0)
        elif name == "geometry" and key == "n_cp":
            kw[key] = _coerce(where, value, 0)
        else:
            kw[key] = _coerce(where, value, default)
    return cls(**kw)


def _validate(cfg: RunConfig) -> None:
    if cfg.benchmark not in BENCHMARKS:
        raise ConfigError("benchmark: expected one of %s, got %r" % (", ".join(BENCHMARKS), cfg.benchmark))
    ph = cfg.physics
    if ph.f is not None and ph.k is not None:
        raise ConfigError("physics: give either f or k, not both")
    for key in ("f", "k", "c"):
        v = getattr(ph, key)
        if v is not None and v <= 0:
            raise ConfigError("physics.%s: must be positive" % key)
    if ph.aggregate not in ("sum", "mean"):
        raise ConfigError("physics.aggregate: expected 'sum' or 'mean'")
    if cfg.benchmark == "cylinder" and cfg.geometry.case not in (1, 2, 3):
        raise ConfigError("geometry.case: expected 1, 2 or 3")
    if cfg.solver.quadrature != 5:
        raise ConfigError("solver.quadrature: only the 5-point Gauss rule is available")
    if cfg.solver.initial_level < 0:
        raise ConfigError("solver.initial_level: must be non-negative")
    ad = cfg.adapt
    for key in ("eps0", "eps_loop", "eps_sol"):
        if not getattr(ad, key) > 0:
            raise ConfigError("adapt.%s: must be positive" % key)
    if not 0 < ad.fraction <= 1:
        raise ConfigError("adapt.fraction: must lie in (0, 1]")
    if ad.n_max < 1 or ad.max_refine < 0:
        raise ConfigError("adapt.n_max/max_refine: out of range")
    op = cfg.optimizer
    if op.gradient not in ("fd", "adjoint"):
        raise ConfigError("optimizer.gradient: expected 'fd' or 'adjoint'")
    if op.tol_x <= 0 or op.tol_g <= 0 or op.max_iter < 1:
        raise ConfigError("optimizer: tolerances must be positive and max_iter >= 1")


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("line %d column %d: %s" % (exc.lineno, exc.colno, exc.msg)) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")
    if "benchmark" not in raw:
        raise ConfigError("benchmark: missing")
    kw = {"benchmark": raw["benchmark"]}
    for key, value in raw.items():
        if key == "benchmark":
            continue
        if key not in _SECTIONS:
            raise ConfigError("%s: unknown section" % key)
        kw[key] = _section(key, value)
    cfg = RunConfig(**kw)
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("%s: no such config file" % p)
    return parse_config(p.read_text())


def default_config(benchmark: str, **overrides) -> RunConfig:
    """Full-scale defaults per benchmark, adjusted by ``section={...}`` overrides."""
    base = {
        "cylinder": {"geometry": {"case": 1}, "solver": {"initial_level": 0}},
        "horn": {
            "geometry": {"n_cp": 1},
            "physics": {"f": 1000.0},
            "adapt": {"eps0": 1e-2, "eps_loop": 1e-2},
        },
        "barrier": {
            "geometry": {"n_cp": 5},
            "physics": {"f": 400.0, "aggregate": "sum"},
            "adapt": {"eps0": 1e-2, "eps_loop": 1e-2},
            "optimizer": {"gradient": "adjoint"},
        },
    }
    if benchmark not in base:
        raise ConfigError("benchmark: expected one of %s, got %r" % (", ".join(BENCHMARKS), benchmark))
    raw = {"benchmark": benchmark}
    for sec, vals in base[benchmark].items():
        raw[sec] = dict(vals)
    for sec, vals in overrides.items():
        raw.setdefault(sec, {}).update(vals)
    return parse_config(json.dumps(raw))
