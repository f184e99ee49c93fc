"""Run configuration: a flat ``key = value`` text format with dotted sections.

Values are JSON (numbers, strings, ``null``, lists; matrices as row-major
nested lists).  ``#`` starts a comment.  Unknown keys are errors.  Parsing
materializes every default, so ``emit`` always writes the complete,
canonical form and ``parse(emit(c)) == c``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .flow import StepControl
from .grid import BaseDomain, DomainError
from .solitons import KINDS, SolitonSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "emit_config", "EXPERIMENTS"]

EXPERIMENTS = ("stability", "monotonicity", "blowdown", "tracking", "oracle")
_HORIZON = {"stability": 16.0, "monotonicity": 16.0, "tracking": 4.0, "oracle": 1.0}
_U64 = 2**64


class ConfigError(ValueError):
    """Invalid configuration; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message, line=None, key=None):
        where = []
        if isinstance(line, int):
            where.append(f"line {line}")
        elif line is not None:
            where.append(str(line))
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "stability"
    seed: int = 0
    output_dir: str = "bundleflow-out"
    domain_dim: int | None = None
    domain_sizes: tuple | None = None
    domain_periods: tuple | None = None
    domain_holonomy: tuple | None = None
    domain_mode: str | None = None
    domain_curvature: float | None = None
    domain_order: int = 4
    fiber_N: int | None = None
    initial_source: str = "soliton"
    initial_soliton: str = "sol"
    initial_X: tuple | None = None
    initial_c: float | None = None
    initial_checkpoint: str | None = None
    initial_t0: float = 1.0
    initial_eps: float = 1e-2
    initial_modes: int = 4
    step_safety: float = 0.2
    step_dt_min: float = 1e-12
    step_max_rejects: int = 30
    step_dt_max: float | None = None
    run_horizon: float | None = None
    run_functional: str = "W+"
    run_tau_end: float = 1.0
    run_scales: tuple = (1.0, 4.0, 16.0, 64.0)
    run_checkpoint_every: int = 16
    run_n_states: int = 20

    # derived objects

    def domain(self) -> BaseDomain:
        return BaseDomain(
            dim=self.domain_dim,
            sizes=self.domain_sizes or (),
            periods=self.domain_periods or (),
            holonomy=None if self.domain_holonomy is None else np.array(self.domain_holonomy),
            mode=self.domain_mode,
            curvature=self.domain_curvature,
            order=self.domain_order,
        )

    def soliton_spec(self) -> SolitonSpec:
        kind = self.initial_soliton
        kappa = self.domain_curvature if kind in ("h2xr", "h3") else None
        dom = None if kind in ("h2xr", "h3") else self.domain()
        return SolitonSpec(kind, domain=dom, X=self.initial_X, c=self.initial_c, kappa=kappa,
                           n_fiber=self.fiber_N if self.fiber_N is not None else 2)

    def step_control(self) -> StepControl:
        return StepControl(safety=self.step_safety, dt_min=self.step_dt_min,
                           max_rejects=self.step_max_rejects, dt_max=self.step_dt_max)


def _key(attr: str) -> str:
    head, _, rest = attr.partition("_")
    return f"{head}.{rest}" if head in ("output", "domain", "fiber", "initial", "step", "run") else attr


_FIELDS = {_key(f.name): f.name for f in fields(RunConfig)}


def _expect(key, value, kinds, line, allow_none=False):
    if value is None and allow_none:
        return None
    if bool in kinds and isinstance(value, bool):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"expected {kinds[0].__name__}, got a boolean", line, key)
    if float in kinds and isinstance(value, (int, float)):
        v = float(value)
        if not math.isfinite(v):
            raise ConfigError("value must be finite", line, key)
        return v
    if int in kinds and isinstance(value, int):
        return value
    if str in kinds and isinstance(value, str):
        return value
    raise ConfigError(f"expected {' or '.join(k.__name__ for k in kinds)}", line, key)


def _vector(key, value, kind, line, allow_none=True):
    if value is None and allow_none:
        return None
    if not isinstance(value, list):
        raise ConfigError("expected a bracketed list", line, key)
    return tuple(_expect(key, v, (kind,), line) for v in value)


def _matrix(key, value, line):
    if value is None:
        return None
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ConfigError("expected a row-major nested list", line, key)
    rows = tuple(_vector(key, r, float, line, allow_none=False) for r in value)
    if any(len(r) != len(rows) for r in rows):
        raise ConfigError("matrix must be square", line, key)
    return rows


_CONVERT = {
    "experiment": lambda k, v, ln: _expect(k, v, (str,), ln),
    "seed": lambda k, v, ln: _expect(k, v, (int,), ln),
    "output.dir": lambda k, v, ln: _expect(k, v, (str,), ln),
    "domain.dim": lambda k, v, ln: _expect(k, v, (int,), ln, True),
    "domain.sizes": lambda k, v, ln: _vector(k, v, int, ln),
    "domain.periods": lambda k, v, ln: _vector(k, v, float, ln),
    "domain.holonomy": _matrix,
    "domain.mode": lambda k, v, ln: _expect(k, v, (str,), ln, True),
    "domain.curvature": lambda k, v, ln: _expect(k, v, (float,), ln, True),
    "domain.order": lambda k, v, ln: _expect(k, v, (int,), ln),
    "fiber.N": lambda k, v, ln: _expect(k, v, (int,), ln, True),
    "initial.source": lambda k, v, ln: _expect(k, v, (str,), ln),
    "initial.soliton": lambda k, v, ln: _expect(k, v, (str,), ln),
    "initial.X": lambda k, v, ln: _vector(k, v, float, ln),
    "initial.c": lambda k, v, ln: _expect(k, v, (float,), ln, True),
    "initial.checkpoint": lambda k, v, ln: _expect(k, v, (str,), ln, True),
    "initial.t0": lambda k, v, ln: _expect(k, v, (float,), ln),
    "initial.eps": lambda k, v, ln: _expect(k, v, (float,), ln),
    "initial.modes": lambda k, v, ln: _expect(k, v, (int,), ln),
    "step.safety": lambda k, v, ln: _expect(k, v, (float,), ln),
    "step.dt_min": lambda k, v, ln: _expect(k, v, (float,), ln),
    "step.max_rejects": lambda k, v, ln: _expect(k, v, (int,), ln),
    "step.dt_max": lambda k, v, ln: _expect(k, v, (float,), ln, True),
    "run.horizon": lambda k, v, ln: _expect(k, v, (float,), ln, True),
    "run.functional": lambda k, v, ln: _expect(k, v, (str,), ln),
    "run.tau_end": lambda k, v, ln: _expect(k, v, (float,), ln),
    "run.scales": lambda k, v, ln: _vector(k, v, float, ln, allow_none=False),
    "run.checkpoint_every": lambda k, v, ln: _expect(k, v, (int,), ln),
    "run.n_states": lambda k, v, ln: _expect(k, v, (int,), ln),
}
assert set(_CONVERT) == set(_FIELDS)


def _read_lines(text, overrides=()):
    """(key, raw JSON value, line label) triples; later entries win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, _, value = line.partition("=")
        out[key.strip()] = (value.strip(), lineno)
    for j, item in enumerate(overrides, start=1):
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, _, value = item.partition("=")
        out[key.strip()] = (value.strip(), f"override {j}")
    return out


def _strip_comment(raw):
    # a '#' inside a JSON string is kept
    quoted = False
    for i, ch in enumerate(raw):
        if ch == '"' and (i == 0 or raw[i - 1] != "\\"):
            quoted = not quoted
        elif ch == "#" and not quoted:
            return raw[:i].strip()
    return raw.strip()


def parse_config(text: str, overrides=(), check_paths: bool = True) -> RunConfig:
    """Parse, validate and fully default a configuration."""
    raw = _read_lines(text, overrides)
    values = {}
    lines = {}
    for key, (value, lineno) in raw.items():
        if key not in _FIELDS:
            raise ConfigError("unknown key", lineno, key)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"value is not valid JSON ({exc.msg})", lineno, key) from None
        values[_FIELDS[key]] = _CONVERT[key](key, parsed, lineno)
        lines[_FIELDS[key]] = lineno
    cfg = RunConfig(**values)
    return _materialize(cfg, lines, check_paths)


def _fail(msg, attr, lines):
    raise ConfigError(msg, lines.get(attr), _key(attr))


def _materialize(cfg: RunConfig, lines: dict, check_paths: bool) -> RunConfig:
    if cfg.experiment not in EXPERIMENTS:
        _fail(f"experiment must be one of {', '.join(EXPERIMENTS)}", "experiment", lines)
    if not 0 <= cfg.seed < _U64:
        _fail("seed must be an unsigned 64-bit integer", "seed", lines)
    if cfg.initial_source not in ("soliton", "checkpoint"):
        _fail("initial.source must be 'soliton' or 'checkpoint'", "initial_source", lines)
    if cfg.initial_soliton not in KINDS:
        _fail(f"initial.soliton must be one of {', '.join(KINDS)}", "initial_soliton", lines)
    if cfg.run_functional not in ("F", "W", "W+"):
        _fail("run.functional must be F, W or W+", "run_functional", lines)
    if cfg.initial_eps < 0:
        _fail("perturbation amplitude must be nonnegative", "initial_eps", lines)
    if not cfg.initial_t0 > 0:
        _fail("initial time must be positive", "initial_t0", lines)
    if cfg.run_checkpoint_every < 1:
        _fail("checkpoint_every must be positive", "run_checkpoint_every", lines)
    if not cfg.run_scales or any(s < 1 for s in cfg.run_scales):
        _fail("scales must be a nonempty list of values >= 1", "run_scales", lines)
    if cfg.domain_holonomy is not None:
        d = float(np.linalg.det(np.array(cfg.domain_holonomy)))
        if abs(abs(d) - 1.0) > 1e-12:
            _fail(f"holonomy determinant {d!r} does not have modulus 1", "domain_holonomy", lines)
    try:
        StepControl(cfg.step_safety, cfg.step_dt_min, cfg.step_max_rejects, cfg.step_dt_max)
    except ValueError as exc:
        _fail(str(exc), "step_safety", lines)

    changes = {}
    if cfg.initial_source == "checkpoint":
        path = cfg.initial_checkpoint
        if path is None:
            _fail("checkpoint source needs initial.checkpoint", "initial_checkpoint", lines)
        if check_paths and not os.path.exists(path):
            _fail(f"checkpoint {path!r} does not exist", "initial_checkpoint", lines)
    elif cfg.initial_checkpoint is not None and check_paths and not os.path.exists(
            cfg.initial_checkpoint):
        _fail(f"checkpoint {cfg.initial_checkpoint!r} does not exist", "initial_checkpoint", lines)

    # domain defaults follow the soliton family
    kind = cfg.initial_soliton
    homog = kind in ("h2xr", "h3")
    d_given = {a: getattr(cfg, a) for a in ("domain_dim", "domain_sizes", "domain_periods",
                                            "domain_mode", "domain_curvature")}
    if homog:
        dim = 2 if kind == "h2xr" else 3
        base = dict(domain_dim=dim, domain_sizes=(), domain_periods=(), domain_mode="homogeneous",
                    domain_curvature=-1.0)
    elif kind in ("sol", "generalized_sol"):
        base = dict(domain_dim=1, domain_sizes=(256,), domain_periods=(1.0,), domain_mode="grid",
                    domain_curvature=0.0)
    elif kind == "nil":
        base = dict(domain_dim=2, domain_sizes=(64, 64), domain_periods=(1.0, 1.0),
                    domain_mode="grid", domain_curvature=0.0)
    else:
        base = dict(domain_dim=1, domain_sizes=(64,), domain_periods=(1.0,), domain_mode="grid",
                    domain_curvature=0.0)
    for attr, default in base.items():
        changes[attr] = default if d_given[attr] is None else d_given[attr]
    cfg = replace(cfg, **changes)
    try:
        spec_dom = replace(cfg, domain_holonomy=None).soliton_spec()
    except (ValueError, DomainError) as exc:
        given = [a for a in d_given if a in lines]
        _fail(str(exc), given[0] if given else "initial_soliton", lines)
    derived = spec_dom.domain.holonomy
    derived = None if derived is None else tuple(tuple(float(x) for x in r) for r in derived)
    if cfg.domain_holonomy is None:
        cfg = replace(cfg, domain_holonomy=derived)
    else:
        ref = np.eye(len(cfg.domain_holonomy)) if derived is None else np.array(derived)
        given = np.array(cfg.domain_holonomy)
        if given.shape != ref.shape or np.max(np.abs(given - ref)) > 1e-12 * np.max(np.abs(ref)):
            _fail("holonomy does not match the soliton family on this base", "domain_holonomy",
                  lines)
        cfg = replace(cfg, domain_holonomy=derived)
    if cfg.initial_X is None and kind in ("sol", "generalized_sol"):
        cfg = replace(cfg, initial_X=tuple(spec_dom.X))
    if cfg.initial_c is None and kind == "nil":
        cfg = replace(cfg, initial_c=spec_dom.c)
    if cfg.fiber_N is None:
        cfg = replace(cfg, fiber_N=spec_dom.N)
    elif cfg.fiber_N != spec_dom.N:
        _fail(f"fiber dimension {cfg.fiber_N} does not match {kind} (N = {spec_dom.N})",
              "fiber_N", lines)
    if cfg.run_horizon is None:
        h = max(cfg.run_scales) if cfg.experiment == "blowdown" else _HORIZON[cfg.experiment]
        cfg = replace(cfg, run_horizon=float(h))
    if cfg.experiment != "oracle" and not cfg.run_horizon > cfg.initial_t0:
        _fail("horizon must exceed the initial time", "run_horizon", lines)
    try:
        cfg.soliton_spec()
    except (ValueError, DomainError) as exc:
        _fail(str(exc), "domain_dim", lines)
    return cfg


def _dump(value) -> str:
    if isinstance(value, tuple):
        value = [list(v) if isinstance(v, tuple) else v for v in value]
    return json.dumps(value)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text: every key, fixed order, grouped by section."""
    out = []
    section = None
    for f in fields(RunConfig):
        key = _key(f.name)
        head = key.split(".")[0] if "." in key else None
        if head != section and out:
            out.append("")
        section = head
        out.append(f"{key} = {_dump(getattr(cfg, f.name))}")
    return "\n".join(out) + "\n"
