"""Experiment configuration: loading, validation and provenance hashing.

Configs are YAML (or JSON) documents.  Paths inside a config are resolved
relative to the config file.  See ``configs/`` in the repository for one
example per subcommand.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from ..errors import ConfigError
from ..solver import AffineCoefficient, SystemSpec
from ..spectral import GridSpec, SpectralState
from ..symbols import RateBetween, RateMatch, load_symbols, regime_from_rule

KINDS = ("reduce", "converge", "blowup", "normwatch")


@dataclass
class ExperimentConfig:
    kind: str
    raw: dict
    base_dir: Path
    eps: list = field(default_factory=list)
    delta_rule: Optional[tuple] = None
    regime: Any = None
    grid: Optional[GridSpec] = None
    T_end: Optional[float] = None
    tolerances: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the config contents."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def delta(self, eps: float) -> float:
        c, q = self.delta_rule
        return c * eps ** q

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def get(self, key, default=None):
        return self.raw.get(key, default)


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return d[key]


def parse_regime(spec) -> Any:
    if spec is None:
        return None
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("regime must be a mapping with 'kind'")
    kind = spec["kind"]
    try:
        if kind == "RateMatch":
            return RateMatch(int(_require(spec, "s", "regime")), float(spec.get("C", 1.0)))
        if kind == "RateBetween":
            return RateBetween(int(_require(spec, "s", "regime")))
    except ValueError as exc:
        raise ConfigError(f"regime: {exc}") from exc
    raise ConfigError(f"unknown regime kind {kind!r}")


def check_schedule(eps):
    eps = [float(e) for e in eps]
    if not eps:
        raise ConfigError("eps schedule is empty")
    if any(e <= 0 or e >= 1 for e in eps):
        raise ConfigError("eps values must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps schedule must be strictly decreasing")
    return eps


def check_rule(rule, regime):
    """Validate ``delta = c * eps**q`` and its consistency with ``regime``."""
    if not isinstance(rule, dict):
        raise ConfigError("delta_rule must be a mapping {c, q}")
    c = float(rule.get("c", 1.0))
    q = float(_require(rule, "q", "delta_rule"))
    if c <= 0:
        raise ConfigError("delta_rule.c must be positive")
    if q < 1:
        raise ConfigError("delta_rule.q must be >= 1")
    if regime is not None:
        implied = regime_from_rule(c, q)
        if implied != regime:
            raise ConfigError(f"delta = {c}*eps^{q} implies {implied}, config declares {regime}")
    return c, q


def load_config(path, kind: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    found = raw.get("experiment", kind)
    if found not in KINDS:
        raise ConfigError(f"{path}: experiment must be one of {KINDS}")
    if kind is not None and found != kind:
        raise ConfigError(f"{path}: config is for '{found}', not '{kind}'")
    cfg = ExperimentConfig(found, copy.deepcopy(raw), path.resolve().parent)
    cfg.tolerances = dict(raw.get("tolerances", {}))
    cfg.regime = parse_regime(raw.get("regime"))
    if "grid" in raw:
        g = raw["grid"]
        try:
            cfg.grid = GridSpec(int(_require(g, "d", "grid")), int(_require(g, "N", "grid")))
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc
    if "eps" in raw:
        cfg.eps = check_schedule(raw["eps"])
    if "delta_rule" in raw:
        cfg.delta_rule = check_rule(raw["delta_rule"], cfg.regime)
    if "T_end" in raw:
        cfg.T_end = float(raw["T_end"])
        if cfg.T_end <= 0:
            raise ConfigError("T_end must be positive")
    if found in ("converge", "normwatch"):
        for key in ("eps", "delta_rule", "grid", "T_end"):
            if key not in raw:
                raise ConfigError(f"{path}: '{found}' needs '{key}'")
    if found == "converge" and cfg.regime is None:
        raise ConfigError(f"{path}: 'converge' needs a regime")
    return cfg


# -- coefficient and field parsing --------------------------------------------------

def parse_matrix(spec, n, where) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "identity":
            return np.eye(n)
        if spec == "zeros":
            return np.zeros((n, n))
        if spec.startswith("diag"):
            try:
                vals = json.loads(spec[4:].strip())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{where}: bad diag spec {spec!r}") from exc
            return np.diag(np.asarray(vals, dtype=float))
        raise ConfigError(f"{where}: unknown matrix keyword {spec!r}")
    m = np.asarray(spec, dtype=float)
    if m.shape != (n, n):
        raise ConfigError(f"{where}: expected {n}x{n}, got {m.shape}")
    return m


def parse_affine(spec, n, where) -> AffineCoefficient:
    if spec is None:
        return None
    if not isinstance(spec, dict):
        return AffineCoefficient.constant(parse_matrix(spec, n, where))
    base = parse_matrix(spec.get("base", "zeros"), n, f"{where}.base")
    slopes = {int(c): parse_matrix(m, n, f"{where}.slopes[{c}]")
              for c, m in (spec.get("slopes") or {}).items()}
    try:
        return AffineCoefficient(base, slopes)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_system(cfg: ExperimentConfig, eps: float, delta: float) -> SystemSpec:
    sec = _require(cfg.raw, "system", "config")
    L, M = load_symbols(cfg.path(_require(sec, "symbols", "system")))
    n = L.n
    d = cfg.grid.d
    A0 = parse_affine(sec.get("A0", "identity"), n, "system.A0")
    A = [parse_affine(a, n, f"system.A[{j}]") for j, a in enumerate(sec.get("A", []))]
    H = parse_matrix(sec["H"], n, "system.H") if "H" in sec else None
    try:
        return SystemSpec(n, d, L, M, eps, delta, A0=A0, A_list=A, H=H,
                          c0=float(sec.get("c0", 0.5)), b0=float(sec.get("b0", 1.0)),
                          dealias=bool(sec.get("dealias", True)))
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"system: {exc}") from exc


def field_from_exprs(exprs, grid: GridSpec, where="field") -> SpectralState:
    """Real field from one expression per component in ``x, y, z`` (sympy syntax)."""
    import sympy

    names = sympy.symbols("x y z")[: grid.d]
    pts = [grid.points[j] for j in range(grid.d)]
    comps = []
    for i, e in enumerate(exprs):
        try:
            expr = sympy.sympify(str(e), locals={str(s): s for s in names})
        except (sympy.SympifyError, TypeError) as exc:
            raise ConfigError(f"{where}[{i}]: cannot parse {e!r}") from exc
        extra = expr.free_symbols - set(names)
        if extra:
            raise ConfigError(f"{where}[{i}]: unknown symbols {sorted(map(str, extra))}")
        fn = sympy.lambdify(names, expr, modules="numpy")
        val = np.broadcast_to(np.asarray(fn(*pts), dtype=float), grid.shape)
        comps.append(val)
    return SpectralState.from_values(np.stack(comps), grid)


def scalar_function(expr, var="v"):
    """Numpy callable of one variable from a sympy expression string."""
    import sympy

    s = sympy.Symbol(var)
    try:
        e = sympy.sympify(str(expr), locals={var: s})
    except (sympy.SympifyError, TypeError) as exc:
        raise ConfigError(f"cannot parse {expr!r}") from exc
    if e.free_symbols - {s}:
        raise ConfigError(f"{expr!r}: only '{var}' may appear")
    f = sympy.lambdify(s, e, modules="numpy")
    return lambda v: np.broadcast_to(np.asarray(f(v), dtype=float), np.shape(v))


def fmt_param(name, value) -> str:
    """Fixed decimal formatting for parameters embedded in file names."""
    return f"{name}{value:.8f}"
