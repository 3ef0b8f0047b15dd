"""Strict JSON run configurations.

Example::

    {
      "task": "solve",
      "d": 1.0, "alpha": 0.5, "n": 1, "N": 256,
      "a": "1", "p": "1 + x/2", "f": "sin(pi*x)"
    }

Unknown keys are rejected. ``a0`` and ``p0`` are measured on the 3-point
Gauss points (and nodes) of the finest mesh the run will use.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from fracvar.discretization import CoefficientField, build_mesh
from fracvar.errors import ConfigError, DataError, DomainError, EllipticityError, ParseError
from fracvar.expr import Expression
from fracvar.frac_ops import check_order

TASKS = ("solve", "verify", "convergence", "scan")

_DEFAULTS = {
    "d": 1.0,
    "n": 1,
    "N": 256,
    "N_list": [64, 128, 256, 512],
    "a": "1",
    "p": "1",
    "f": "1",
    "z_star": None,
    "lipschitz_lambda": 1.0,
    "beta": 1e-3,
    "q": None,
    "delta_grid": [2.0**-k for k in range(1, 11)],
    "family_size": 20,
    "lambda_used": None,
    "min_rate": 1.8,
    "seed": 0,
    "outputs": {},
}
_REQUIRED = ("task", "alpha")
_OUTPUT_KEYS = {"solution", "certificate", "convergence", "scan", "scan_json", "verify",
                "summary", "error", "matrix"}


@dataclass(frozen=True)
class RunConfig:
    task: str
    d: float
    alpha: float
    n: int
    N: int
    N_list: tuple
    a: Expression
    p: Expression
    f: Expression | None
    z_star: Expression | None
    lipschitz_lambda: float
    beta: float
    q: float | None
    delta_grid: tuple
    family_size: int
    lambda_used: float | None
    min_rate: float
    seed: int
    outputs: dict = field(default_factory=dict)
    header: dict = field(default_factory=dict)

    def coeffs(self) -> CoefficientField:
        return CoefficientField(self.a, self.p, self.lipschitz_lambda)

    def with_overrides(self, task: str | None = None, seed: int | None = None) -> RunConfig:
        changes = {}
        if task is not None:
            if task not in TASKS:
                raise ConfigError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
            changes["task"] = task
        if seed is not None:
            changes["seed"] = int(seed)
        return replace(self, **changes) if changes else self


def _expr(raw, key) -> Expression:
    if not isinstance(raw, (str, int, float)) or isinstance(raw, bool):
        raise ConfigError(f"{key}: expected an expression string, got {type(raw).__name__}")
    try:
        return Expression(str(raw))
    except ParseError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _number(raw, key, kind=float):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {raw!r}")
    if kind is int and int(raw) != raw:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    value = kind(raw)
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return value


def from_dict(raw: dict) -> RunConfig:
    """Validate a decoded JSON object and build a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - set(_DEFAULTS) - set(_REQUIRED)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    c = {**_DEFAULTS, **raw}

    task = c["task"]
    if task not in TASKS:
        raise ConfigError(f"task must be one of {', '.join(TASKS)}, got {task!r}")
    try:
        alpha = check_order(_number(c["alpha"], "alpha"))
    except DomainError as exc:
        raise ConfigError(f"alpha: {exc}; the order must lie in the open interval (0,1)") from exc
    d = _number(c["d"], "d")
    if not d > 0:
        raise ConfigError(f"d must be positive, got {d}")
    n = _number(c["n"], "n", int)
    if n < 1:
        raise ConfigError("n must be >= 1")
    N = _number(c["N"], "N", int)
    if N < 2:
        raise ConfigError("N must be >= 2")
    if not isinstance(c["N_list"], list) or not c["N_list"]:
        raise ConfigError("N_list must be a non-empty list of integers")
    N_list = tuple(_number(v, "N_list", int) for v in c["N_list"])
    if any(v < 2 for v in N_list) or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ConfigError("N_list must be increasing integers >= 2")
    if not isinstance(c["delta_grid"], list) or not c["delta_grid"]:
        raise ConfigError("delta_grid must be a non-empty list")
    delta_grid = tuple(_number(v, "delta_grid") for v in c["delta_grid"])
    if not isinstance(c["outputs"], dict) or set(c["outputs"]) - _OUTPUT_KEYS:
        raise ConfigError(f"outputs may only name {', '.join(sorted(_OUTPUT_KEYS))}")
    for key, value in c["outputs"].items():
        if not isinstance(value, str) or Path(value).is_absolute():
            raise ConfigError(f"outputs.{key} must be a relative path")

    z_star = None if c["z_star"] is None else _expr(c["z_star"], "z_star")
    if task == "convergence" and z_star is None:
        raise ConfigError("convergence task needs z_star")
    cfg = RunConfig(
        task=task,
        d=d,
        alpha=alpha,
        n=n,
        N=N,
        N_list=N_list,
        a=_expr(c["a"], "a"),
        p=_expr(c["p"], "p"),
        f=None if c["f"] is None else _expr(c["f"], "f"),
        z_star=z_star,
        lipschitz_lambda=_number(c["lipschitz_lambda"], "lipschitz_lambda"),
        beta=_number(c["beta"], "beta"),
        q=None if c["q"] is None else _number(c["q"], "q"),
        delta_grid=delta_grid,
        family_size=_number(c["family_size"], "family_size", int),
        lambda_used=None if c["lambda_used"] is None else _number(c["lambda_used"], "lambda_used"),
        min_rate=_number(c["min_rate"], "min_rate"),
        seed=_number(c["seed"], "seed", int),
        outputs=dict(c["outputs"]),
    )
    return replace(cfg, header=check_coefficients(cfg))


def check_coefficients(cfg: RunConfig) -> dict:
    """Sample ``a`` and ``p`` on the finest mesh; reject ``a0 <= 0`` or ``p0 <= 0``."""
    N = max(cfg.N, max(cfg.N_list)) if cfg.task == "convergence" else cfg.N
    grid = build_mesh(cfg.d, N)
    try:
        b = cfg.coeffs().bounds(grid)
        if cfg.f is not None:
            cfg.f(grid.nodes[1:-1])
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    if b["a0"] <= 0:
        raise EllipticityError(f"field 'a' is not uniformly positive: a0 = {b['a0']:g}", field="a")
    if b["p0"] <= 0:
        raise EllipticityError(
            f"field 'p' must be positive (p(Q) > 0): p0 = {b['p0']:g} at sampled points",
            field="p",
        )
    try:
        b.update(cfg.coeffs().validate(grid, cfg.alpha))
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    return {"a0": b["a0"], "a_sup": b["a_sup"], "p0": b["p0"], "p_sup": b["p_sup"],
            "holder_quotient": b["holder_quotient"], "sample_N": N}


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return from_dict(raw)
