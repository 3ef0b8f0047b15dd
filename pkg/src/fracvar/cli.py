"""Command line entry point: ``fracvar --config run.json [--task T] [--out DIR] [--seed S]``.

The exit status is 0 when every pass flag of the invoked task is true, 1 when
the task ran but a check failed, and 2 when the run aborted with an error (a
structured record is then written to ``error.json``). Set ``FRACVAR_LOG`` to
a logging level name (``INFO``, ``DEBUG``) for progress output.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from fracvar.config import RunConfig, load_config
from fracvar.discretization import DifferenceStep, GridFunction, build_mesh
from fracvar.errors import FracvarError
from fracvar.reports import write_csv, write_json
from fracvar.variational import ProblemSpec, export_coo, galerkin_residual, solve_bvp
from fracvar.verification import (
    ManufacturedCase,
    accretivity_test,
    adjoint_test,
    embedding_scan,
    greens_test,
    manufactured_convergence,
    random_h10_family,
    sbp_test,
    smooth_pair,
)

log = logging.getLogger("fracvar")

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2

_DEFAULT_NAMES = {
    "solution": "solution.csv",
    "certificate": "certificate.json",
    "verify": "verify.json",
    "convergence": "convergence.csv",
    "scan": "scan.csv",
    "scan_json": "scan.json",
    "summary": "summary.json",
    "error": "error.json",
}


class _Run:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.artifacts = {}

    def path(self, key: str) -> Path:
        name = self.cfg.outputs.get(key, _DEFAULT_NAMES.get(key))
        p = self.out / name
        self.artifacts[key] = str(name)
        return p

    def spec(self, rhs=None) -> ProblemSpec:
        c = self.cfg
        return ProblemSpec(c.d, c.alpha, c.coeffs(), rhs if rhs is not None else c.f, c.n)


def _task_solve(run: _Run) -> dict:
    c = run.cfg
    result = solve_bvp(run.spec(), c.N, lambda_used=c.lambda_used)
    z = result.solution
    write_csv(run.path("solution"), ["node", "value"], zip(z.grid.nodes, z.values))
    cert = result.certificate.as_dict()
    residual = galerkin_residual(result)
    cert.update(galerkin_residual=residual, scale=result.scale, N=c.N)
    write_json(run.path("certificate"), cert)
    if "matrix" in c.outputs:
        export_coo(result.form.system, run.path("matrix"))
    return {
        "coercive": cert["k2_estimate"] > 0,
        "galerkin_residual": residual <= 1e-10 * result.scale,
    }


def _task_verify(run: _Run) -> dict:
    c = run.cfg
    rng = np.random.default_rng(c.seed)
    grid = build_mesh(c.d, c.N)
    coeffs = c.coeffs()
    entries = {}

    # summation by parts on random compactly supported grid functions
    step = DifferenceStep(float(grid.spacing[0]))
    worst = None
    for _ in range(20):
        lo, hi = 4, max(grid.N - 4, 5)
        mask = np.zeros(grid.N + 1)
        a, b = sorted(rng.integers(lo, hi, size=2))
        mask[a:b + 1] = 1.0
        v = GridFunction(grid, mask * rng.standard_normal(grid.N + 1))
        u = GridFunction(grid, rng.standard_normal(grid.N + 1))
        r = sbp_test(v, u, step)
        if worst is None or r.residual / r.tolerance > worst.residual / worst.tolerance:
            worst = r
    entries["sbp"] = worst.as_dict()

    # Green's formula with the configured diffusion coefficient
    if c.z_star is not None:
        z, dz = c.z_star, c.z_star.derivative()
        d2z = dz.derivative()
    else:
        L = c.d
        z = lambda x: np.sin(np.pi * np.asarray(x) / L)
        dz = lambda x: np.pi / L * np.cos(np.pi * np.asarray(x) / L)
        d2z = lambda x: -((np.pi / L) ** 2) * np.sin(np.pi * np.asarray(x) / L)
    v, _ = smooth_pair(grid, rng)
    entries["greens"] = greens_test(z, dz, d2z, v, coeffs, da=c.a.derivative(),
                                    rule="gauss3").as_dict()

    # adjoint identity against the cut-off limit of the right-sided derivative
    v, u = smooth_pair(grid, rng)
    entries["adjoint"] = adjoint_test(v, u, coeffs, c.alpha, None, c.n,
                                     refine=max(1, 256 // c.N), extrapolate=True).as_dict()

    entries["accretivity"] = accretivity_test(coeffs, c.alpha, c.N, c.d, c.n).as_dict()
    write_json(run.path("verify"), entries)
    return {name: bool(e["pass"]) for name, e in entries.items()}


def _task_convergence(run: _Run) -> dict:
    c = run.cfg
    dz = c.z_star.derivative()
    case = ManufacturedCase(
        z=c.z_star, dz=dz, d2z=dz.derivative(), alpha=c.alpha,
        a=c.a, da=c.a.derivative(), p=c.p, d=c.d, n=c.n,
    )
    table = manufactured_convergence(case, c.N_list)
    table.to_csv(run.path("convergence"))
    rate = table.min_rate("l2")
    return {"l2_rate": bool(rate >= c.min_rate)}


def default_q(alpha: float, n: int = 1) -> float:
    """Midpoint of the admissible window for ``q``, or 4 when it is unbounded."""
    denom = 2 * alpha - 2 + n
    if denom > 0:
        return 0.5 * (2.0 + 2 * n / denom)
    return 4.0


def _task_scan(run: _Run) -> dict:
    c = run.cfg
    grid = build_mesh(c.d, c.N)
    q = c.q if c.q is not None else default_q(c.alpha, c.n)
    family = random_h10_family(grid, c.family_size, seed=c.seed)
    report = embedding_scan(family, c.alpha, q, c.beta, c.delta_grid, c.n, seed=c.seed)
    write_csv(run.path("scan"), ["quantity", "value"], report.rows())
    write_json(run.path("scan_json"), {
        "alpha": report.alpha, "beta": report.beta, "q_exponent": report.q_exponent,
        "nu": report.nu, "delta_grid": list(report.delta_grid), "fitted_K": report.fitted_K,
        "worst_ratio": report.worst_ratio, "family_size": report.family_size,
        "seed": report.seed, "q_constraints": report.q_constraints,
    })
    return {
        "fitted_K_finite": math.isfinite(report.fitted_K) and report.fitted_K >= 0,
        "bound_holds": report.worst_ratio <= 1.0 + 1e-12,
    }


TASK_HANDLERS = {
    "solve": _task_solve,
    "verify": _task_verify,
    "convergence": _task_convergence,
    "scan": _task_scan,
}


def run(cfg: RunConfig, out) -> int:
    """Dispatch the configured task, write its artifacts under ``out`` and return the exit status."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    job = _Run(cfg, out)
    t0 = time.perf_counter()
    try:
        checks = TASK_HANDLERS[cfg.task](job)
    except FracvarError as exc:
        _write_error(out, exc, cfg.outputs.get("error", "error.json"))
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR
    passed = all(checks.values())
    write_json(job.path("summary"), {
        "task": cfg.task,
        "alpha": cfg.alpha,
        "d": cfg.d,
        "n": cfg.n,
        "seed": cfg.seed,
        "coefficients": cfg.header,
        "checks": checks,
        "pass": passed,
        "artifacts": job.artifacts,
        "elapsed_s": time.perf_counter() - t0,
    })
    for name, ok in checks.items():
        log.info("%s: %s", name, "pass" if ok else "FAIL")
    return EXIT_OK if passed else EXIT_FAILED


def _write_error(out: Path, exc: Exception, name: str = "error.json"):
    record = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "offset", "expected", "distance"):
        value = getattr(exc, attr, None)
        if value is not None:
            record[attr] = sorted(value) if isinstance(value, (set, frozenset)) else value
    write_json(out / name, record)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracvar", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--task", choices=sorted(TASK_HANDLERS), help="override the configured task")
    ap.add_argument("--out", default=".", help="directory for all outputs (default: .)")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("FRACVAR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config).with_overrides(task=args.task, seed=args.seed)
    except FracvarError as exc:
        out.mkdir(parents=True, exist_ok=True)
        _write_error(out, exc)
        print(f"fracvar: {exc}", file=sys.stderr)
        return EXIT_ERROR
    status = run(cfg, out)
    if status == EXIT_ERROR:
        print(f"fracvar: run failed, see {out / cfg.outputs.get('error', 'error.json')}",
              file=sys.stderr)
    elif status == EXIT_FAILED:
        print("fracvar: one or more checks failed, see summary.json", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
