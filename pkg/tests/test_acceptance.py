"""Acceptance criteria, each checked at its stated tolerance and time budget.

Every test prints one ``PASS``/``FAIL`` line with the measured quantities and
runtime; the lines are repeated in a summary section at the end of the run.
Run only this file with::

    pytest tests/test_acceptance.py -v
"""

import math
import time

import numpy as np
import pytest
from scipy.special import gamma

from fracvar.discretization import (
    CoefficientField,
    DifferenceStep,
    GridFunction,
    build_mesh,
    interpolate,
    norms,
)
from fracvar.errors import DomainError, ParseError
from fracvar.expr import parse_expression, to_string
from fracvar.frac_ops import marchaud_right
from fracvar.variational import (
    ProblemSpec,
    assemble,
    certify_lax_milgram,
    galerkin_residual,
    h2_probe,
    solve_bvp,
)
from fracvar.discretization import P1Space
from fracvar.verification import (
    ManufacturedCase,
    accretivity_test,
    adjoint_test,
    bump,
    coincidence_test,
    embedding_scan,
    manufactured_convergence,
    manufactured_rhs,
    oracle_derivative,
    random_h10_family,
    sbp_test,
    smooth_pair,
)

ALPHAS = (0.25, 0.5, 0.75)


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def report(request, capsys, number, title, budget, fn):
    """Run ``fn() -> (passed, detail)``, print the verdict line and assert."""
    t0 = time.perf_counter()
    passed, detail = fn()
    elapsed = time.perf_counter() - t0
    in_time = elapsed < budget
    ok = bool(passed and in_time)
    line = (f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {detail} | "
            f"runtime {elapsed:.2f} s (budget {budget:g} s)")
    request.config.acceptance_lines.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line
    assert in_time, line


def test_criterion_01_constant_marchaud(request, capsys):
    def run():
        g = build_mesh(1.0, 2048)
        x = g.nodes
        keep = x <= 0.9 + 1e-12
        worst = 0.0
        for alpha in ALPHAS:
            # f(d) != 0, so the limit norm needs alpha * p < 1
            out = marchaud_right(GridFunction(g, np.ones_like(x)), alpha,
                                 p_exponent=min(2.0, 0.99 / alpha)).values
            exact = (1 - x[keep]) ** -alpha / gamma(1 - alpha)
            worst = max(worst, float(np.max(np.abs(out[keep] - exact) / exact)))
        return worst < 1e-6, f"max rel err {worst:.2e} (< 1e-6) on [0, 0.9d], alpha in {ALPHAS}"

    report(request, capsys, 1, "constant-function Marchaud closed form", 5, run)


def test_criterion_02_power_law(request, capsys):
    def run():
        g = build_mesh(1.0, 2048)
        f = interpolate(lambda t: 1 - t, g)
        idx = np.arange(0, 2048, 32)
        errs = []
        for alpha in ALPHAS:
            out = marchaud_right(f, alpha).values[idx]
            ref = oracle_derivative(lambda t: 1 - t, alpha, g.nodes[idx])
            closed = gamma(2) / gamma(2 - alpha) * (1 - g.nodes[idx]) ** (1 - alpha)
            assert np.allclose(ref, closed, rtol=1e-9)
            errs.append(float(np.max(np.abs(out - ref) / np.abs(ref))))
        detail = ", ".join(f"alpha={a}: {e:.1e}" for a, e in zip(ALPHAS, errs))
        return max(errs) < 1e-4, f"max rel err vs oracle {detail} (< 1e-4)"

    report(request, capsys, 2, "right-sided power-law closed form", 10, run)


def test_criterion_03_coincidence(request, capsys):
    def run():
        parts, ok = [], True
        for alpha in ALPHAS:
            table = coincidence_test(bump(0.5, 0.35), alpha, [256, 512, 1024])
            err, rate = table.errors["l2_rel"][-1], table.min_rate("l2_rel")
            ok &= err < 1e-2 and rate >= 0.9
            parts.append(f"alpha={alpha}: err {err:.1e}, rate {rate:.2f}")
        return ok, "; ".join(parts) + " (err < 1e-2, rate >= 0.9)"

    report(request, capsys, 3, "D(I phi) = phi for a bump", 30, run)


def test_criterion_04_summation_by_parts(request, capsys):
    def run():
        rng = np.random.default_rng(4)
        g = build_mesh(1.0, 256)
        worst = 0.0
        for _ in range(100):
            a, b = sorted(rng.integers(8, 248, size=2))
            vals = np.zeros(257)
            vals[a:b + 1] = rng.standard_normal(b - a + 1)
            k = int(rng.integers(1, 3))
            res = sbp_test(GridFunction(g, vals), GridFunction(g, rng.standard_normal(257)),
                           DifferenceStep(k * g.spacing[0]))
            worst = max(worst, res.residual / res.tolerance * 1e-12)
        raised = False
        try:
            sbp_test(GridFunction(g, np.r_[0.0, np.ones(255), 0.0]),
                     GridFunction(g, np.ones(257)), g.spacing[0])
        except DomainError:
            raised = True
        return worst <= 1e-12 and raised, (f"worst residual/scale {worst:.1e} (<= 1e-12), "
                                           f"boundary-touching support rejected: {raised}")

    report(request, capsys, 4, "summation by parts for difference quotients", 1, run)


def test_criterion_05_accretivity(request, capsys):
    def run():
        worst = math.inf
        for alpha in ALPHAS:
            for p in (_ones, lambda x: 1 + np.asarray(x) / 2):
                res = accretivity_test(CoefficientField(_ones, p), alpha, 256)
                space = P1Space(build_mesh(1.0, 256))
                form = assemble(space, CoefficientField(_ones, p), alpha)
                lam = certify_lax_milgram(form).accretivity_margin
                worst = min(worst, lam)
                assert res.passed == (lam >= -1e-10)
        return worst >= -1e-10, f"min eig of sym(F) in L2 metric {worst:.3f} (>= -1e-10)"

    report(request, capsys, 5, "accretivity of the fractional block", 20, run)


def test_criterion_06_lax_milgram(request, capsys):
    def run():
        target = math.pi**2 / (1 + math.pi**2)
        space = P1Space(build_mesh(1.0, 512))
        base = certify_lax_milgram(assemble(space, CoefficientField(_ones, _zeros), 0.5))
        gap = abs(base.k2_estimate - target)
        ok = gap < 1e-3
        never_below, min_k2 = True, math.inf
        small = P1Space(build_mesh(1.0, 128))
        for alpha in ALPHAS:
            ref = certify_lax_milgram(assemble(small, CoefficientField(_ones, _zeros), alpha))
            min_k2 = min(min_k2, ref.k2_estimate)
            for a, p in [(_ones, _ones), (_ones, lambda x: 1 + np.asarray(x) / 2),
                         (lambda x: 1 + np.asarray(x) ** 2, lambda x: 2 - np.asarray(x))]:
                cert = certify_lax_milgram(assemble(small, CoefficientField(a, p), alpha))
                min_k2 = min(min_k2, cert.k2_estimate)
                if a is _ones:
                    never_below &= cert.k2_estimate >= ref.k2_estimate - 1e-10
        ok &= min_k2 > 0 and never_below
        return ok, (f"p=0 k2 {base.k2_estimate:.6f} vs {target:.6f} (gap {gap:.1e} < 1e-3), "
                    f"min k2 over configs {min_k2:.4f} > 0, p>0 never below p=0: {never_below}")

    report(request, capsys, 6, "Lax-Milgram certificate", 20, run)


def test_criterion_07_generalized_solution(request, capsys):
    def run():
        coeffs = CoefficientField(lambda x: 1 + np.asarray(x) ** 2, lambda x: 1 + np.asarray(x) / 2)
        res = solve_bvp(ProblemSpec(1.0, 0.5, coeffs, lambda x: np.exp(x) * np.sin(3 * x)), 512)
        r = galerkin_residual(res)
        zero = solve_bvp(ProblemSpec(1.0, 0.5, coeffs, _zeros), 512, certify=False)
        h1 = norms(zero.solution).h1
        ok = r <= 1e-10 * res.scale and h1 < 1e-10
        return ok, (f"residual {r:.1e} <= 1e-10*scale ({1e-10 * res.scale:.1e}); "
                    f"f=0 gives ||z||_H1 = {h1:.1e} (< 1e-10)")

    report(request, capsys, 7, "generalized solution solve", 5, run)


def _fractional_case():
    return ManufacturedCase(z=lambda x: x * (1 - x), dz=lambda x: 1 - 2 * x,
                            d2z=lambda x: -2 + 0 * x, alpha=0.5, a=_ones, da=_zeros, p=_ones)


def test_criterion_08_manufactured(request, capsys):
    def run():
        Ns = [64, 128, 256, 512]
        frac = manufactured_convergence(_fractional_case(), Ns)
        r_frac = frac.min_rate("l2")
        ctrl_case = ManufacturedCase(
            z=lambda x: np.sin(np.pi * x), dz=lambda x: np.pi * np.cos(np.pi * x),
            d2z=lambda x: -np.pi**2 * np.sin(np.pi * x), alpha=0.5,
            a=_ones, da=_zeros, p=_zeros, p_is_zero=True)
        ctrl = manufactured_convergence(ctrl_case, Ns)
        l2 = ctrl.rates("l2")[1:]
        h1 = ctrl.rates("h1")[1:]
        ok = (r_frac >= 1.8 and all(abs(r - 2.0) <= 0.2 for r in l2)
              and all(abs(r - 1.0) <= 0.2 for r in h1))
        return ok, (f"fractional L2 min rate {r_frac:.3f} (>= 1.8); control L2 rates "
                    f"{', '.join(f'{r:.3f}' for r in l2)} (2 +- 0.2), H1 rates "
                    f"{', '.join(f'{r:.3f}' for r in h1)} (1 +- 0.2)")

    report(request, capsys, 8, "manufactured convergence", 120, run)


def test_criterion_09_h2_probe(request, capsys):
    def run():
        case = _fractional_case()
        f = manufactured_rhs(case)
        spec = ProblemSpec(1.0, case.alpha, case.coeffs(), f)
        z = solve_bvp(spec, 512, certify=False).solution
        rep = h2_probe(z, interpolate(f, z.grid), spec, [2.0**-k for k in range(5, 10)])
        ratios = np.array(rep.ratios)
        spread = ratios.max() / ratios.min()
        return spread <= 2.0, (f"ratios {', '.join(f'{r:.4f}' for r in ratios)}; "
                               f"max/min {spread:.3f} (<= 2)")

    report(request, capsys, 9, "H2 difference-quotient probe", 60, run)


def test_criterion_10_embedding_scan(request, capsys):
    def run():
        g = build_mesh(1.0, 512)
        deltas = [2.0**-k for k in range(1, 11)]
        fam20 = random_h10_family(g, 20, seed=10)
        fam40 = random_h10_family(g, 40, seed=10)
        k20 = embedding_scan(fam20, 0.5, 2.5, 1e-3, deltas, seed=10).fitted_K
        k40 = embedding_scan(fam40, 0.5, 2.5, 1e-3, deltas, seed=10).fitted_K
        k20x = embedding_scan([3.0 * f for f in fam20], 0.5, 2.5, 1e-3, deltas).fitted_K
        change = abs(k40 - k20) / k20
        invariant = abs(k20x - k20) <= 1e-12 * k20
        ok = math.isfinite(k20) and k20 > 0 and invariant and change < 0.1
        return ok, (f"K(20) {k20:.5f}, K(40) {k40:.5f}, change {change:.1%} (< 10%), "
                    f"scaling invariant: {invariant}")

    report(request, capsys, 10, "embedding inequality scan", 60, run)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_criterion_11_adjoint(request, capsys, alpha):
    """Adjoint identity with the truncated operator at eps = d 2^-12.

    The truncated side is evaluated on the N = 1024 mesh itself. The cut-off
    limit (with the refined-and-extrapolated pairing) is reported alongside
    for reference; the verdict uses the truncated operator only.
    """

    def run():
        g = build_mesh(1.0, 1024)
        coeffs = CoefficientField(_ones, lambda x: 1 + np.asarray(x) / 2)
        rng = np.random.default_rng(11)
        trunc, limit = [], []
        for _ in range(10):
            v, u = smooth_pair(g, rng)
            trunc.append(adjoint_test(v, u, coeffs, alpha, 2.0**-12).residual)
            limit.append(adjoint_test(v, u, coeffs, alpha, None, extrapolate=True).residual)
        return max(trunc) < 1e-3, (f"alpha={alpha}: max rel err truncated {max(trunc):.1e} "
                                   f"(< 1e-3); cut-off limit {max(limit):.1e}")

    report(request, capsys, 11, "adjoint identity at eps = d 2^-12", 60, run)


CORPUS = [
    "1", "x", "pi", "e", "-x", "2*x+1", "x - 1", "1 + x/2", "x*(1-x)", "sin(pi*x)",
    "cos(2*pi*x)^2", "exp(-x)", "sqrt(1 + x)", "abs(x - 0.5)", "pow(x, 3)", "x^2^3",
    "(x^2)^3", "-x^2", "(-x)^2", "2^-x", "1/(1+x)", "x/2/3", "x/(2/3)", "1 - (x - 1)",
    "1.5e-3*x", ".5 + x", "3.", "  x  *  x ", "exp(sin(x))*cos(x)", "pow(1 + x, 0.5)",
    "--x", "2*-x", "x^(1/2)", "e^x",
]
MALFORMED = [("2*^x", 2), ("", 0), ("x +", 3), ("(x", 2), ("x)", 1), ("sin x", 4),
             ("foo(x)", 0), ("pow(x)", 0), ("2 $ x", 2), ("3x", 1)]


def test_criterion_12_parser(request, capsys):
    def run():
        trips = sum(parse_expression(to_string(parse_expression(s))) == parse_expression(s)
                    for s in CORPUS)
        positioned = 0
        for text, offset in MALFORMED:
            try:
                parse_expression(text)
            except ParseError as exc:
                positioned += exc.offset == offset and exc.expected is not None
        ok = len(CORPUS) >= 30 and trips == len(CORPUS) and positioned == len(MALFORMED) >= 10
        return ok, (f"round trips {trips}/{len(CORPUS)}, positioned errors "
                    f"{positioned}/{len(MALFORMED)}")

    report(request, capsys, 12, "expression parser", 1, run)
