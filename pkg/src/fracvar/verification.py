"""Independent oracles and drivers that check identities and inequalities numerically.

Oracles integrate the defining formulas of the operators with adaptive scalar
quadrature on callables; they never reuse the grid pipeline of
:mod:`fracvar.frac_ops`, so agreement between the two is a real check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import roots_legendre

from fracvar.discretization import (
    CoefficientField,
    DifferenceStep,
    GridFunction,
    build_mesh,
    difference_quotient,
    interpolate,
    l2_pairing,
    norms,
    sample,
    support_distance,
    trapezoid_weights,
)
from fracvar.errors import ConfigError, DomainError, OracleError
from fracvar.frac_ops import (
    KipriyanovSpec,
    check_order,
    fractional_integral_right,
    gamma_coefficient,
    kipriyanov_left,
    marchaud_right,
    marchaud_truncated_right,
)
from fracvar.reports import ConvergenceTable
from fracvar.variational import ProblemSpec, assemble_fractional, solve_bvp
from fracvar.discretization import P1Space, RayGrid

MAX_RESOLUTION = 2**20


@dataclass(frozen=True)
class IdentityResidual:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": self.residual,
                "tolerance": self.tolerance, "pass": self.passed}


# -- oracles ----------------------------------------------------------------


def _quad(fn, a, b, limit, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, limit=limit, epsabs=1e-13, epsrel=1e-12, **kw)
        except integrate.IntegrationWarning as exc:
            return math.nan, math.inf, str(exc)
    return val, err, ""


def _refined(fn, a, b, resolution, **kw):
    """Integrate with doubling subdivision limits until two passes agree to 1e-9."""
    limit = max(int(resolution), 50)
    prev = None
    while limit <= MAX_RESOLUTION:
        val, err, msg = _quad(fn, a, b, limit, **kw)
        if math.isfinite(val) and err < 1e-9 * max(1.0, abs(val)):
            if prev is not None and abs(val - prev) <= 1e-9 * max(1.0, abs(val)):
                return val
            prev = val
        limit *= 2
    raise OracleError(f"oracle quadrature on [{a}, {b}] failed to converge ({msg or 'no agreement'})")


def oracle_derivative(f: Callable, alpha: float, points, resolution: int = 256,
                      kind: str = "marchaud_right", d: float = 1.0, n: int = 1) -> np.ndarray:
    r"""Reference values of a fractional operator at ``points`` by adaptive quadrature.

    ``kind`` selects ``"marchaud_right"``, ``"kipriyanov_left"``,
    ``"marchaud_left"`` (Kipriyanov with ``n = 1``) or ``"integral_right"``.
    ``resolution`` is the initial subdivision limit handed to QUADPACK; it is
    doubled until two passes agree to 1e-9 (relative to max(1, |value|)).

    Singular difference integrals are mapped by :math:`s = u^{1/(1-\alpha)}`,
    which turns :math:`[f(r) - f(r \pm s)]s^{-\alpha-1}ds` into the bounded
    integrand :math:`[f(r) - f(r \pm s)]/((1-\alpha)s)\,du`. The quotient is
    held fixed for ``s < 1e-7 d``, where it would otherwise be roundoff; the
    error this introduces is far below the agreement tolerance.
    """
    alpha = check_order(alpha)
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    out = np.empty(pts.shape)
    g1 = math.gamma(1.0 - alpha)
    e = 1.0 / (1.0 - alpha)

    def diff_integral(r, sign, length, weight=None):
        if length <= 0:
            return 0.0
        fr = float(f(r))
        s_min = 1e-7 * d

        def integrand(u):
            # below s_min the difference is pure roundoff; freeze the quotient there
            s = max(u**e, s_min)
            val = (fr - float(f(r + sign * s))) / (s * (1.0 - alpha))
            return val if weight is None else val * weight(s)

        return _refined(integrand, 0.0, length ** (1.0 - alpha), resolution)

    for k, r in enumerate(pts):
        if kind == "integral_right":
            if r >= d:
                out[k] = 0.0
                continue
            val = _refined(lambda t: float(f(t)), r, d, resolution,
                           weight="alg", wvar=(alpha - 1.0, 0.0))
            out[k] = val / math.gamma(alpha)
        elif kind == "marchaud_right":
            if r >= d:
                raise DomainError("right Marchaud oracle needs r < d")
            out[k] = (float(f(r)) * (d - r) ** (-alpha) / g1
                      + alpha / g1 * diff_integral(r, +1.0, d - r))
        elif kind in ("kipriyanov_left", "marchaud_left"):
            nn = 1 if kind == "marchaud_left" else n
            if r <= 0:
                # same convention as kipriyanov_left: the limit is 0 when f(0) = 0
                if r == 0 and float(f(0.0)) == 0.0:
                    out[k] = 0.0
                    continue
                raise DomainError("left oracle needs r > 0 or f(0) = 0 at r = 0")
            weight = None if nn == 1 else (lambda s, r=r: (1.0 - s / r) ** (nn - 1))
            out[k] = (alpha / g1 * diff_integral(r, -1.0, r, weight)
                      + gamma_coefficient(nn, alpha) * float(f(r)) * r ** (-alpha))
        else:
            raise ValueError(f"unknown oracle kind {kind!r}")
    return out


# -- identities ---------------------------------------------------------------


def sbp_test(v: GridFunction, u: GridFunction, step: DifferenceStep | float) -> IdentityResidual:
    r"""Summation by parts for difference quotients.

    Checks :math:`\langle\Delta^h v, u\rangle = -\langle v, \Delta^{-h}u\rangle`
    in the nodal pairing. The support of ``v`` must stay more than ``2|h|``
    away from both ends, otherwise :class:`DomainError` is raised.
    """
    if not isinstance(step, DifferenceStep):
        step = DifferenceStep(float(step))
    margin = support_distance(v)
    if not margin > 2 * abs(step.h):
        raise DomainError(
            f"supp v is {margin:g} from the boundary; need more than 2|h| = {2 * abs(step.h):g}"
        )
    dv = difference_quotient(v, step)
    du = difference_quotient(u, -step)
    lhs = l2_pairing(dv, u)
    rhs = -l2_pairing(v, du)
    w = trapezoid_weights(v.grid)
    scale = float(np.sum(w * np.abs(dv.values) * np.abs(u.values))
                  + np.sum(w * np.abs(v.values) * np.abs(du.values)))
    return IdentityResidual("sbp", float(abs(lhs - rhs)), 1e-12 * max(scale, 1e-300))


def greens_test(u: Callable, du: Callable, d2u: Callable, v: GridFunction,
                coeffs: CoefficientField, da: Callable | None = None,
                rule: str = "midpoint", tolerance: float | None = None) -> IdentityResidual:
    r"""Green's formula :math:`-\int v (a u')' = \int a v' u'` for a P1 function ``v``.

    ``u`` comes with its analytic derivatives and ``da`` is the derivative of
    ``a`` (zero when omitted). Both sides are computed with the same element
    rule, so the residual is pure quadrature error: O(h^2) for the default
    midpoint rule. The default tolerance is ``h_max**2`` times the size of
    the two sides.
    """
    grid = v.grid
    if rule == "midpoint":
        t, w = np.array([0.5]), np.array([1.0])
    elif rule == "gauss3":
        t, w = roots_legendre(3)
        t, w = 0.5 * (t + 1.0), 0.5 * w
    else:
        raise ValueError(f"unknown rule {rule!r}")
    h = grid.spacing
    xq = grid.element_points(t)
    wq = w[None, :] * h[:, None]
    vq = v(xq)
    dv = (np.diff(v.values) / h)[:, None]
    aq = sample(coeffs.a, xq)
    daq = np.zeros_like(aq) if da is None else sample(da, xq)
    lhs = -np.sum(wq * vq * (daq * sample(du, xq) + aq * sample(d2u, xq)))
    rhs = np.sum(wq * aq * dv * sample(du, xq))
    if tolerance is None:
        tolerance = float(h.max()) ** 2 * (abs(lhs) + abs(rhs)) + 1e-12
    return IdentityResidual("greens", float(abs(lhs - rhs)), tolerance)


def _adjoint_rhs(v: GridFunction, u: GridFunction, p: Callable, alpha: float,
                 eps: float | None, refine: int) -> float:
    grid = v.grid
    if refine > 1:
        t = np.arange(refine) / refine
        grid = RayGrid(np.append(grid.element_points(t).ravel(), grid.d))
        v, u = GridFunction(grid, v(grid.nodes)), GridFunction(grid, u(grid.nodes))
    pv = GridFunction(grid, sample(p, grid.nodes) * v.values)
    if eps is None:
        g = marchaud_right(pv, alpha)
    else:
        g = marchaud_truncated_right(pv, alpha, eps)
    return float(g.values @ P1Space(grid)._full_mass() @ u.values)


def adjoint_test(v: GridFunction, u: GridFunction, coeffs: CoefficientField, alpha: float,
                 eps: float | None, n: int = 1, rtol: float = 1e-3, refine: int = 1,
                 extrapolate: bool = False) -> IdentityResidual:
    r"""Compare the assembled form ``v^T F u`` with :math:`(\mathfrak{D}^\alpha_{d-,\varepsilon}(p v), u)`.

    The right-hand side never touches the assembled matrix: ``p v`` is
    sampled at the nodes, differentiated by the truncated right-sided
    Marchaud operator and paired with ``u`` through the exact P1 mass matrix.
    With ``eps=None`` the cut-off limit is used instead of a fixed truncation.

    The nodal pairing carries an ``O(h^(2-alpha))`` error from the kinks of
    ``v``. ``refine > 1`` evaluates the right-hand side on a mesh with every
    element split into ``refine`` pieces (``v`` and ``u`` stay exact there);
    ``extrapolate`` adds a second pass at ``2 * refine`` and removes the
    leading error term. The residual is relative to ``|v^T F u|``.
    """
    space = P1Space(v.grid)
    F = assemble_fractional(space, coeffs, alpha, n)
    lhs = space.restrict(v) @ F @ space.restrict(u)
    rhs = _adjoint_rhs(v, u, coeffs.p, alpha, eps, refine)
    if extrapolate:
        fine = _adjoint_rhs(v, u, coeffs.p, alpha, eps, 2 * refine)
        k = 2.0 ** (2.0 - alpha)
        rhs = (k * fine - rhs) / (k - 1.0)
    rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return IdentityResidual("adjoint", float(rel), rtol)


def accretivity_test(coeffs: CoefficientField, alpha: float, N: int, d: float = 1.0,
                     n: int = 1, tol: float = 1e-10) -> IdentityResidual:
    """Smallest eigenvalue of sym(F) in the L2 metric, reported as a residual ``max(0, -lambda)``."""
    import scipy.linalg as sla

    space = P1Space(build_mesh(d, N))
    F = assemble_fractional(space, coeffs, alpha, n)
    lam = float(sla.eigh(0.5 * (F + F.T), space.mass(), eigvals_only=True,
                         subset_by_index=[0, 0])[0])
    return IdentityResidual("accretivity", max(0.0, -lam), tol)


# -- convergence studies -----------------------------------------------------


def bump(center: float, width: float) -> Callable:
    """Smooth bump supported on ``(center - width, center + width)``."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        y = (x - center) / width
        inside = np.abs(y) < 1
        out = np.zeros_like(y)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - y[inside] ** 2))
        return out

    return phi


def smooth_pair(grid, rng) -> tuple:
    """Two overlapping bumps inside ``[0.1 d, 0.9 d]``, interpolated on ``grid``."""
    d = grid.d
    w1, w2 = rng.uniform(0.12, 0.25, size=2) * d
    c1 = rng.uniform(0.1 * d + w1, 0.9 * d - w1)
    lo = max(0.1 * d + w2, c1 - 0.5 * w1)
    hi = min(0.9 * d - w2, c1 + 0.5 * w1)
    c2 = rng.uniform(lo, hi) if hi > lo else float(np.clip(c1, 0.1 * d + w2, 0.9 * d - w2))
    return interpolate(bump(c1, w1), grid), interpolate(bump(c2, w2), grid)


def coincidence_test(phi: Callable, alpha: float, N_list: Sequence[int], d: float = 1.0,
                     p_exponent: float | None = None) -> ConvergenceTable:
    r"""Errors of :math:`\mathfrak{D}^\alpha_{d-}(I^\alpha_{d-}\varphi) - \varphi` per resolution.

    The relative L2 error of the P1 interpolants is tabulated under
    ``"l2_rel"``. ``p_exponent`` defaults to the largest of 2 and a value
    just below ``1/alpha`` that keeps the limit norm admissible.
    """
    alpha = check_order(alpha)
    if p_exponent is None:
        p_exponent = min(2.0, 0.99 / alpha)
    errors = []
    for N in N_list:
        grid = build_mesh(d, N)
        ph = interpolate(phi, grid)
        f = fractional_integral_right(ph, alpha)
        back = marchaud_right(f, alpha, p_exponent=p_exponent)
        ref = norms(ph).l2
        err = norms(back - ph).l2
        errors.append(err / ref if ref > 0 else err)
    return ConvergenceTable(list(N_list), {"l2_rel": errors},
                            {"alpha": alpha, "p_exponent": p_exponent})


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution ``z`` with derivatives and the coefficient data."""

    z: Callable
    dz: Callable
    d2z: Callable
    alpha: float
    a: Callable = lambda x: np.ones_like(np.asarray(x, dtype=float))
    da: Callable = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    p: Callable = lambda x: np.ones_like(np.asarray(x, dtype=float))
    d: float = 1.0
    n: int = 1
    p_is_zero: bool = False

    def coeffs(self) -> CoefficientField:
        return CoefficientField(self.a, self.p)


def manufactured_rhs(case: ManufacturedCase, resolution: int = 256) -> Callable:
    r"""``f = -(a z')' + p D^alpha z`` with the fractional term from the oracle."""

    def f(x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        diff = -(sample(case.da, flat) * sample(case.dz, flat)
                 + sample(case.a, flat) * sample(case.d2z, flat))
        if case.p_is_zero:
            return diff.reshape(x.shape)
        frac = oracle_derivative(lambda t: float(case.z(t)), case.alpha, flat,
                                 resolution, kind="kipriyanov_left", d=case.d, n=case.n)
        return (diff + sample(case.p, flat) * frac).reshape(x.shape)

    return f


def _error_norms(zh: GridFunction, case: ManufacturedCase) -> tuple:
    t, w = roots_legendre(5)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    grid = zh.grid
    xq = grid.element_points(t)
    wq = w[None, :] * grid.spacing[:, None]
    e0 = zh(xq) - sample(case.z, xq)
    e1 = (np.diff(zh.values) / grid.spacing)[:, None] - sample(case.dz, xq)
    return math.sqrt(np.sum(wq * e0**2)), math.sqrt(np.sum(wq * e1**2))


def manufactured_convergence(case: ManufacturedCase, N_list: Sequence[int],
                             resolution: int = 256) -> ConvergenceTable:
    """Solve with an oracle-built right-hand side and tabulate L2 / H1 errors."""
    coeffs = case.coeffs()
    f = manufactured_rhs(case, resolution)
    l2, h1, res = [], [], []
    for N in N_list:
        spec = ProblemSpec(case.d, case.alpha, coeffs, f, case.n)
        result = solve_bvp(spec, N, certify=False)
        e0, e1 = _error_norms(result.solution, case)
        l2.append(e0)
        h1.append(e1)
        res.append(result.residual)
    return ConvergenceTable(list(N_list), {"l2": l2, "h1": h1},
                            {"alpha": case.alpha, "residuals": res})


# -- embedding scan -----------------------------------------------------------


@dataclass(frozen=True)
class ScanReport:
    alpha: float
    beta: float
    q_exponent: float
    nu: float
    delta_grid: tuple
    fitted_K: float
    worst_ratio: float
    family_size: int
    seed: int | None = None
    q_constraints: dict = field(default_factory=dict)

    def rows(self):
        yield ["alpha", self.alpha]
        yield ["beta", self.beta]
        yield ["q_exponent", self.q_exponent]
        yield ["nu", self.nu]
        yield ["fitted_K", self.fitted_K]
        yield ["worst_ratio", self.worst_ratio]
        yield ["family_size", self.family_size]
        yield ["seed", -1 if self.seed is None else self.seed]


def embedding_nu(alpha: float, q: float, beta: float, n: int = 1, l: int = 1, p: float = 2.0) -> float:
    return n / l * (1.0 / p - 1.0 / q) + (alpha + beta) / l


def q_constraints(alpha: float, q: float, n: int = 1, l: int = 1, p: float = 2.0) -> dict:
    """Which printed admissibility windows for ``q`` the chosen value satisfies."""
    upper_embed = n * p / (n - l * p) if n - l * p > 0 else math.inf
    denom = 2 * alpha - 2 + n
    upper_form = 2 * n / denom if denom > 0 else math.inf
    return {
        "embedding_range": bool(p <= q < upper_embed) if n - l * p > 0 else None,
        "embedding_range_degenerate": n - l * p <= 0,
        "bilinear_range": bool(2 < q < upper_form),
        "bilinear_upper": upper_form,
    }


def random_h10_family(grid, size: int, seed: int = 0, modes: int = 8) -> list:
    """Seeded sine series with ``1/k^2`` decay, sampled at the nodes (all vanish at 0 and d)."""
    rng = np.random.default_rng(seed)
    x = grid.nodes / grid.d
    k = np.arange(1, modes + 1)
    basis = np.sin(np.pi * np.outer(x, k))
    return [GridFunction(grid, basis @ (rng.standard_normal(modes) / k**2)) for _ in range(size)]


def _lq(values: np.ndarray, grid, q: float) -> float:
    w = trapezoid_weights(grid)
    return float(np.sum(w * np.abs(values) ** q) ** (1.0 / q))


def embedding_scan(f_family: Sequence[GridFunction], alpha: float, q: float, beta: float,
                   delta_grid: Sequence[float], n: int = 1, seed: int | None = None) -> ScanReport:
    r"""Fit the smallest ``K`` in
    :math:`\|\mathfrak{D}^\alpha f\|_{L_q} \le K\delta^{-\nu}\|f\|_{L_2} + \delta^{1-\nu}|f|_{H^1}`
    over a family of functions and a grid of ``delta``.

    ``worst_ratio`` is the largest ratio of the left side to the fitted right
    side; it equals 1 whenever ``K > 0``.
    """
    alpha = check_order(alpha)
    nu = embedding_nu(alpha, q, beta, n)
    if not 0 < nu < 1:
        raise ConfigError(f"nu = {nu:g} must lie in (0, 1)")
    deltas = np.asarray(list(delta_grid), dtype=float)
    if np.any((deltas <= 0) | (deltas >= 1)):
        raise ConfigError("delta values must lie in (0, 1)")
    spec = KipriyanovSpec(alpha, n)
    samples = []
    for f in f_family:
        nm = norms(f)
        if nm.l2 == 0:
            continue
        Df = kipriyanov_left(f, spec)
        lhs = _lq(np.nan_to_num(Df.values), f.grid, q)
        samples.append((lhs, nm.l2, nm.h1_semi))
    K = 0.0
    for lhs, l2, semi in samples:
        gap = (lhs - deltas ** (1 - nu) * semi) * deltas**nu / l2
        K = max(K, float(gap.max()))
    worst = 0.0
    for lhs, l2, semi in samples:
        bound = K * deltas ** (-nu) * l2 + deltas ** (1 - nu) * semi
        worst = max(worst, float(np.max(lhs / bound)))
    return ScanReport(alpha, beta, q, nu, tuple(deltas), K, worst, len(samples), seed,
                      q_constraints(alpha, q, n))
