r"""Galerkin discretisation of the fractional elliptic problem.

The bilinear form is

.. math::

    B(v, u) = \int a\,v'u'\,dx + \int p\,v\,\mathfrak{D}^\alpha u\,dx ,

where the second term is the right-hand side of the adjoint identity
:math:`(\mathfrak{D}^\alpha_{d-}p\,v, u) = (v, \mathfrak{D}^\alpha u)_{L_2(p)}`.
Rows of every matrix are indexed by test functions, so the discrete problem
``(A + F) z = b`` reads ``B(phi_i, z) = (phi_i, f)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_jacobi, roots_legendre

from fracvar.discretization import (
    CoefficientField,
    GridFunction,
    P1Space,
    build_mesh,
    norms,
    sample,
)
from fracvar.errors import (
    ConsistencyError,
    DomainError,
    EllipticityError,
    SolvabilityError,
)
from fracvar.frac_ops import KipriyanovSpec, check_order, ramp_coefficients

log = logging.getLogger(__name__)

_NQ = 8


@dataclass(frozen=True)
class ProblemSpec:
    """Data of the boundary value problem on ``[0, d]``.

    ``rhs`` is a callable or a :class:`GridFunction` (taken as its P1
    interpolant).
    """

    d: float
    alpha: float
    coeffs: CoefficientField
    rhs: Callable | GridFunction
    n: int = 1

    def __post_init__(self):
        if not self.d > 0:
            raise DomainError(f"domain length must be positive, got {self.d}")
        object.__setattr__(self, "alpha", check_order(self.alpha))
        KipriyanovSpec(self.alpha, self.n)

    @property
    def kipriyanov(self) -> KipriyanovSpec:
        return KipriyanovSpec(self.alpha, self.n)


@dataclass(frozen=True, eq=False)
class AssembledForm:
    """Matrices of the discrete form on the interior degrees of freedom."""

    space: P1Space
    diffusion: np.ndarray
    fractional: np.ndarray
    gram_l2: np.ndarray
    gram_h10: np.ndarray
    gram_weighted: np.ndarray
    bounds: dict = field(default_factory=dict)

    @property
    def system(self) -> np.ndarray:
        return self.diffusion + self.fractional

    def form(self, v: np.ndarray, u: np.ndarray) -> float:
        """``B(v, u)`` for interior coefficient vectors."""
        return v @ self.system @ u


@dataclass(frozen=True)
class LaxMilgramCertificate:
    k1_estimate: float
    k2_estimate: float
    k2_predicted: float
    accretivity_margin: float
    lambda_used: float

    def as_dict(self) -> dict:
        return {
            "k1_estimate": self.k1_estimate,
            "k2_estimate": self.k2_estimate,
            "k2_predicted": self.k2_predicted,
            "accretivity_margin": self.accretivity_margin,
            "lambda_used": self.lambda_used,
        }


@dataclass(frozen=True)
class SolveResult:
    solution: GridFunction
    certificate: LaxMilgramCertificate | None
    residual: float
    scale: float
    form: AssembledForm
    load: np.ndarray


@dataclass(frozen=True)
class RegularityReport:
    h_values: tuple
    quotient_norms: tuple
    bound_reference: float
    ratios: tuple


def assemble_diffusion(space: P1Space, coeffs: CoefficientField) -> np.ndarray:
    """Stiffness matrix of ``a``; raises if ``a`` is not positive at a quadrature point."""
    x = coeffs.sample_points(space.grid)
    amin = float(np.min(sample(coeffs.a, x)))
    if not amin > 0:
        raise EllipticityError(f"a must be positive, found min a = {amin:g}", field="a")
    return space.stiffness(coeffs.a)


def _reference_rules(alpha: float):
    tg, wg = roots_legendre(_NQ)
    tg, wg = 0.5 * (tg + 1.0), 0.5 * wg
    beta = 1.0 - alpha
    tj, wj = roots_jacobi(_NQ, 0.0, beta)
    # weight (1 + x)^beta on [-1, 1] -> t^beta on [0, 1]
    tj, wj = 0.5 * (tj + 1.0), wj / 2.0 ** (beta + 1.0)
    return tg, wg, tj, wj


def fractional_weights(space: P1Space, p: Callable, alpha: float, n: int = 1) -> np.ndarray:
    r"""Table ``W[i, k] = \int p\,\varphi_i\,r^{1-n}\,\Phi_k\,dr`` over all nodes.

    :math:`\Phi_k(r) = D^\alpha_{0+}[t^{n-1}(t - x_k)_+]` is the response to
    a unit ramp starting at node ``k``. On the element starting at ``x_k`` it
    behaves like :math:`(r - x_k)^{1-\alpha}` times a polynomial and is
    integrated by Gauss-Jacobi; on later elements it is smooth and
    Gauss-Legendre is used.
    """
    grid = space.grid
    x, h, N = grid.nodes, grid.spacing, grid.N
    beta = 1.0 - alpha
    tg, wg, tj, wj = _reference_rules(alpha)
    coef = ramp_coefficients(x[:-1], alpha, n)  # (N, n)

    rg = grid.element_points(tg)  # (N, q)
    rj = grid.element_points(tj)
    pg = sample(p, rg) * np.power(rg, 1.0 - n) * wg[None, :] * h[:, None]
    pj = sample(p, rj) * np.power(rj, 1.0 - n) * wj[None, :] * h[:, None] ** (beta + 1.0)

    W = np.zeros((N + 1, N + 1))
    for m in range(N):
        # singular part: ramp starting at the element's own left node
        s = h[m] * tj
        poly = np.polyval(coef[m, ::-1], s)
        W[m, m] += np.sum(pj[m] * (1.0 - tj) * poly)
        W[m + 1, m] += np.sum(pj[m] * tj * poly)
        if m == 0:
            continue
        sk = rg[m][:, None] - x[None, :m]  # (q, m), strictly positive
        polyk = np.zeros_like(sk)
        for q in range(n - 1, -1, -1):
            polyk = polyk * sk + coef[None, :m, q]
        phi = sk**beta * polyk
        W[m, :m] += (pg[m] * (1.0 - tg)) @ phi
        W[m + 1, :m] += (pg[m] * tg) @ phi
    return W


def slope_jumps(space: P1Space) -> np.ndarray:
    """Map from interior coefficients to slope jumps at nodes ``0..N``."""
    grid = space.grid
    N, h = grid.N, grid.spacing
    J = np.zeros((N + 1, N + 1))
    j = np.arange(1, N)
    J[j - 1, j] += 1.0 / h[j - 1]
    J[j, j] -= 1.0 / h[j - 1] + 1.0 / h[j]
    J[j + 1, j] += 1.0 / h[j]
    return J[:, 1:N]


def assemble_fractional(space: P1Space, coeffs: CoefficientField, alpha: float,
                        n: int = 1) -> np.ndarray:
    r"""Matrix ``F[i, j] = \int p\,\varphi_i\,\mathfrak{D}^\alpha\varphi_j\,dr``.

    Interior hats vanish at ``r = 0``, so
    :math:`\mathfrak{D}^\alpha\varphi_j = r^{1-n}\sum_k J_{kj}\Phi_k` with
    ``J`` the slope jumps of the hat.
    """
    alpha = check_order(alpha)
    W = fractional_weights(space, coeffs.p, alpha, n)
    return W[1:-1, :] @ slope_jumps(space)


def assemble(space: P1Space, coeffs: CoefficientField, alpha: float, n: int = 1) -> AssembledForm:
    b = coeffs.validate(space.grid, alpha)
    return AssembledForm(
        space=space,
        diffusion=assemble_diffusion(space, coeffs),
        fractional=assemble_fractional(space, coeffs, alpha, n),
        gram_l2=space.mass(),
        gram_h10=space.h10_gram(),
        gram_weighted=space.mass(coeffs.p),
        bounds=b,
    )


def _sym(M):
    return 0.5 * (M + M.T)


def _min_generalized_eig(S: np.ndarray, G: np.ndarray) -> float:
    try:
        return float(sla.eigh(_sym(S), G, eigvals_only=True, subset_by_index=[0, 0])[0])
    except np.linalg.LinAlgError as exc:
        raise ConsistencyError(f"Gram matrix is not positive definite: {exc}") from exc


def friedrichs_constant(space: P1Space) -> float:
    """Best discrete constant in ``||v||_L2 <= lambda_F ||v'||_L2`` on the P1 space."""
    if space.ndof < 1:
        raise DomainError("need at least one interior degree of freedom")
    mu = _min_generalized_eig(space.stiffness(), space.mass())
    return 1.0 / math.sqrt(mu)


def certify_lax_milgram(form: AssembledForm, lambda_used: float | None = None) -> LaxMilgramCertificate:
    """Discrete boundedness and coercivity constants of ``B`` in the H1 metric.

    ``k1`` is the largest singular value of ``L^-1 (A + F) L^-T`` with
    ``G = L L^T`` the H1 Gram matrix, ``k2`` the smallest generalized
    eigenvalue of the symmetric part of ``A + F`` against ``G``.
    ``k2_predicted = min(a0, p0 / lambda_used**2)``, with ``lambda_used``
    defaulting to the discrete Friedrichs constant.
    """
    if form.space.ndof < 2:
        raise DomainError("certificate needs at least two interior degrees of freedom")
    G = form.gram_h10
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ConsistencyError("H1 Gram matrix is not positive definite") from exc
    S = form.system
    T = sla.solve_triangular(L, sla.solve_triangular(L, S, lower=True).T, lower=True).T
    k1 = float(np.linalg.norm(T, 2))
    k2 = _min_generalized_eig(S, G)
    margin = _min_generalized_eig(form.fractional, form.gram_l2)
    if lambda_used is None:
        lambda_used = friedrichs_constant(form.space)
    a0 = form.bounds.get("a0", math.nan)
    p0 = form.bounds.get("p0", math.nan)
    return LaxMilgramCertificate(
        k1_estimate=k1,
        k2_estimate=k2,
        k2_predicted=min(a0, p0 / lambda_used**2),
        accretivity_margin=margin,
        lambda_used=float(lambda_used),
    )


def load_vector(space: P1Space, f) -> np.ndarray:
    if isinstance(f, GridFunction) and f.grid != space.grid:
        f = f.__call__
    return space.load(f)


def solve_bvp(spec: ProblemSpec, N: int, grading: str = "uniform", certify: bool = True,
              lambda_used: float | None = None) -> SolveResult:
    """Galerkin solution of ``B(phi_i, z) = (phi_i, f)`` for every interior hat."""
    grid = build_mesh(spec.d, N, grading)
    space = P1Space(grid)
    form = assemble(space, spec.coeffs, spec.alpha, spec.n)
    b = load_vector(space, spec.rhs)
    if not np.all(np.isfinite(b)):
        raise DomainError("right-hand side is not square integrable on the grid")
    S = form.system
    lu, piv = sla.lu_factor(S, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * diag.max():
        raise SolvabilityError("discrete system is singular: coercivity is lost")
    z = sla.lu_solve((lu, piv), b)
    r = S @ z - b
    scale = max(float(np.max(np.abs(b))), float(np.max(np.abs(S))) * float(np.max(np.abs(z))), 1e-300)
    residual = float(np.max(np.abs(r)))
    cert = certify_lax_milgram(form, lambda_used) if certify else None
    log.info("solved N=%d residual=%.3e", N, residual)
    return SolveResult(space.to_grid_function(z), cert, residual, scale, form, b)


def galerkin_residual(result: SolveResult) -> float:
    """``max_i |B(phi_i, z) - (phi_i, f)|`` recomputed from the stored form."""
    z = result.form.space.restrict(result.solution)
    return float(np.max(np.abs(result.form.system @ z - result.load)))


def _element_derivative(z: GridFunction) -> np.ndarray:
    return np.diff(z.values) / z.grid.spacing


def h2_probe(z: GridFunction, f: GridFunction, spec: ProblemSpec, h_list: Sequence[float],
             subdomain: tuple = (0.2, 0.8)) -> RegularityReport:
    r"""Difference quotients of the derivative on an interior subdomain.

    For each ``h`` the element-wise derivative ``Dz`` is shifted by ``h``
    (zero outside the interval) and
    :math:`\|\chi\,\Delta^h Dz\|_{L_2}` is measured, with ``chi`` the
    indicator of ``[subdomain[0] d, subdomain[1] d]``. Ratios are taken
    against ``||z||_H1 + ||f||_L2``.
    """
    grid = z.grid
    if not grid.is_uniform:
        raise DomainError("h2_probe needs a uniform grid")
    lo, hi = subdomain[0] * spec.d, subdomain[1] * spec.d
    margin = min(lo, spec.d - hi)
    step = grid.spacing[0]
    dz = _element_derivative(z)
    mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    chi = (mid >= lo) & (mid <= hi)
    hs = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise DomainError("h values must be decreasing")
    out = []
    for h in hs:
        if not margin > 2 * abs(h):
            raise DomainError(f"|h|={abs(h)} violates dist(subdomain, boundary) > 2|h|")
        shift = h / step
        m = int(round(shift))
        if m == 0 or abs(shift - m) > 1e-9:
            raise DomainError(f"h={h} is not a nonzero multiple of the spacing {step}")
        shifted = np.zeros_like(dz)
        if m > 0:
            shifted[:-m] = dz[m:]
        else:
            shifted[-m:] = dz[:m]
        q = (shifted - dz) / h
        out.append(math.sqrt(float(np.sum(grid.spacing[chi] * np.abs(q[chi]) ** 2))))
    ref = norms(z).h1 + norms(f).l2
    ratios = tuple(v / ref if ref > 0 else 0.0 for v in out)
    return RegularityReport(tuple(hs), tuple(out), ref, ratios)


def export_coo(matrix: np.ndarray, path, offset: int = 0):
    """Write the nonzero entries as ``row col value`` lines (17 significant digits)."""
    rows, cols = np.nonzero(matrix)
    with open(path, "w") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i + offset} {j + offset} {matrix[i, j]:.17g}\n")
