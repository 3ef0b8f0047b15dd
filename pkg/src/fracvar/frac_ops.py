r"""Fractional integrals and derivatives of grid functions on a ray ``[0, d]``.

All operators act on the piecewise-linear interpolant of the nodal data and
integrate the algebraic kernels exactly against it (product integration).
For a node :math:`r` and an element mapped to :math:`s = |t - r| \in [a, a+w]`
the data bracket is linear in :math:`s`, so each element contributes a
combination of the moments :math:`\int_a^{a+w} s^e\,ds`.

Right-sided operators (integration over :math:`[r, d]`):

* :func:`fractional_integral_right` -- Riemann-Liouville integral
  :math:`I^\alpha_{d-} f(r) = \Gamma(\alpha)^{-1}\int_r^d f(t)(t-r)^{\alpha-1}dt`.
* :func:`psi_minus` and :func:`marchaud_truncated_right` -- the truncated
  Marchaud construction with cut-off :math:`\varepsilon`.
* :func:`marchaud_right` -- the :math:`\varepsilon \to 0` limit.

Left-sided operators (integration over :math:`[0, r]`):

* :func:`kipriyanov_left` -- the directional Kipriyanov derivative with
  radial weight :math:`(t/r)^{n-1}`.
* :func:`marchaud_left_truncated` / :func:`marchaud_left` -- mirror images
  of the right-sided Marchaud construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import binom, gamma as gamma_fn

from fracvar.discretization import GridFunction, RayGrid, trapezoid_weights
from fracvar.errors import ConvergenceError, DomainError

# rows processed per block when forming (node x element) tables
_ROW_BLOCK = 256


def check_order(alpha: float) -> float:
    """Validate a fractional order, which must lie in the open interval (0, 1)."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"fractional order must satisfy 0 < alpha < 1, got {alpha}")
    return alpha


@dataclass(frozen=True)
class FractionalOrder:
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_order(self.alpha))

    def __float__(self):
        return self.alpha


def _alpha(alpha) -> float:
    return check_order(float(alpha))


def gamma_coefficient(n: int, alpha: float) -> float:
    r"""The constant :math:`C^{(\alpha)}_n = (n-1)!/\Gamma(n-\alpha)`."""
    if int(n) != n or n < 1:
        raise DomainError(f"dimension must be an integer >= 1, got {n}")
    alpha = _alpha(alpha)
    n = int(n)
    return math.exp(math.lgamma(n) - math.lgamma(n - alpha))


@dataclass(frozen=True)
class KipriyanovSpec:
    """Order and ambient dimension of a Kipriyanov derivative."""

    alpha: float
    n: int = 1

    def __post_init__(self):
        object.__setattr__(self, "alpha", _alpha(self.alpha))
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"dimension must be an integer >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def c_n_alpha(self) -> float:
        return gamma_coefficient(self.n, self.alpha)


@dataclass(frozen=True)
class TruncationEpsilon:
    """A cut-off ``epsilon`` together with an optional decreasing schedule."""

    epsilon: float
    schedule: tuple = ()

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        s = tuple(float(e) for e in self.schedule)
        if any(e <= 0 for e in s) or any(b >= a for a, b in zip(s, s[1:])):
            raise DomainError("epsilon schedule must be positive and strictly decreasing")
        object.__setattr__(self, "schedule", s)

    def check(self, d: float):
        if not self.epsilon < d:
            raise DomainError(f"epsilon={self.epsilon} must be smaller than d={d}")
        return self


def default_schedule(d: float, kmin: int = 3, kmax: int = 20) -> tuple:
    """Geometric cut-offs ``d * 2**-k`` for ``k = kmin..kmax``."""
    return tuple(d * 2.0 ** (-k) for k in range(kmin, kmax + 1))


def _eps(eps, d: float) -> float:
    if isinstance(eps, TruncationEpsilon):
        return eps.check(d).epsilon
    return TruncationEpsilon(float(eps)).check(d).epsilon


# -- kernel moments ---------------------------------------------------------


def _pdiff(a, w, g):
    """``(a + w)**g - a**g`` for ``a >= 0, w >= 0`` without cancellation."""
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    safe = np.where(a > 0, a, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            a > 0,
            np.power(safe, g) * np.expm1(g * np.log1p(w / safe)),
            np.power(w, g),
        )


def _moment(a, w, e):
    r""":math:`\int_a^{a+w} s^e\,ds` for non-integer ``e`` (``a > 0`` when ``e < -1``)."""
    return _pdiff(a, w, e + 1.0) / (e + 1.0)


def _first_moment(a, w, e):
    r""":math:`\int_a^{a+w} (s - a) s^e\,ds`."""
    return _moment(a, w, e + 1.0) - a * _moment(a, w, e)


def _blocks(n: int, size: int = _ROW_BLOCK):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# -- right-sided operators --------------------------------------------------


def fractional_integral_right(f: GridFunction, alpha: float) -> GridFunction:
    r"""Right-sided Riemann-Liouville integral :math:`I^\alpha_{d-}f` at every node."""
    alpha = _alpha(alpha)
    x = f.grid.nodes
    h = f.grid.spacing
    N = f.grid.N
    fv = f.values
    out = np.zeros(N + 1, dtype=fv.dtype)
    for rows in _blocks(N + 1):
        r = x[rows, None]
        a = x[None, :-1] - r  # element j in s = t - r
        valid = a >= 0
        a = np.where(valid, a, 0.0)
        m0 = _moment(a, h[None, :], alpha - 1.0)
        w_right = _first_moment(a, h[None, :], alpha - 1.0) / h[None, :]
        w_left = m0 - w_right
        contrib = w_left * fv[None, :-1] + w_right * fv[None, 1:]
        out[rows] = np.sum(np.where(valid, contrib, 0.0), axis=1)
    return GridFunction(f.grid, out / math.gamma(alpha))


def _psi_table(f: GridFunction, alpha: float, eps_list: Sequence[float]) -> np.ndarray:
    r"""Values of :math:`\psi^-_\varepsilon f` for several cut-offs at once.

    Returns an array of shape ``(len(eps_list), N + 1)``. The full elements
    beyond the cut-off are summed once per node through reverse cumulative
    sums, so each extra cut-off costs O(N).
    """
    x = f.grid.nodes
    h = f.grid.spacing
    N = f.grid.N
    d = f.grid.d
    fv = f.values
    eps = np.asarray(eps_list, dtype=float)
    slope = np.diff(fv) / h
    out = np.zeros((eps.size, N + 1), dtype=fv.dtype)

    t0 = x[None, :] + eps[:, None]  # lower integration limit per (eps, node)
    k = np.searchsorted(x, t0, side="right") - 1
    k = np.clip(k, np.arange(N + 1)[None, :], N - 1)
    k = np.clip(k, 0, N - 1)
    integral_branch = x[None, :] <= d - eps[:, None]

    for rows in _blocks(N + 1):
        r = x[rows, None]
        idx = np.arange(N + 1)[rows, None]
        a = x[None, :-1] - r
        full = np.arange(N)[None, :] > idx  # elements strictly right of the node's own
        a = np.where(full, a, 1.0)
        k0 = -_pdiff(a, h[None, :], -alpha) / alpha
        k1 = _first_moment(a, h[None, :], -alpha - 1.0)
        contrib = (fv[rows, None] - fv[None, :-1]) * k0 - slope[None, :] * k1
        contrib = np.where(full, contrib, 0.0)
        # tails[i, j] = sum of element contributions j, j+1, ..., N-1
        tails = np.zeros((contrib.shape[0], N + 1), dtype=contrib.dtype)
        tails[:, :-1] = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1]
        kk = k[:, rows]
        out[:, rows] = tails[np.arange(tails.shape[0])[None, :], kk + 1]

    # partial element containing the cut-off
    i = np.arange(N + 1)[None, :]
    xi = x[None, :]
    w = np.maximum(x[k + 1] - t0, 0.0)
    c1 = -slope[k]
    c0 = fv[None, :] - fv[k] + slope[k] * (x[k] - xi)
    c0 = np.where(k == i, 0.0, c0)  # the bracket vanishes at s = 0 on the node's own element
    epsb = np.broadcast_to(eps[:, None], w.shape)
    partial = c0 * (-_pdiff(epsb, w, -alpha) / alpha) + c1 * _moment(epsb, w, -alpha)
    out = out + partial

    # boundary layer branch
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.power(d - xi, -alpha)
        boundary = fv[None, :] / alpha * (np.power(epsb, -alpha) - dist)
    boundary = np.where(fv[None, :] == 0, 0.0, boundary)
    return np.where(integral_branch, out, boundary)


def psi_minus(f: GridFunction, alpha: float, eps) -> GridFunction:
    r"""The family :math:`\psi^-_\varepsilon f`.

    For :math:`r \le d - \varepsilon` (the boundary node included) this is
    :math:`\int_{r+\varepsilon}^d [f(r) - f(t)](t-r)^{-\alpha-1}dt`; closer
    to ``d`` it is :math:`f(r)(\varepsilon^{-\alpha} - (d-r)^{-\alpha})/\alpha`,
    which is infinite at ``r = d`` unless ``f(d) = 0``.
    """
    alpha = _alpha(alpha)
    e = _eps(eps, f.grid.d)
    return GridFunction(f.grid, _psi_table(f, alpha, [e])[0])


def _truncated_table(f: GridFunction, alpha: float, eps_list) -> np.ndarray:
    x = f.grid.nodes
    d = f.grid.d
    eps = np.asarray(eps_list, dtype=float)
    psi = _psi_table(f, alpha, eps)
    g = math.gamma(1.0 - alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        local = f.values[None, :] * np.power(d - x, -alpha)[None, :] / g
        out = local + alpha / g * psi
    # in the boundary layer the (d - r)^-alpha terms cancel algebraically
    layer = x[None, :] > d - eps[:, None]
    return np.where(layer, f.values[None, :] * np.power(eps, -alpha)[:, None] / g, out)


def marchaud_truncated_right(f: GridFunction, alpha: float, eps) -> GridFunction:
    r"""Truncated right-sided Marchaud derivative :math:`\mathfrak{D}^\alpha_{d-,\varepsilon}f`.

    .. math::

        \frac{f(r)(d-r)^{-\alpha}}{\Gamma(1-\alpha)}
        + \frac{\alpha}{\Gamma(1-\alpha)} \psi^-_\varepsilon f(r)

    Inside the layer :math:`d - \varepsilon < r \le d` the expression reduces
    to :math:`f(r)\varepsilon^{-\alpha}/\Gamma(1-\alpha)`, which is also the
    value assigned at ``r = d``.
    """
    alpha = _alpha(alpha)
    e = _eps(eps, f.grid.d)
    return GridFunction(f.grid, _truncated_table(f, alpha, [e])[0])


def limit_weights(grid: RayGrid) -> np.ndarray:
    """Trapezoid weights with the final half-cell at ``r = d`` dropped."""
    w = trapezoid_weights(grid)
    w[-1] = 0.0
    return w


def lp_norm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    return float(np.sum(weights * np.abs(values) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class MarchaudLimit:
    """Outcome of the cut-off limit: the derivative and how it was reached."""

    value: GridFunction
    eps: float
    distance: float
    iterations: int


def marchaud_right_limit(
    f: GridFunction,
    alpha: float,
    p_exponent: float = 2.0,
    tol: float = 1e-10,
    schedule: Iterable[float] | None = None,
    extrapolate: bool = True,
) -> MarchaudLimit:
    r"""Right-sided Marchaud derivative as the :math:`L_p` limit over a cut-off schedule.

    Truncated derivatives are computed along ``schedule`` (default
    ``d * 2**-k, k = 3..20``) until two successive iterates are closer than
    ``tol`` in the discrete :math:`L_p` norm. The last half-cell is excluded
    from that norm.

    Once the cut-off is below the local mesh width the truncated value at an
    interior node is exactly ``A + B * eps**(1 - alpha)`` for P1 data, so with
    ``extrapolate`` each iterate is Richardson-extrapolated in that power,
    which removes the truncation error instead of waiting for it to decay.
    """
    alpha = _alpha(alpha)
    if p_exponent < 1:
        raise DomainError(f"L_p exponent must be >= 1, got {p_exponent}")
    fv = f.values
    scale = float(np.max(np.abs(fv))) if fv.size else 0.0
    if abs(fv[-1]) > 1e-14 * scale and alpha * p_exponent >= 1:
        raise DomainError(
            f"f does not vanish at r=d, so the L_p limit needs alpha*p < 1 "
            f"(alpha={alpha}, p={p_exponent})"
        )
    d = f.grid.d
    eps = np.array(default_schedule(d) if schedule is None else list(schedule), dtype=float)
    TruncationEpsilon(float(eps[0]), tuple(eps)).check(d)

    table = _truncated_table(f, alpha, eps)
    x = f.grid.nodes
    weights = limit_weights(f.grid)
    iterates = table
    if extrapolate:
        iterates = table.copy()
        inside = x[None, :] <= d - eps[:, None]
        for k in range(1, eps.size):
            rho = (eps[k - 1] / eps[k]) ** (1.0 - alpha)
            both = inside[k] & inside[k - 1]
            corr = (table[k] - table[k - 1]) / (rho - 1.0)
            iterates[k] = np.where(both, table[k] + corr, table[k])

    start = 2 if extrapolate else 1
    dist = math.inf
    for k in range(start, eps.size):
        dist = lp_norm(iterates[k] - iterates[k - 1], weights, p_exponent)
        if dist < tol:
            return MarchaudLimit(GridFunction(f.grid, iterates[k]), float(eps[k]), dist, k + 1)
    raise ConvergenceError(
        f"Marchaud limit did not settle: last iterates differ by {dist:.3e} "
        f"(tol {tol:.1e}) at eps={eps[-1]:.3e}",
        distance=dist,
    )


def marchaud_right(f: GridFunction, alpha: float, p_exponent: float = 2.0,
                   tol: float = 1e-10, **kwargs) -> GridFunction:
    """Right-sided Marchaud derivative; see :func:`marchaud_right_limit`."""
    return marchaud_right_limit(f, alpha, p_exponent, tol, **kwargs).value


def _reflect(f: GridFunction) -> GridFunction:
    x = f.grid.nodes
    grid = RayGrid(f.grid.d - x[::-1])
    return GridFunction(grid, f.values[::-1])


def marchaud_left_truncated(f: GridFunction, alpha: float, eps) -> GridFunction:
    """Left-sided truncated Marchaud derivative, the mirror image of the right-sided one."""
    g = marchaud_truncated_right(_reflect(f), alpha, eps)
    return GridFunction(f.grid, g.values[::-1])


def marchaud_left(f: GridFunction, alpha: float, p_exponent: float = 2.0,
                  tol: float = 1e-10, **kwargs) -> GridFunction:
    """Left-sided Marchaud derivative (limit over the mirrored cut-off schedule)."""
    g = marchaud_right_limit(_reflect(f), alpha, p_exponent, tol, **kwargs).value
    return GridFunction(f.grid, g.values[::-1])


# -- left-sided Kipriyanov derivative ---------------------------------------


def kipriyanov_left(f: GridFunction, spec: KipriyanovSpec | float) -> GridFunction:
    r"""Kipriyanov fractional derivative along the ray at every node.

    .. math::

        \mathfrak{D}^\alpha f(r) = \frac{\alpha}{\Gamma(1-\alpha)}
            \int_0^r \frac{f(r) - f(t)}{(r-t)^{\alpha+1}}
            \Big(\frac{t}{r}\Big)^{n-1} dt + C^{(\alpha)}_n f(r) r^{-\alpha}

    The weight is expanded binomially in :math:`s = r - t` so every term is a
    power moment. On the element ending at ``r`` the bracket is
    :math:`O(s)` and only the integrable moments appear.

    At ``r = 0`` the value is 0 when ``f(0) = 0``; otherwise it is NaN and the
    result is flagged ``endpoint_singular``.
    """
    if not isinstance(spec, KipriyanovSpec):
        spec = KipriyanovSpec(spec)
    alpha, n = spec.alpha, spec.n
    x = f.grid.nodes
    h = f.grid.spacing
    N = f.grid.N
    fv = f.values
    slope = np.diff(fv) / h
    out = np.zeros(N + 1, dtype=fv.dtype)
    m = np.arange(n)
    bcoef = binom(n - 1, m) * (-1.0) ** m

    for rows in _blocks(N + 1):
        idx = np.arange(N + 1)[rows, None]
        r = x[rows, None]
        own = np.arange(N)[None, :] == idx - 1
        valid = np.arange(N)[None, :] < idx
        a = np.where(valid, r - x[None, 1:], 1.0)  # s at the element's right node
        a = np.where(own, 0.0, a)
        jump = fv[rows, None] - fv[None, 1:]
        jump = np.where(own, 0.0, jump)
        with np.errstate(divide="ignore", invalid="ignore"):
            rinv = np.where(r > 0, 1.0 / r, 0.0)
        acc = np.zeros(a.shape, dtype=np.result_type(fv, float))
        for mm in m:
            w_m = bcoef[mm] * rinv ** mm
            e = mm - alpha - 1.0
            term = slope[None, :] * _first_moment(a, h[None, :], e)
            g0 = np.where(own, 0.0, _moment(np.where(own, 1.0, a), h[None, :], e))
            term = term + jump * g0
            acc = acc + w_m * term
        out[rows] = np.sum(np.where(valid, acc, 0.0), axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        local = spec.c_n_alpha * fv * np.power(x, -alpha)
    out = alpha / math.gamma(1.0 - alpha) * out + local
    singular = fv[0] != 0
    out[0] = np.nan if singular else 0.0
    return GridFunction(f.grid, out, endpoint_singular=bool(singular))


def ramp_coefficients(xk, alpha: float, n: int) -> np.ndarray:
    r"""Coefficients ``c_q`` with
    :math:`D^\alpha_{0+}[t^{n-1}(t - x_k)_+](r) = (r - x_k)_+^{1-\alpha}\sum_q c_q (r - x_k)^q`.

    ``xk`` may be an array; the result has shape ``xk.shape + (n,)``.
    """
    xk = np.asarray(xk, dtype=float)
    q = np.arange(n)
    c = binom(n - 1, q) * gamma_fn(q + 2.0) / gamma_fn(q + 2.0 - alpha)
    return c * np.power(xk[..., None], (n - 1 - q))


def kipriyanov_p1_eval(f: GridFunction, points, spec: KipriyanovSpec | float) -> np.ndarray:
    r"""Kipriyanov derivative of the P1 interpolant at arbitrary points ``0 < r <= d``.

    Uses the closed form obtained by writing the P1 function as a sum of ramps
    :math:`(t - x_k)_+` and the identity
    :math:`\mathfrak{D}^\alpha u = r^{1-n} D^\alpha_{0+}[t^{n-1}u]`, so it is an
    independent route to the values of :func:`kipriyanov_left`.
    """
    if not isinstance(spec, KipriyanovSpec):
        spec = KipriyanovSpec(spec)
    alpha, n = spec.alpha, spec.n
    r = np.asarray(points, dtype=float)
    x = f.grid.nodes
    fv = f.values
    slope = np.diff(fv) / f.grid.spacing
    jumps = np.diff(np.concatenate([[0.0], slope]))  # slope jump at nodes 0..N-1
    coef = ramp_coefficients(x[:-1], alpha, n)  # (N, n)
    s = r[..., None] - x[:-1]
    pos = s > 0
    sp = np.where(pos, s, 0.0)
    poly = np.zeros_like(sp)
    for q in range(n - 1, -1, -1):
        poly = poly * sp + coef[:, q]
    phi = np.where(pos, sp ** (1.0 - alpha) * poly, 0.0)
    with np.errstate(divide="ignore"):
        out = np.power(r, 1.0 - n) * (phi @ jumps) + fv[0] * spec.c_n_alpha * np.power(r, -alpha)
    return out
