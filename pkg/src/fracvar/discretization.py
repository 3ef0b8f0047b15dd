r"""Interval meshes, the P1 finite element space, norms and difference quotients.

Every function sampled on a :class:`RayGrid` is understood as its continuous
piecewise-linear interpolant, extended by zero outside :math:`[0, d]`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from fracvar.errors import DataError, DomainError, EllipticityError

# 3-point Gauss-Legendre rule on the reference element [0, 1]
_GAUSS3_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS3_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True, eq=False)
class RayGrid:
    """Strictly increasing nodes ``0 = x_0 < ... < x_N = d`` on a ray segment."""

    nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise DomainError("a grid needs at least two nodes")
        if x[0] != 0.0:
            raise DomainError(f"first node must be 0, got {x[0]}")
        if not np.all(np.diff(x) > 0):
            raise DomainError("grid nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def d(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def is_uniform(self) -> bool:
        h = self.spacing
        return bool(np.allclose(h, h[0], rtol=1e-12, atol=0.0))

    def element_points(self, ref: np.ndarray) -> np.ndarray:
        """Map reference points in [0, 1] onto every element, shape ``(N, len(ref))``."""
        return self.nodes[:-1, None] + self.spacing[:, None] * np.asarray(ref)[None, :]

    def __eq__(self, other):
        return isinstance(other, RayGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal samples of a (real or complex) function on a :class:`RayGrid`.

    ``endpoint_singular`` marks outputs whose value at ``r = 0`` is not finite
    (see :func:`fracvar.frac_ops.kipriyanov_left`).
    """

    grid: RayGrid
    values: np.ndarray
    endpoint_singular: bool = field(default=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.result_type(self.values, float))
        if v.shape != self.grid.nodes.shape:
            raise DomainError(
                f"expected {self.grid.nodes.size} values, got shape {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __add__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c) -> GridFunction:
        return GridFunction(self.grid, c * self.values)

    __rmul__ = __mul__

    def __call__(self, x):
        """Evaluate the zero-extended P1 interpolant at arbitrary points."""
        x = np.asarray(x, dtype=float)
        if np.iscomplexobj(self.values):
            return np.interp(x, self.grid.nodes, self.values.real, 0.0, 0.0) + 1j * np.interp(
                x, self.grid.nodes, self.values.imag, 0.0, 0.0
            )
        return np.interp(x, self.grid.nodes, self.values, left=0.0, right=0.0)


def _check_same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise DomainError("grid functions live on different grids")


class Grading(enum.Enum):
    uniform = "uniform"
    graded = "graded"


def build_mesh(d: float, N: int, grading="uniform", exponent: float = 2.0) -> RayGrid:
    """Build a mesh of ``N`` elements on ``[0, d]``.

    ``grading="graded"`` uses the map ``x_k = d (1 - (1 - k/N)**exponent)``,
    which clusters nodes towards ``r = d``.
    """
    if not d > 0:
        raise DomainError(f"segment length must be positive, got {d}")
    if int(N) != N or N < 2:
        raise DomainError(f"need N >= 2 elements, got {N}")
    N = int(N)
    k = np.arange(N + 1) / N
    grading = Grading(grading)
    if grading is Grading.uniform:
        x = d * k
    else:
        if exponent < 1:
            raise DomainError("grading exponent must be >= 1")
        x = d * (1.0 - (1.0 - k) ** exponent)
    x[0], x[-1] = 0.0, d
    return RayGrid(x)


def interpolate(f: Callable, grid: RayGrid) -> GridFunction:
    """Nodal interpolant of the callable ``f`` (called with the node array)."""
    values = np.asarray(f(grid.nodes))
    values = np.broadcast_to(values, grid.nodes.shape)
    if not np.all(np.isfinite(values)):
        bad = grid.nodes[~np.isfinite(values)]
        raise DataError(f"non-finite samples at x = {bad[:5]}")
    return GridFunction(grid, values)


def sample(fn: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate a coefficient callable, broadcasting constant returns to ``x``."""
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape)


class Norms(NamedTuple):
    l2: float
    h1_semi: float
    h1: float
    weighted_l2: float


def norms(v: GridFunction, p_field: CoefficientField | None = None) -> Norms:
    r"""L2, H1-seminorm, H1 and weighted :math:`L_2(p)` norms of the P1 interpolant.

    The first three are exact for piecewise-linear functions; the weighted norm
    uses 3-point Gauss quadrature per element and falls back to ``l2`` when no
    field is given.
    """
    h = v.grid.spacing
    a, b = v.values[:-1], v.values[1:]
    # exact P1 element integral of |v|^2: h/3 (|a|^2 + Re(a b*) + |b|^2)
    l2_sq = np.sum(h / 3.0 * (abs(a) ** 2 + (a * np.conj(b)).real + abs(b) ** 2))
    semi_sq = np.sum(abs(b - a) ** 2 / h)
    if p_field is None:
        w_sq = l2_sq
    else:
        xq = v.grid.element_points(_GAUSS3_X)
        vq = a[:, None] + (b - a)[:, None] * _GAUSS3_X[None, :]
        pq = sample(p_field.p, xq)
        w_sq = np.sum(h[:, None] * _GAUSS3_W[None, :] * pq * abs(vq) ** 2)
    l2_sq = max(float(l2_sq), 0.0)
    semi_sq = float(semi_sq)
    return Norms(
        l2=math.sqrt(l2_sq),
        h1_semi=math.sqrt(semi_sq),
        h1=math.sqrt(l2_sq + semi_sq),
        weighted_l2=math.sqrt(max(float(w_sq), 0.0)),
    )


@dataclass(frozen=True)
class DifferenceStep:
    """Shift ``h`` of a difference quotient.

    ``support_margin`` optionally records the distance from the support of the
    test function to the boundary; it must exceed ``2|h|``.
    """

    h: float
    support_margin: float | None = None

    def __post_init__(self):
        if self.h == 0 or not math.isfinite(self.h):
            raise DomainError("difference step must be a nonzero finite number")
        if self.support_margin is not None and not self.support_margin > 2 * abs(self.h):
            raise DomainError(
                f"support margin {self.support_margin} must exceed 2|h| = {2 * abs(self.h)}"
            )

    def __neg__(self) -> DifferenceStep:
        return DifferenceStep(-self.h, self.support_margin)


def support_distance(v: GridFunction) -> float:
    """Distance from the closed support of the P1 interpolant to ``{0, d}``.

    Returns ``inf`` for the zero function.
    """
    nz = np.flatnonzero(v.values != 0)
    if nz.size == 0:
        return math.inf
    x = v.grid.nodes
    lo = x[max(nz[0] - 1, 0)]
    hi = x[min(nz[-1] + 1, v.grid.N)]
    return float(min(lo, v.grid.d - hi))


def _shift_indices(grid: RayGrid, h: float) -> np.ndarray:
    """Node index of ``x_i + h`` for every node; -1 means outside ``[0, d]``.

    Raises :class:`DomainError` if some shifted node falls inside the domain
    but not on a node.
    """
    x = grid.nodes
    target = x + h
    tol = 1e-9 * grid.spacing.min()
    inside = (target >= -tol) & (target <= grid.d + tol)
    j = np.clip(np.searchsorted(x, target), 0, grid.N)
    jm = np.clip(j - 1, 0, grid.N)
    j = np.where(np.abs(x[jm] - target) < np.abs(x[j] - target), jm, j)
    aligned = np.abs(x[j] - target) <= tol
    if np.any(inside & ~aligned):
        raise DomainError(
            f"shift h={h} does not map grid nodes onto grid nodes; "
            "pass interpolation=True to evaluate off-grid"
        )
    return np.where(inside, j, -1)


def difference_quotient(
    v: GridFunction, step: DifferenceStep | float, interpolation: bool = False
) -> GridFunction:
    r"""Forward shifted difference :math:`(v(x + h) - v(x)) / h` at every node.

    ``v`` is extended by zero outside the grid. Unless ``interpolation`` is set,
    ``h`` must carry nodes onto nodes (e.g. an integer multiple of a uniform
    spacing).
    """
    if not isinstance(step, DifferenceStep):
        step = DifferenceStep(float(step))
    h = step.h
    if interpolation:
        shifted = v(v.grid.nodes + h)
    else:
        idx = _shift_indices(v.grid, h)
        shifted = np.where(idx >= 0, v.values[np.maximum(idx, 0)], 0)
    return GridFunction(v.grid, (shifted - v.values) / h)


def l2_pairing(u: GridFunction, v: GridFunction) -> complex | float:
    r"""Nodal (lumped) pairing :math:`\sum_i w_i u_i \bar v_i` with trapezoid weights."""
    _check_same_grid(u, v)
    w = trapezoid_weights(u.grid)
    return np.sum(w * u.values * np.conj(v.values))


def trapezoid_weights(grid: RayGrid) -> np.ndarray:
    h = grid.spacing
    w = np.zeros(grid.N + 1)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True)
class CoefficientField:
    r"""Diffusion coefficient ``a`` and fractional weight ``p`` as callables.

    Lower bounds are not stored: they are measured on a concrete grid by
    :meth:`bounds`, on the 3-point Gauss points of every element plus the nodes.
    ``p`` identically zero is accepted so that pure-diffusion control problems
    can be posed; negative values of ``p`` are rejected by :meth:`validate`.
    """

    a: Callable
    p: Callable
    lipschitz_lambda: float = 1.0

    @classmethod
    def constant(cls, a: float = 1.0, p: float = 1.0) -> CoefficientField:
        return cls(a=lambda x: np.full_like(x, a, dtype=float),
                   p=lambda x: np.full_like(x, p, dtype=float))

    def sample_points(self, grid: RayGrid) -> np.ndarray:
        return np.concatenate([grid.nodes, grid.element_points(_GAUSS3_X).ravel()])

    def bounds(self, grid: RayGrid) -> dict:
        """Sampled ``a0 = min a``, ``a_sup = max |a|``, ``p0 = min p``, ``p_sup = max p``."""
        x = self.sample_points(grid)
        av, pv = sample(self.a, x), sample(self.p, x)
        if not (np.all(np.isfinite(av)) and np.all(np.isfinite(pv))):
            raise DataError("coefficient field is not finite on the grid")
        return {
            "a0": float(av.min()),
            "a_sup": float(np.abs(av).max()),
            "p0": float(pv.min()),
            "p_sup": float(pv.max()),
        }

    def holder_quotient(self, grid: RayGrid) -> float:
        r"""Largest sampled :math:`|p(x)-p(y)| / |x-y|^\lambda` over node pairs."""
        x = grid.nodes
        if x.size > 1025:
            x = x[:: int(math.ceil(x.size / 1025))]
        pv = sample(self.p, x)
        dx = np.abs(x[:, None] - x[None, :])
        dp = np.abs(pv[:, None] - pv[None, :])
        mask = dx > 0
        return float(np.max(dp[mask] / dx[mask] ** self.lipschitz_lambda))

    def validate(self, grid: RayGrid, alpha: float | None = None) -> dict:
        """Check ellipticity ``a >= a0 > 0``, ``p >= 0`` and the Hölder exponent of ``p``."""
        b = self.bounds(grid)
        if b["a0"] <= 0:
            raise EllipticityError(f"a is not positive: min a = {b['a0']:g}", field="a")
        if b["p0"] < 0:
            raise EllipticityError(f"p is negative: min p = {b['p0']:g}", field="p")
        if alpha is not None and not self.lipschitz_lambda > alpha:
            raise EllipticityError(
                f"Hölder exponent {self.lipschitz_lambda} of p must exceed alpha={alpha}",
                field="p",
            )
        q = self.holder_quotient(grid)
        # a sampled quotient that blows up with refinement signals a rougher p;
        # on a fixed grid we can only reject non-finite or absurd values
        if not math.isfinite(q) or q > 1e8:
            raise EllipticityError(
                f"p is not Hölder-{self.lipschitz_lambda} on the grid (quotient {q:g})",
                field="p",
            )
        b["holder_quotient"] = q
        return b


class P1Space:
    """Continuous piecewise-linear elements with homogeneous Dirichlet conditions.

    Degrees of freedom are the interior nodes ``1..N-1``; boundary values are
    eliminated rather than penalised.
    """

    def __init__(self, grid: RayGrid):
        if grid.N < 2:
            raise DomainError("P1 space needs at least one interior node")
        self.grid = grid

    @property
    def ndof(self) -> int:
        return self.grid.N - 1

    def to_grid_function(self, coeffs: np.ndarray) -> GridFunction:
        values = np.zeros(self.grid.N + 1, dtype=np.result_type(coeffs, float))
        values[1:-1] = coeffs
        return GridFunction(self.grid, values)

    def restrict(self, v: GridFunction) -> np.ndarray:
        return np.asarray(v.values[1:-1])

    def _assemble_tridiagonal(self, diag_el, off_el) -> np.ndarray:
        """Assemble from per-element local matrices [[d0, o], [o, d1]] (full node set)."""
        N = self.grid.N
        K = np.zeros((N + 1, N + 1))
        d0, d1 = diag_el
        idx = np.arange(N)
        np.add.at(K, (idx, idx), d0)
        np.add.at(K, (idx + 1, idx + 1), d1)
        K[idx, idx + 1] += off_el
        K[idx + 1, idx] += off_el
        return K[1:-1, 1:-1]

    def stiffness(self, a: Callable | None = None) -> np.ndarray:
        r"""Matrix of :math:`\int a\,\varphi_i'\varphi_j'` with 3-point Gauss per element."""
        h = self.grid.spacing
        if a is None:
            abar = np.ones_like(h)
        else:
            abar = sample(a, self.grid.element_points(_GAUSS3_X)) @ _GAUSS3_W
        k = abar / h
        return self._assemble_tridiagonal((k, k), -k)

    def mass(self, p: Callable | None = None) -> np.ndarray:
        r"""Matrix of :math:`\int p\,\varphi_i\varphi_j`; exact for ``p`` of degree <= 3."""
        h = self.grid.spacing
        if p is None:
            return self._assemble_tridiagonal((h / 3, h / 3), h / 6)
        t = _GAUSS3_X
        pq = sample(p, self.grid.element_points(t)) * _GAUSS3_W[None, :] * h[:, None]
        m00 = pq @ ((1 - t) ** 2)
        m11 = pq @ (t**2)
        m01 = pq @ ((1 - t) * t)
        return self._assemble_tridiagonal((m00, m11), m01)

    def h10_gram(self) -> np.ndarray:
        """Gram matrix of the full H1 inner product restricted to interior DOFs."""
        return self.stiffness() + self.mass()

    def load(self, f: Callable | GridFunction) -> np.ndarray:
        r"""Vector :math:`(\varphi_i, f)_{L_2}`.

        A callable is integrated by 3-point Gauss per element; a grid function
        is taken as its P1 interpolant and integrated exactly.
        """
        if isinstance(f, GridFunction):
            N = self.grid.N
            M = self._full_mass()
            return (M @ f.values)[1:N]
        t = _GAUSS3_X
        h = self.grid.spacing
        fq = sample(f, self.grid.element_points(t)) * _GAUSS3_W[None, :] * h[:, None]
        left = fq @ (1 - t)
        right = fq @ t
        b = np.zeros(self.grid.N + 1)
        b[:-1] += left
        b[1:] += right
        return b[1:-1]

    def _full_mass(self) -> np.ndarray:
        N, h = self.grid.N, self.grid.spacing
        M = np.zeros((N + 1, N + 1))
        idx = np.arange(N)
        np.add.at(M, (idx, idx), h / 3)
        np.add.at(M, (idx + 1, idx + 1), h / 3)
        M[idx, idx + 1] += h / 6
        M[idx + 1, idx] += h / 6
        return M
