"""Fractional derivative operators and a Galerkin solver for elliptic problems
with a fractional lower-order term."""

from fracvar.discretization import (
    CoefficientField,
    DifferenceStep,
    GridFunction,
    P1Space,
    RayGrid,
    build_mesh,
    difference_quotient,
    interpolate,
    norms,
)
from fracvar.errors import (
    ConfigError,
    ConsistencyError,
    ConvergenceError,
    DataError,
    DomainError,
    EllipticityError,
    FracvarError,
    OracleError,
    ParseError,
    SolvabilityError,
)
from fracvar.expr import Expression, parse_expression, to_string
from fracvar.frac_ops import (
    FractionalOrder,
    KipriyanovSpec,
    TruncationEpsilon,
    fractional_integral_right,
    kipriyanov_left,
    marchaud_left,
    marchaud_right,
    marchaud_right_limit,
    marchaud_truncated_right,
    psi_minus,
)
from fracvar.variational import (
    LaxMilgramCertificate,
    ProblemSpec,
    assemble,
    certify_lax_milgram,
    h2_probe,
    solve_bvp,
)

__version__ = "0.1.0"
