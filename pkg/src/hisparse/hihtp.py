"""Hierarchical hard thresholding pursuit (HiHTP).

Each iteration takes a gradient step on ``||y - A x||^2``, projects it onto
hierarchically sparse vectors to pick a support, and re-fits ``x`` by least
squares restricted to that support. Starts from ``x = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NumericalError, StructuralError
from .hierarchy import HierarchicalSupport, HierarchySpec
from .linop import MeasurementOperator
from .projection import project

__all__ = [
    "HihtpOptions",
    "RecoveryResult",
    "LeastSquaresSolution",
    "GuaranteeReport",
    "RIP_THRESHOLD",
    "recover",
    "restricted_least_squares",
    "check_guarantee",
]

# largest factor constant for which the recovery guarantee applies; equals
# the value t with (1 + t)^2 - 1 == 1/sqrt(3)
RIP_THRESHOLD = math.sqrt((math.sqrt(3.0) + 1.0) / math.sqrt(3.0)) - 1.0
COMBINED_THRESHOLD = 1.0 / math.sqrt(3.0)

STALLED = "support-stalled"
CONVERGED = "residual-converged"
MAX_ITER = "max-iterations"


@dataclass(frozen=True)
class HihtpOptions:
    max_iterations: int = 500
    residual_tolerance: float = 1e-10
    support_stall_stop: bool = True
    record_history: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not self.residual_tolerance >= 0:
            raise DomainError("residual_tolerance must be nonnegative")


@dataclass
class RecoveryResult:
    """HiHTP output.

    ``residual_trace[k]`` and ``error_trace[k]`` belong to iterate ``k + 1``;
    the starting point ``x^0 = 0`` is not recorded. ``error_trace`` is only
    filled when the ground truth is passed to ``recover``.
    """

    estimate: np.ndarray
    final_support: HierarchicalSupport
    iterations_run: int
    residual_trace: list[float]
    status: str
    error_trace: list[float] | None = None
    support_history: list[HierarchicalSupport] = field(default_factory=list)
    rank_deficient_iterations: list[int] = field(default_factory=list)


class LeastSquaresSolution(NamedTuple):
    coef: np.ndarray
    rank: int
    rank_deficient: bool


def restricted_least_squares(columns, y) -> LeastSquaresSolution:
    """Minimum-norm minimiser of ``||y - columns @ c||`` (SVD based).

    Rank-deficient systems are solved, not rejected; ``rank_deficient`` says so.
    """
    a = np.asarray(columns, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
        raise StructuralError(f"columns {a.shape} and measurements {b.shape} do not match")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericalError("least-squares inputs contain non-finite values")
    if a.shape[1] == 0:
        return LeastSquaresSolution(np.zeros(0), 0, False)
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    return LeastSquaresSolution(coef, int(rank), int(rank) < a.shape[1])


def recover(
    op: MeasurementOperator,
    y,
    spec: HierarchySpec,
    opts: HihtpOptions | None = None,
    truth=None,
) -> RecoveryResult:
    """Run HiHTP on ``y = op(x) + e`` for hierarchically sparse ``x``.

    Stops at the first iteration whose residual is within tolerance
    (``residual-converged``), else when the support repeats
    (``support-stalled``, if enabled), else after ``max_iterations``.
    """
    opts = opts or HihtpOptions()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != op.output_dim:
        raise StructuralError(f"measurements of shape {y.shape} do not match output_dim {op.output_dim}")
    if op.input_dim != spec.ambient_dim():
        raise StructuralError(
            f"operator input_dim {op.input_dim} != ambient dimension {spec.ambient_dim()}"
        )
    if not np.all(np.isfinite(y)):
        raise NumericalError("measurements contain non-finite values", iteration=0)
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape != (op.input_dim,):
            raise StructuralError("ground truth does not match the operator input dimension")

    x = np.zeros(op.input_dim)
    residual = y.copy()
    support = None
    result = RecoveryResult(x, HierarchicalSupport(), 0, [], MAX_ITER,
                            error_trace=[] if truth is not None else None)

    for k in range(1, opts.max_iterations + 1):
        gradient_step = x + op.adjoint_apply(residual)
        if not np.all(np.isfinite(gradient_step)):
            raise NumericalError(f"non-finite gradient step at iteration {k}", iteration=k)
        proj = project(gradient_step, spec)
        columns = op.extract_columns(proj.positions + 1, budget=None)
        fit = restricted_least_squares(columns, y)
        x = np.zeros(op.input_dim)
        x[proj.positions] = fit.coef
        residual = y - columns @ fit.coef
        res_norm = float(np.linalg.norm(residual))
        if not (np.all(np.isfinite(x)) and math.isfinite(res_norm)):
            raise NumericalError(f"non-finite iterate at iteration {k}", iteration=k)

        result.residual_trace.append(res_norm)
        if truth is not None:
            result.error_trace.append(float(np.linalg.norm(x - truth)))
        if opts.record_history:
            result.support_history.append(proj.support)
        if fit.rank_deficient:
            result.rank_deficient_iterations.append(k)

        stalled = support is not None and proj.support == support
        support = proj.support
        result.iterations_run = k
        if res_norm <= opts.residual_tolerance:
            result.status = CONVERGED
            break
        if opts.support_stall_stop and stalled:
            result.status = STALLED
            break

    result.estimate = x
    result.final_support = support
    return result


@dataclass(frozen=True)
class GuaranteeReport:
    """Recovery-guarantee arithmetic for a pair of factor RIP constants.

    ``rho`` is ``2d / (1 - d^2)`` with ``d = combined_delta``; ``rho_sqrt`` is
    ``sqrt(2 d^2 / (1 - d^2))``, which is below 1 exactly when
    ``d < 1/sqrt(3)``. Both are ``inf`` once ``d >= 1``.
    """

    delta_A: float
    delta_B: float
    combined_delta: float
    rho: float
    rho_sqrt: float
    condition_met: bool

    def to_dict(self) -> dict:
        return {
            "delta_A": self.delta_A,
            "delta_B": self.delta_B,
            "combined_delta": self.combined_delta,
            "rho": self.rho,
            "rho_sqrt": self.rho_sqrt,
            "condition_met": self.condition_met,
        }


def check_guarantee(delta_A_3s: float, delta_B_2sigma: float) -> GuaranteeReport:
    for name, d in (("delta_A_3s", delta_A_3s), ("delta_B_2sigma", delta_B_2sigma)):
        if not 0.0 <= d < 1.0:
            raise DomainError(f"{name}={d} outside [0, 1)")
    a, b = float(delta_A_3s), float(delta_B_2sigma)
    d = a + b + a * b
    if d < 1.0:
        rho = 2.0 * d / (1.0 - d * d)
        rho_sqrt = math.sqrt(2.0 * d * d / (1.0 - d * d))
    else:
        rho = rho_sqrt = math.inf
    met = a <= RIP_THRESHOLD and b <= RIP_THRESHOLD and d < COMBINED_THRESHOLD
    return GuaranteeReport(a, b, d, rho, rho_sqrt, met)
