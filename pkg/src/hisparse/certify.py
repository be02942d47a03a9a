"""Brute-force RIP / HiRIP constants and the Kronecker composition bounds.

Two norm conventions appear:

* ``rip-squared``: smallest ``d`` with ``(1-d)|x|^2 <= |Ax|^2 <= (1+d)|x|^2``
  on the admissible supports; per support it is ``||A_O^T A_O - I||_2``.
* ``rip-alt``: smallest ``d`` with ``(1-d)|x| <= |Ax| <= (1+d)|x|``; per
  support it is ``max(smax(A_O) - 1, 1 - smin(A_O))``.

``hirip`` is the squared convention restricted to hierarchical supports.

Supports are processed in fixed-size chunks of the enumeration order and
reduced with a max whose ties go to the earliest support, so the result does
not depend on how many worker threads are used.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BudgetExceeded, DomainError, StructuralError
from .hierarchy import (
    DEFAULT_ENUMERATION_BUDGET,
    HierarchicalSupport,
    HierarchySpec,
    count_supports,
    support_from_indices,
    support_index_matrix,
)
from .linop import DEFAULT_MATERIALIZE_BUDGET, KroneckerOperator, MeasurementOperator, as_dense_matrix

log = logging.getLogger(__name__)

__all__ = [
    "RipReport",
    "CostEstimate",
    "JokarMehrmannValues",
    "rip_constant",
    "hirip_constant",
    "hirip_bound_from_factors",
    "certify_kron_power",
    "jokar_mehrmann_values",
    "jokar_mehrmann_check",
    "estimate_cert_cost",
]

CHUNK = 4096
CONVENTIONS = {"rip-squared": "squared", "rip-alt": "non-squared", "hirip": "squared"}


@dataclass
class RipReport:
    kind: str
    sparsity: int | HierarchySpec
    delta: float
    extremal_support: tuple[int, ...] | HierarchicalSupport
    supports_checked: int
    elapsed: float
    details: dict = field(default_factory=dict)

    @property
    def convention(self) -> str:
        return CONVENTIONS[self.kind]

    def to_json(self, include_timing: bool = True) -> dict:
        if isinstance(self.extremal_support, HierarchicalSupport):
            support = self.extremal_support.to_json()
        else:
            support = list(self.extremal_support)
        sparsity = self.sparsity.to_dict() if isinstance(self.sparsity, HierarchySpec) else self.sparsity
        out = {
            "kind": self.kind,
            "sparsity": sparsity,
            "delta": self.delta,
            "extremal_support": support,
            "supports_checked": self.supports_checked,
            "convention": self.convention,
        }
        if include_timing:
            out["elapsed_ms"] = self.elapsed * 1e3
        if self.details:
            out["details"] = self.details
        return out


def _reduce_max(count: int, chunk_fn, threads: int) -> tuple[float, int]:
    ranges = [(a, min(a + CHUNK, count)) for a in range(0, count, CHUNK)]
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: chunk_fn(*r), ranges))
    else:
        parts = [chunk_fn(a, b) for a, b in ranges]
    best, best_rank = -math.inf, -1
    for (a, _), (value, offset) in zip(ranges, parts):
        if value > best:
            best, best_rank = value, a + offset
    return best, best_rank


def _squared_deviation(grams: np.ndarray) -> np.ndarray:
    k = grams.shape[-1]
    eig = np.linalg.eigvalsh(grams - np.eye(k))
    return np.abs(eig).max(axis=-1)


def _alt_deviation(slices: np.ndarray) -> np.ndarray:
    # slices: (batch, m, k)
    sv = np.linalg.svd(slices, compute_uv=False)
    smax = sv[:, 0]
    smin = sv[:, -1] if slices.shape[1] >= slices.shape[2] else np.zeros(len(sv))
    return np.maximum(smax - 1.0, 1.0 - smin)


def _argmax_first(values: np.ndarray) -> tuple[float, int]:
    i = int(np.argmax(values))
    return float(values[i]), i


def rip_constant(
    matrix,
    s: int,
    kind: str = "rip-squared",
    budget: int | None = DEFAULT_ENUMERATION_BUDGET,
    threads: int = 1,
) -> RipReport:
    """RIP constant of order ``s`` by exhaustive search over ``s``-subsets of columns.

    The extremal support is reported as 1-based column indices.
    """
    a = as_dense_matrix(matrix)
    cols = a.shape[1]
    if kind not in ("rip-squared", "rip-alt"):
        raise DomainError(f"unknown RIP kind {kind!r}")
    if not 1 <= s <= cols:
        raise DomainError(f"sparsity {s} outside [1, {cols}]")
    flat = HierarchySpec((cols,), (s,))
    count = math.comb(cols, s)
    if budget is not None and count > budget:
        raise BudgetExceeded(
            f"{count} supports exceed the enumeration budget {budget}", count=count, budget=budget
        )
    start = time.perf_counter()
    if kind == "rip-squared":
        gram = a.T @ a

        def chunk(lo, hi):
            idx = support_index_matrix(flat, lo, hi)
            return _argmax_first(_squared_deviation(gram[idx[:, :, None], idx[:, None, :]]))
    else:

        def chunk(lo, hi):
            idx = support_index_matrix(flat, lo, hi)
            return _argmax_first(_alt_deviation(a[:, idx].transpose(1, 0, 2)))

    delta, rank = _reduce_max(count, chunk, threads)
    support = tuple(int(i) + 1 for i in support_index_matrix(flat, rank, rank + 1)[0])
    return RipReport(kind, s, delta, support, count, time.perf_counter() - start)


def hirip_constant(
    op: MeasurementOperator,
    spec: HierarchySpec,
    budget: int | None = DEFAULT_ENUMERATION_BUDGET,
    threads: int = 1,
) -> RipReport:
    """HiRIP constant: max of ``||A_O^T A_O - I||`` over maximal hierarchical supports.

    Accepts a plain matrix in place of an operator.
    """
    if not isinstance(op, MeasurementOperator):
        from .linop import DenseOperator

        op = DenseOperator(op)
    if op.input_dim != spec.ambient_dim():
        raise StructuralError(
            f"operator input_dim {op.input_dim} != ambient dimension {spec.ambient_dim()}"
        )
    count = count_supports(spec)
    if budget is not None and count > budget:
        raise BudgetExceeded(
            f"{count} hierarchical supports exceed the enumeration budget {budget}",
            count=count,
            budget=budget,
        )
    start = time.perf_counter()

    def chunk(lo, hi):
        idx = support_index_matrix(spec, lo, hi)
        return _argmax_first(_squared_deviation(op.gram_blocks(idx)))

    delta, rank = _reduce_max(count, chunk, threads)
    row = support_index_matrix(spec, rank, rank + 1)[0]
    support = support_from_indices(row, spec, base=0)
    return RipReport("hirip", spec, delta, support, count, time.perf_counter() - start)


def _check_deltas(deltas) -> list[float]:
    out = [float(d) for d in deltas]
    if not out:
        raise DomainError("need at least one factor constant")
    for d in out:
        if not 0.0 <= d < 1.0:
            raise DomainError(f"factor constant {d} outside [0, 1)")
    return out


def hirip_bound_from_factors(factor_deltas: Sequence[float]) -> float:
    """``prod(1 + d_i) - 1``: HiRIP bound of a Kronecker product from factor RIP constants."""
    deltas = _check_deltas(factor_deltas)
    if len(deltas) == 1:
        return deltas[0]
    return math.prod(1.0 + d for d in deltas) - 1.0


def certify_kron_power(
    factor,
    s: int,
    L: int,
    budget: int | None = DEFAULT_ENUMERATION_BUDGET,
    threads: int = 1,
) -> RipReport:
    """Certified HiRIP bound ``(1 + d_s)^L - 1`` for the ``L``-fold Kronecker power.

    Only the factor is searched. The reported extremal support is the
    ``L``-fold nesting of the factor's extremal ``s``-support.
    """
    if L < 1:
        raise DomainError("L must be at least 1")
    base = rip_constant(factor, s, "rip-squared", budget=budget, threads=threads)
    n = as_dense_matrix(factor).shape[1]
    spec = HierarchySpec((n,) * L, (s,) * L)
    if base.delta >= 1.0:
        bound = (1.0 + base.delta) ** L - 1.0
    else:
        bound = hirip_bound_from_factors([base.delta] * L)
    nested = HierarchicalSupport()
    for _ in range(L):
        nested = HierarchicalSupport(tuple((i, nested) for i in base.extremal_support))
    details = {
        "method": "kron-power-bound",
        "levels": L,
        "factor_delta": base.delta,
        "factor_sparsity": s,
        "factor_extremal_support": list(base.extremal_support),
    }
    return RipReport("hirip", spec, bound, nested, base.supports_checked, base.elapsed, details)


class JokarMehrmannValues(NamedTuple):
    lower: float
    middle: float
    upper: float
    holds: bool


def jokar_mehrmann_values(
    factors: Sequence,
    k: int,
    budget: int | None = DEFAULT_ENUMERATION_BUDGET,
    materialize_budget: int | None = DEFAULT_MATERIALIZE_BUDGET,
    threads: int = 1,
    tol: float = 1e-12,
) -> JokarMehrmannValues:
    """``max_l d(A_l) <= d(A_1 kron ... kron A_L) <= prod(1 + d(A_l)) - 1``, all ``rip-alt``.

    The middle term is the unstructured ``k``-sparse constant of the
    materialized Kronecker product. Factors with fewer than ``k`` columns use
    their full column count.
    """
    mats = [as_dense_matrix(f) for f in factors]
    if not mats:
        raise StructuralError("need at least one factor")
    if k < 1:
        raise DomainError("k must be positive")
    factor_deltas = [
        rip_constant(a, min(k, a.shape[1]), "rip-alt", budget=budget, threads=threads).delta
        for a in mats
    ]
    kron = KroneckerOperator(mats).materialize(materialize_budget)
    middle = rip_constant(kron, min(k, kron.shape[1]), "rip-alt", budget=budget, threads=threads).delta
    lower = max(factor_deltas)
    upper = math.prod(1.0 + d for d in factor_deltas) - 1.0
    holds = lower <= middle + tol and middle <= upper + tol
    log.info(
        "sandwich k=%d: lower=%.15g middle=%.15g upper=%.15g holds=%s", k, lower, middle, upper, holds
    )
    return JokarMehrmannValues(lower, middle, upper, holds)


def jokar_mehrmann_check(factors: Sequence, k: int, **kwargs) -> bool:
    return jokar_mehrmann_values(factors, k, **kwargs).holds


@dataclass(frozen=True)
class CostEstimate:
    """Brute-force certification cost.

    ``flop_estimate`` = ``C(n, s) * (s^3 + m s^2) * L``: every support forms an
    ``s x s`` Gram from an ``m x s`` slice and diagonalises it, for each of the
    ``L`` factors. ``power_law_flops`` = ``(n/s)^s s^3`` and
    ``power_law_supports`` = ``(n/s)^s`` are the cruder power-law figures.
    """

    support_count: int
    flop_estimate: float
    formula: str
    power_law_flops: float
    power_law_supports: float

    def to_dict(self) -> dict:
        return {
            "support_count": self.support_count,
            "flop_estimate": self.flop_estimate,
            "formula": self.formula,
            "power_law_flops": self.power_law_flops,
            "power_law_supports": self.power_law_supports,
        }


def estimate_cert_cost(n: int, s: int, L: int = 1, m: int | None = None) -> CostEstimate:
    if not 1 <= s <= n or L < 1:
        raise DomainError("need n >= s >= 1 and L >= 1")
    m = n if m is None else int(m)
    count = math.comb(n, s)
    per_support = s**3 + m * s * s
    flops = float(count) * per_support * L
    formula = f"C({n},{s}) * ({s}^3 + {m}*{s}^2) * {L} = {count} * {per_support} * {L}"
    ratio = n / s
    return CostEstimate(count, flops, formula, ratio**s * s**3, ratio**s)
