"""Best hierarchically sparse approximation (hierarchical hard thresholding)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, StructuralError
from .hierarchy import (
    DEFAULT_ENUMERATION_BUDGET,
    HierarchicalSupport,
    HierarchySpec,
    count_supports,
    support_from_indices,
    support_index_matrix,
    _check_budget,
)

__all__ = ["ProjectionResult", "project", "project_bruteforce"]


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of a hierarchical projection.

    ``positions`` are the 0-based flat positions of ``support`` (sorted), kept
    alongside so callers need not flatten the support again.
    """

    support: HierarchicalSupport
    projected: np.ndarray
    captured_energy: float
    positions: np.ndarray


def _checked(x, spec: HierarchySpec) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != spec.ambient_dim():
        raise StructuralError(
            f"vector of shape {v.shape} does not match ambient dimension {spec.ambient_dim()}"
        )
    if not np.all(np.isfinite(v)):
        raise NumericalError("cannot project a vector with non-finite entries")
    return v


def _result(x, positions, spec) -> ProjectionResult:
    projected = np.zeros_like(x)
    projected[positions] = x[positions]
    return ProjectionResult(
        support=support_from_indices(positions, spec, base=0),
        projected=projected,
        captured_energy=float(projected @ projected),
        positions=positions,
    )


def project(x, spec: HierarchySpec) -> ProjectionResult:
    """Exact projection onto hierarchically sparse vectors of ``spec``.

    Works bottom-up: inside every deepest block keep the ``s_L`` largest
    magnitudes; a block's score is the energy it keeps; one level up keep the
    ``s_{L-1}`` best-scoring blocks per parent, and so on. Ties go to the lower
    index (stable sort), so a zero vector maps to the first support in
    enumeration order.
    """
    v = _checked(x, spec)
    counts, sparsities = spec.block_counts, spec.sparsities
    score = (v * v).reshape(counts)
    keep = []
    for level in range(spec.levels - 1, -1, -1):
        n, s = counts[level], sparsities[level]
        rows = score.reshape(-1, n)
        order = np.argsort(-rows, axis=1, kind="stable")[:, :s]
        mask = np.zeros(rows.shape, dtype=bool)
        np.put_along_axis(mask, order, True, axis=1)
        keep.append(mask.reshape(counts[: level + 1]))
        score = np.take_along_axis(rows, order, axis=1).sum(axis=1).reshape(counts[:level])
    leaf = np.ones(counts, dtype=bool)
    for mask in keep:
        leaf &= mask.reshape(mask.shape + (1,) * (spec.levels - mask.ndim))
    return _result(v, np.flatnonzero(leaf.reshape(-1)), spec)


def project_bruteforce(
    x, spec: HierarchySpec, budget: int | None = DEFAULT_ENUMERATION_BUDGET
) -> ProjectionResult:
    """Maximise captured energy by trying every maximal support.

    Testing oracle for ``project``; ties resolve to the earliest support in
    enumeration order.
    """
    v = _checked(x, spec)
    _check_budget(spec, budget)
    rows = support_index_matrix(spec, 0, count_supports(spec))
    energies = (v[rows] ** 2).sum(axis=1)
    best = int(np.argmax(energies))
    return _result(v, rows[best].copy(), spec)
