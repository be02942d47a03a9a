"""Matrix-free measurement operators.

Vectorisation convention: ``vec(E_ij) = e_i kron e_j``, i.e. ``vec(X)`` is
``X.ravel()`` in C order and the flat index of entry ``(i, j)`` of an
``N x n`` matrix is ``i * n + j`` (0-based). Under this convention

    (A kron B) vec(X) == vec(A @ X @ B.T)

which is what ``KroneckerOperator.apply`` computes, one mode at a time.
All operators are real-valued, so the adjoint is the transpose.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BudgetExceeded, NumericalError, StructuralError

__all__ = [
    "DEFAULT_MATERIALIZE_BUDGET",
    "as_dense_matrix",
    "MeasurementOperator",
    "DenseOperator",
    "KroneckerOperator",
    "FlipOperator",
    "apply",
    "adjoint_apply",
    "materialize",
    "extract_columns",
    "read_mat1",
    "write_mat1",
]

DEFAULT_MATERIALIZE_BUDGET = 10**8
DEFAULT_SUPPORT_BUDGET = 10**4


def as_dense_matrix(a) -> np.ndarray:
    """Validate and return a 2-D float64 array with finite entries."""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise StructuralError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix has non-finite entries")
    m.setflags(write=False)
    return m


def _as_vector(x, length: int, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != length:
        raise StructuralError(f"{what} must have length {length}, got shape {v.shape}")
    return v


def _one_based(flat_indices, d: int) -> np.ndarray:
    idx = np.asarray(flat_indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 1 or idx.max() > d):
        raise StructuralError(f"column indices must lie in [1, {d}]")
    return idx - 1


class MeasurementOperator:
    """Base class: a linear map R^input_dim -> R^output_dim.

    Subclasses implement ``_apply``, ``_adjoint`` and ``_columns``; the public
    methods do the dimension checks.
    """

    output_dim: int
    input_dim: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.output_dim, self.input_dim)

    def apply(self, x) -> np.ndarray:
        return self._apply(_as_vector(x, self.input_dim, "input"))

    def adjoint_apply(self, y) -> np.ndarray:
        return self._adjoint(_as_vector(y, self.output_dim, "measurement"))

    def materialize(self, budget: int | None = DEFAULT_MATERIALIZE_BUDGET) -> np.ndarray:
        size = self.output_dim * self.input_dim
        if budget is not None and size > budget:
            raise BudgetExceeded(
                f"materializing {self.output_dim}x{self.input_dim} exceeds budget {budget}",
                count=size,
                budget=budget,
            )
        return self._columns(np.arange(self.input_dim))

    def extract_columns(self, flat_indices, budget: int | None = DEFAULT_SUPPORT_BUDGET) -> np.ndarray:
        """Columns at the given 1-based flat indices, as an ``output_dim x k`` array."""
        idx = _one_based(flat_indices, self.input_dim)
        if budget is not None and idx.size > budget:
            raise BudgetExceeded(
                f"{idx.size} columns exceed the support budget {budget}",
                count=idx.size,
                budget=budget,
            )
        return self._columns(idx)

    def gram_blocks(self, positions: np.ndarray) -> np.ndarray:
        """Gram matrices ``A_O.T @ A_O`` for a batch of supports.

        ``positions`` holds 0-based column positions, shape ``(batch, k)``;
        the result has shape ``(batch, k, k)``.
        """
        gram = self._full_gram()
        return gram[positions[:, :, None], positions[:, None, :]]

    def _full_gram(self) -> np.ndarray:
        cached = getattr(self, "_gram_cache", None)
        if cached is None:
            a = self.materialize()
            cached = a.T @ a
            self._gram_cache = cached
        return cached

    # subclass hooks
    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, y):
        raise NotImplementedError

    def _columns(self, idx):
        raise NotImplementedError


class DenseOperator(MeasurementOperator):
    def __init__(self, matrix):
        self.matrix = as_dense_matrix(matrix)
        self.output_dim, self.input_dim = self.matrix.shape

    def __repr__(self):
        return f"DenseOperator({self.output_dim}x{self.input_dim})"

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.T @ y

    def _columns(self, idx):
        return np.array(self.matrix[:, idx])


class KroneckerOperator(MeasurementOperator):
    """``A_1 kron A_2 kron ... kron A_L`` applied without forming the product."""

    def __init__(self, factors: Sequence):
        if len(factors) == 0:
            raise StructuralError("a Kronecker operator needs at least one factor")
        self.factors = tuple(as_dense_matrix(f) for f in factors)
        self.out_dims = tuple(f.shape[0] for f in self.factors)
        self.in_dims = tuple(f.shape[1] for f in self.factors)
        self.output_dim = math.prod(self.out_dims)
        self.input_dim = math.prod(self.in_dims)
        self._factor_grams = tuple(f.T @ f for f in self.factors)

    def __repr__(self):
        dims = " kron ".join(f"{m}x{n}" for m, n in zip(self.out_dims, self.in_dims))
        return f"KroneckerOperator({dims})"

    @staticmethod
    def _modes(mats, x, dims):
        t = x.reshape(dims)
        for axis, a in enumerate(mats):
            t = np.moveaxis(np.tensordot(a, t, axes=(1, axis)), 0, axis)
        return t.reshape(-1)

    def _apply(self, x):
        return self._modes(self.factors, x, self.in_dims)

    def _adjoint(self, y):
        return self._modes([f.T for f in self.factors], y, self.out_dims)

    def _columns(self, idx):
        multi = np.unravel_index(idx, self.in_dims)
        cols = self.factors[0][:, multi[0]]
        for f, i in zip(self.factors[1:], multi[1:]):
            part = f[:, i]
            cols = (cols[:, None, :] * part[None, :, :]).reshape(-1, idx.size)
        return cols

    def gram_blocks(self, positions):
        # Gram of a Kronecker product is the Kronecker product of the Grams
        multi = np.unravel_index(positions, self.in_dims)
        out = None
        for g, i in zip(self._factor_grams, multi):
            block = g[i[:, :, None], i[:, None, :]]
            out = block if out is None else out * block
        return out


class FlipOperator(MeasurementOperator):
    """Tensor swap ``e_i kron e_j -> e_j kron e_i`` on R^(N*n).

    On vectorised matrices this is the transpose: ``F vec(X) = vec(X.T)``.
    """

    def __init__(self, N: int, n: int):
        if N < 1 or n < 1:
            raise StructuralError("flip dimensions must be positive")
        self.N, self.n = int(N), int(n)
        self.output_dim = self.input_dim = self.N * self.n

    def __repr__(self):
        return f"FlipOperator({self.N}, {self.n})"

    def _apply(self, x):
        return x.reshape(self.N, self.n).T.reshape(-1)

    def _adjoint(self, y):
        return y.reshape(self.n, self.N).T.reshape(-1)

    def _columns(self, idx):
        out = np.zeros((self.output_dim, idx.size))
        i, j = np.divmod(idx, self.n)
        out[j * self.N + i, np.arange(idx.size)] = 1.0
        return out

    def gram_blocks(self, positions):
        k = positions.shape[1]
        return np.broadcast_to(np.eye(k), (positions.shape[0], k, k)).copy()


def apply(op: MeasurementOperator, x) -> np.ndarray:
    return op.apply(x)


def adjoint_apply(op: MeasurementOperator, y) -> np.ndarray:
    return op.adjoint_apply(y)


def materialize(op: MeasurementOperator, budget: int | None = DEFAULT_MATERIALIZE_BUDGET) -> np.ndarray:
    return op.materialize(budget)


def extract_columns(op: MeasurementOperator, flat_indices, budget: int | None = DEFAULT_SUPPORT_BUDGET) -> np.ndarray:
    return op.extract_columns(flat_indices, budget)


def read_mat1(path) -> np.ndarray:
    """Read a MAT1 text matrix: header ``MAT1 <rows> <cols>`` then row-major values."""
    text = Path(path).read_text()
    tokens = text.split()
    if len(tokens) < 3 or tokens[0] != "MAT1":
        raise StructuralError(f"{path}: not a MAT1 file")
    try:
        rows, cols = int(tokens[1]), int(tokens[2])
        values = np.array([float(t) for t in tokens[3:]], dtype=np.float64)
    except ValueError as exc:
        raise StructuralError(f"{path}: {exc}") from None
    if rows < 1 or cols < 1 or values.size != rows * cols:
        raise StructuralError(
            f"{path}: header says {rows}x{cols} but {values.size} values follow"
        )
    return as_dense_matrix(values.reshape(rows, cols))


def write_mat1(path, matrix) -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if m.ndim != 2:
        raise StructuralError("MAT1 holds 2-D data only")
    lines = [f"MAT1 {m.shape[0]} {m.shape[1]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in m)
    Path(path).write_text("\n".join(lines) + "\n")
