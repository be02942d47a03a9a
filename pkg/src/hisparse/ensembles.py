"""Seeded random matrices, hierarchically sparse signals and noise.

Every draw comes from numpy's Philox generator, a counter-based PRNG, keyed
by a 64-bit seed. Matrices are filled in row-major order, so an
``EnsembleSpec`` pins its matrix bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StructuralError
from .hierarchy import HierarchicalSupport, HierarchySpec, flatten

__all__ = [
    "EnsembleSpec",
    "rng_for",
    "derive_seed",
    "sample_matrix",
    "sample_signal",
    "sample_noise",
]

KINDS = ("gaussian", "rademacher")
MAGNITUDES = ("gaussian", "unit")
_U64 = 2**64


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) % _U64))


def derive_seed(*parts: int) -> int:
    """Deterministically mix integers (base seed, cell, trial, ...) into a u64 seed."""
    state = np.random.SeedSequence([int(p) % _U64 for p in parts]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    rows: int
    cols: int
    seed: int
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if self.rows < 1 or self.cols < 1:
            raise StructuralError("ensemble dimensions must be positive")
        if not 0 <= int(self.seed) < _U64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if self.scale is not None and not self.scale > 0:
            raise DomainError("scale must be positive")

    @property
    def effective_scale(self) -> float:
        # 1/sqrt(rows) makes E||Ax||^2 == ||x||^2
        return 1.0 / math.sqrt(self.rows) if self.scale is None else float(self.scale)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rows": self.rows,
            "cols": self.cols,
            "seed": int(self.seed),
            "scale": self.effective_scale,
        }


def sample_matrix(spec: EnsembleSpec) -> np.ndarray:
    rng = rng_for(spec.seed)
    scale = spec.effective_scale
    if spec.kind == "gaussian":
        m = rng.standard_normal((spec.rows, spec.cols)) * scale
    else:
        m = np.where(rng.integers(0, 2, size=(spec.rows, spec.cols)) == 1, scale, -scale)
    return m


def _random_support(rng, counts, sparsities) -> HierarchicalSupport:
    # independent uniform choices per node give the uniform law on maximal supports
    active = np.sort(rng.choice(counts[0], size=sparsities[0], replace=False)) + 1
    if len(counts) == 1:
        return HierarchicalSupport(tuple((int(i), HierarchicalSupport()) for i in active))
    return HierarchicalSupport(
        tuple((int(i), _random_support(rng, counts[1:], sparsities[1:])) for i in active)
    )


def sample_signal(spec: HierarchySpec, seed: int, magnitude: str = "gaussian"):
    """Unit-norm hierarchically sparse vector on a uniformly random maximal support.

    Returns ``(x, support)``. ``magnitude="unit"`` puts random signs of equal
    modulus on the support, ``"gaussian"`` i.i.d. normals.
    """
    if magnitude not in MAGNITUDES:
        raise DomainError(f"unknown magnitude {magnitude!r}; expected one of {MAGNITUDES}")
    rng = rng_for(seed)
    support = _random_support(rng, spec.block_counts, spec.sparsities)
    positions = np.array(flatten(support, spec, base=0), dtype=np.int64)
    if magnitude == "gaussian":
        values = rng.standard_normal(positions.size)
    else:
        values = np.where(rng.integers(0, 2, size=positions.size) == 1, 1.0, -1.0)
    x = np.zeros(spec.ambient_dim())
    x[positions] = values / np.linalg.norm(values)
    return x, support


def sample_noise(dim: int, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise DomainError("noise level must be nonnegative")
    if sigma == 0:
        return np.zeros(dim)
    return rng_for(seed).standard_normal(dim) * sigma
