"""Multi-level hierarchical sparsity: level structure, supports, enumeration.

A vector of length ``n_1 * ... * n_L`` is split into ``n_1`` blocks, each of
which is again split into ``n_2`` blocks, and so on. It is hierarchically
``(s_1, ..., s_L)``-sparse when at most ``s_1`` top-level blocks are non-zero
and every such block is ``(s_2, ..., s_L)``-sparse.

All indices exposed by this module are 1-based. The flat position of the leaf
``(i_1, ..., i_L)`` is ``sum_l (i_l - 1) * prod_{k>l} n_k + 1``, i.e. the
row-major (``e_i kron e_j``) vectorisation.

Enumeration order
-----------------
``enumerate_supports`` yields maximal supports (every budget saturated) in a
fixed order. At each level the active index tuple runs over
``itertools.combinations`` in lexicographic order; for a fixed tuple the child
supports run over ``itertools.product`` of the child enumeration, first active
block most significant. ``unrank_support`` and ``support_index_matrix`` follow
the same order, so a rank identifies a support across all three.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Mapping

import numpy as np

from .errors import BudgetExceeded, StructuralError

__all__ = [
    "DEFAULT_ENUMERATION_BUDGET",
    "HierarchySpec",
    "HierarchicalSupport",
    "validate_support",
    "flatten",
    "count_supports",
    "enumerate_supports",
    "unrank_support",
    "support_index_matrix",
    "support_from_indices",
    "chunk_ranges",
]

DEFAULT_ENUMERATION_BUDGET = 10**7


@dataclass(frozen=True)
class HierarchySpec:
    """Block counts ``n_1..n_L`` and per-level sparsities ``s_1..s_L``."""

    block_counts: tuple[int, ...]
    sparsities: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(n) for n in self.block_counts)
        sparsities = tuple(int(s) for s in self.sparsities)
        if len(counts) == 0:
            raise StructuralError("a hierarchy needs at least one level")
        if len(counts) != len(sparsities):
            raise StructuralError(
                f"{len(counts)} block counts but {len(sparsities)} sparsities"
            )
        for level, (n, s) in enumerate(zip(counts, sparsities), start=1):
            if n < 1:
                raise StructuralError(f"level {level}: block count {n} < 1")
            if not 1 <= s <= n:
                raise StructuralError(f"level {level}: sparsity {s} not in [1, {n}]")
        object.__setattr__(self, "block_counts", counts)
        object.__setattr__(self, "sparsities", sparsities)

    @classmethod
    def two_level(cls, N: int, n: int, s: int, sigma: int) -> "HierarchySpec":
        """``N`` blocks of length ``n``, ``s`` active blocks, ``sigma`` entries each."""
        return cls((N, n), (s, sigma))

    @property
    def levels(self) -> int:
        return len(self.block_counts)

    def ambient_dim(self) -> int:
        return math.prod(self.block_counts)

    def total_sparsity(self) -> int:
        return math.prod(self.sparsities)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        """Flat distance between consecutive indices at each level."""
        return tuple(math.prod(self.block_counts[k + 1:]) for k in range(self.levels))

    def tail(self) -> "HierarchySpec":
        """The spec of a single top-level block."""
        if self.levels == 1:
            raise StructuralError("a one-level spec has no tail")
        return HierarchySpec(self.block_counts[1:], self.sparsities[1:])

    def to_dict(self) -> dict:
        return {"block_counts": list(self.block_counts), "sparsities": list(self.sparsities)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "HierarchySpec":
        try:
            return cls(tuple(data["block_counts"]), tuple(data["sparsities"]))
        except KeyError as exc:
            raise StructuralError(f"hierarchy spec is missing {exc}") from None


@dataclass(frozen=True)
class HierarchicalSupport:
    """Nested set of active indices.

    ``children`` holds ``(index, child_support)`` pairs sorted by index; a leaf
    is an empty support. Instances are hashable and compare by value.
    """

    children: tuple[tuple[int, "HierarchicalSupport"], ...] = ()

    def __post_init__(self):
        kids = tuple(sorted(((int(i), c) for i, c in self.children), key=lambda t: t[0]))
        indices = [i for i, _ in kids]
        if len(set(indices)) != len(indices):
            raise StructuralError(f"duplicate active indices {indices}")
        object.__setattr__(self, "children", kids)

    @classmethod
    def from_nested(cls, nested) -> "HierarchicalSupport":
        """Build from ``{1: {1: {}, 3: {}}}``-style nesting.

        Keys may be ints or decimal strings (the JSON form). A set or list of
        indices is accepted as shorthand for a mapping to leaves.
        """
        if isinstance(nested, HierarchicalSupport):
            return nested
        if nested is None:
            return cls()
        if isinstance(nested, Mapping):
            items = nested.items()
        else:
            items = ((i, {}) for i in nested)
        children = []
        for key, value in items:
            try:
                index = int(key)
            except (TypeError, ValueError):
                raise StructuralError(f"support index {key!r} is not an integer") from None
            children.append((index, cls.from_nested(value)))
        return cls(tuple(children))

    def to_nested(self) -> dict:
        return {i: c.to_nested() for i, c in self.children}

    def to_json(self) -> dict:
        """JSON nesting with string keys, e.g. ``{"1": {"1": {}, "3": {}}}``."""
        return {str(i): c.to_json() for i, c in self.children}

    @classmethod
    def from_json(cls, data: Mapping) -> "HierarchicalSupport":
        return cls.from_nested(data)

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.children)

    def is_empty(self) -> bool:
        return not self.children

    def depth(self) -> int:
        """Number of nesting levels actually used (0 for the empty support)."""
        if not self.children:
            return 0
        return 1 + max(c.depth() for _, c in self.children)

    def __len__(self):
        return len(self.children)


def _check_depth(support: HierarchicalSupport, spec: HierarchySpec) -> None:
    if support.depth() > spec.levels:
        raise StructuralError(
            f"support nests {support.depth()} levels but the spec has {spec.levels}"
        )


def _valid(support: HierarchicalSupport, counts, sparsities) -> bool:
    if len(support.children) > sparsities[0]:
        return False
    for index, child in support.children:
        if not 1 <= index <= counts[0]:
            return False
        if len(counts) > 1 and not _valid(child, counts[1:], sparsities[1:]):
            return False
    return True


def validate_support(support: HierarchicalSupport, spec: HierarchySpec) -> bool:
    """True iff every node respects its level's cardinality and index range.

    Raises StructuralError when the support nests deeper than the spec.
    """
    _check_depth(support, spec)
    return _valid(support, spec.block_counts, spec.sparsities)


def _leaves(support: HierarchicalSupport, strides, offset: int, out: list) -> None:
    for index, child in support.children:
        pos = offset + (index - 1) * strides[0]
        if len(strides) == 1:
            out.append(pos)
        else:
            _leaves(child, strides[1:], pos, out)


def flatten(support: HierarchicalSupport, spec: HierarchySpec, base: int = 1) -> tuple[int, ...]:
    """Sorted flat positions of the support's leaves.

    ``base=1`` gives the external 1-based indices, ``base=0`` array positions.
    """
    if not validate_support(support, spec):
        raise StructuralError("support violates the hierarchy spec")
    out: list[int] = []
    _leaves(support, spec.strides, base, out)
    return tuple(out)


def count_supports(spec: HierarchySpec) -> int:
    """Number of maximal hierarchical supports.

    Exact Python integer; there is no overflow, so no saturation flag is needed.
    """
    count = 1
    for n, s in zip(reversed(spec.block_counts), reversed(spec.sparsities)):
        count = math.comb(n, s) * count**s
    return count


def _check_budget(spec: HierarchySpec, budget: int | None) -> int:
    count = count_supports(spec)
    if budget is not None and count > budget:
        raise BudgetExceeded(
            f"{count} hierarchical supports exceed the enumeration budget {budget}",
            count=count,
            budget=budget,
        )
    return count


def _all_supports(counts, sparsities) -> list[HierarchicalSupport]:
    n, s = counts[0], sparsities[0]
    if len(counts) == 1:
        leaf = HierarchicalSupport()
        return [
            HierarchicalSupport(tuple((i, leaf) for i in combo))
            for combo in itertools.combinations(range(1, n + 1), s)
        ]
    kids = _all_supports(counts[1:], sparsities[1:])
    out = []
    for combo in itertools.combinations(range(1, n + 1), s):
        for choice in itertools.product(kids, repeat=s):
            out.append(HierarchicalSupport(tuple(zip(combo, choice))))
    return out


def _iter_supports(counts, sparsities) -> Iterator[HierarchicalSupport]:
    n, s = counts[0], sparsities[0]
    if len(counts) == 1:
        leaf = HierarchicalSupport()
        for combo in itertools.combinations(range(1, n + 1), s):
            yield HierarchicalSupport(tuple((i, leaf) for i in combo))
        return
    kids = _all_supports(counts[1:], sparsities[1:])
    for combo in itertools.combinations(range(1, n + 1), s):
        for choice in itertools.product(kids, repeat=s):
            yield HierarchicalSupport(tuple(zip(combo, choice)))


def enumerate_supports(
    spec: HierarchySpec,
    budget: int | None = DEFAULT_ENUMERATION_BUDGET,
    start: int = 0,
    stop: int | None = None,
) -> Iterator[HierarchicalSupport]:
    """Yield every maximal hierarchical support exactly once.

    ``start``/``stop`` select a contiguous rank range (see ``chunk_ranges``),
    which lets parallel consumers split the work deterministically. The budget
    check is done eagerly, before the first item is produced.
    """
    count = _check_budget(spec, budget)
    stop = count if stop is None else min(stop, count)
    it = _iter_supports(spec.block_counts, spec.sparsities)
    if start > 0 and start < stop:
        # skipping by unranking is cheaper than walking the prefix
        return _from_rank(spec, start, stop)
    return itertools.islice(it, start, stop)


def _from_rank(spec, start, stop):
    for rank in range(start, stop):
        yield unrank_support(spec, rank)


def _unrank_combination(n: int, s: int, rank: int) -> tuple[int, ...]:
    # lexicographic s-subsets of range(n)
    combo = []
    v = 0
    for p in range(s):
        while True:
            block = math.comb(n - 1 - v, s - 1 - p)
            if rank < block:
                break
            rank -= block
            v += 1
        combo.append(v)
        v += 1
    return tuple(combo)


def unrank_support(spec: HierarchySpec, rank: int) -> HierarchicalSupport:
    """The support at position ``rank`` of the enumeration order."""
    count = count_supports(spec)
    if not 0 <= rank < count:
        raise StructuralError(f"rank {rank} outside [0, {count})")
    return _unrank(spec.block_counts, spec.sparsities, rank)


def _unrank(counts, sparsities, rank) -> HierarchicalSupport:
    n, s = counts[0], sparsities[0]
    if len(counts) == 1:
        combo = _unrank_combination(n, s, rank)
        return HierarchicalSupport(tuple((i + 1, HierarchicalSupport()) for i in combo))
    child_count = count_supports(HierarchySpec(counts[1:], sparsities[1:]))
    per_combo = child_count**s
    combo = _unrank_combination(n, s, rank // per_combo)
    rem = rank % per_combo
    digits = []
    for _ in range(s):
        rem, d = divmod(rem, child_count)
        digits.append(d)
    digits.reverse()
    return HierarchicalSupport(
        tuple(
            (i + 1, _unrank(counts[1:], sparsities[1:], d))
            for i, d in zip(combo, digits)
        )
    )


def _combination_matrix(n: int, s: int, ranks: np.ndarray) -> np.ndarray:
    """Vectorised lexicographic unranking of s-subsets of range(n)."""
    cap = np.iinfo(np.int64).max // 4
    table = np.array(
        [[min(math.comb(a, b), cap) for b in range(s + 1)] for a in range(n + 1)],
        dtype=np.int64,
    )
    ranks = np.array(ranks, dtype=np.int64, copy=True)
    out = np.empty((ranks.size, s), dtype=np.int64)
    v = np.zeros(ranks.size, dtype=np.int64)
    for p in range(s):
        while True:
            block = table[np.maximum(n - 1 - v, 0), s - 1 - p]
            step = ranks >= block
            if not step.any():
                break
            ranks[step] -= block[step]
            v[step] += 1
        out[:, p] = v
        v = v + 1
    return out


def support_index_matrix(spec: HierarchySpec, start: int = 0, stop: int | None = None) -> np.ndarray:
    """0-based flat positions of the supports with ranks ``start..stop-1``.

    Returns an int64 array of shape ``(stop - start, total_sparsity)``, rows in
    enumeration order and each row sorted ascending.
    """
    count = count_supports(spec)
    stop = count if stop is None else min(stop, count)
    if not 0 <= start <= stop:
        raise StructuralError(f"bad rank range [{start}, {stop})")
    ranks = np.arange(start, stop, dtype=np.int64)
    return _index_rows(spec.block_counts, spec.sparsities, spec.strides, ranks)


def _index_rows(counts, sparsities, strides, ranks) -> np.ndarray:
    n, s = counts[0], sparsities[0]
    if len(counts) == 1:
        return _combination_matrix(n, s, ranks) * strides[0]
    child_count = count_supports(HierarchySpec(counts[1:], sparsities[1:]))
    per_combo = child_count**s
    combos = _combination_matrix(n, s, ranks // per_combo)
    rem = ranks % per_combo
    digits = np.empty((ranks.size, s), dtype=np.int64)
    for p in range(s - 1, -1, -1):
        digits[:, p] = rem % child_count
        rem = rem // child_count
    child = _index_rows(counts[1:], sparsities[1:], strides[1:], digits.ravel())
    child = child.reshape(ranks.size, s, -1) + (combos * strides[0])[:, :, None]
    return child.reshape(ranks.size, -1)


def support_from_indices(indices, spec: HierarchySpec, base: int = 1) -> HierarchicalSupport:
    """Inverse of ``flatten`` for the leaves listed in ``indices``."""
    d = spec.ambient_dim()
    tree: dict = {}
    for flat in indices:
        pos = int(flat) - base
        if not 0 <= pos < d:
            raise StructuralError(f"flat index {flat} outside the ambient dimension {d}")
        node = tree
        for k in np.unravel_index(pos, spec.block_counts):
            node = node.setdefault(int(k) + 1, {})
    return HierarchicalSupport.from_nested(tree)


def chunk_ranges(count: int, k: int) -> list[tuple[int, int]]:
    """Split ``range(count)`` into ``k`` contiguous, nearly equal pieces."""
    if k < 1:
        raise StructuralError("need at least one chunk")
    bounds = [count * i // k for i in range(k + 1)]
    return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]
