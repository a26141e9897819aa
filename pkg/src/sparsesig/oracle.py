"""Exact signature computations through Chen's relation.

Everything here is the reference the kernel-based extraction is checked
against: dense truncated signatures, single coefficients via the prefix
recursion, truncated signature kernels and anagram-class sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import budget
from .paths import PathError, PiecewiseLinearPath, check_index


@dataclass(frozen=True, eq=False)
class TruncatedSignature:
    """Levels ``0..N`` of a signature, level ``k`` stored flat (row-major, d^k entries)."""

    dim: int
    levels: tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def level(self, k: int) -> np.ndarray:
        """Level ``k`` reshaped to ``(d,) * k``."""
        return self.levels[k].reshape((self.dim,) * k)

    def __getitem__(self, index: Sequence[int]) -> float:
        idx = tuple(int(i) for i in index)
        if not idx:
            return float(self.levels[0][0])
        if len(idx) > self.depth:
            raise IndexError(f"word of length {len(idx)} beyond truncation level {self.depth}")
        flat = 0
        for i in idx:
            if not 1 <= i <= self.dim:
                raise IndexError(f"channel {i} out of range 1..{self.dim}")
            flat = flat * self.dim + (i - 1)
        return float(self.levels[len(idx)][flat])

    def __mul__(self, other: "TruncatedSignature") -> "TruncatedSignature":
        return tensor_product(self, other)

    def inner(self, other: "TruncatedSignature", depth: int | None = None) -> float:
        n = min(self.depth, other.depth) if depth is None else depth
        return float(sum(np.dot(self.levels[k], other.levels[k]) for k in range(n + 1)))


def _guard(dim: int, depth: int) -> None:
    total = sum(dim**k for k in range(depth + 1))
    budget.check("truncated signature elements", total, budget.max_tensor_elements())


def tensor_product(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Truncated product in the tensor algebra, depth = min of the two."""
    if a.dim != b.dim:
        raise PathError("dimension mismatch in tensor product")
    n = min(a.depth, b.depth)
    levels = []
    for k in range(n + 1):
        acc = np.zeros(a.dim**k)
        for j in range(k + 1):
            acc += np.multiply.outer(a.levels[j], b.levels[k - j]).reshape(-1)
        levels.append(acc)
    return TruncatedSignature(a.dim, tuple(levels))


def _exp_levels(v: np.ndarray, depth: int) -> list[np.ndarray]:
    out = [np.ones(1)]
    for k in range(1, depth + 1):
        out.append(np.multiply.outer(out[-1], v).reshape(-1) / k)
    return out


def truncated_signature(x: PiecewiseLinearPath, depth: int) -> TruncatedSignature:
    """``exp(Δx_1) ⊗ ... ⊗ exp(Δx_L)`` truncated at ``depth``.  O(L d^depth)."""
    if depth < 0:
        raise ValueError("truncation depth must be >= 0")
    d = x.dim
    _guard(d, depth)
    incs = x.increments
    sig = _exp_levels(incs[0], depth)
    for v in incs[1:]:
        # highest level first so lower levels are still the old ones
        for k in range(depth, 0, -1):
            sig[k] = sig[k] + _tail(sig, v, k)
    return TruncatedSignature(d, tuple(sig))


def _tail(sig: list[np.ndarray], v: np.ndarray, k: int) -> np.ndarray:
    # sum_{j<k} sig[j] ⊗ v^{⊗(k-j)} / (k-j)!, Horner in v
    acc = sig[0] * 1.0
    for j in range(1, k):
        acc = np.multiply.outer(acc, v).reshape(-1) / (k - j + 1) + sig[j]
    return np.multiply.outer(acc, v).reshape(-1)


@dataclass(frozen=True)
class ChenTable:
    """Prefix coefficients ``S(x)^{(i_1..i_m)}_{[0, t_k]}`` for every m and segment end k.

    ``values[k, m]`` holds the prefix of length ``m`` at the end of segment ``k``
    (``k = 0`` is the start of the path, where only ``m = 0`` is non-zero).
    """

    index: tuple[int, ...]
    values: np.ndarray

    def coefficient(self, prefix_len: int | None = None, segment: int | None = None) -> float:
        m = len(self.index) if prefix_len is None else prefix_len
        k = self.values.shape[0] - 1 if segment is None else segment
        return float(self.values[k, m])


def _segment_factors(incs: np.ndarray) -> np.ndarray:
    """``T[s, m, k] = S(segment s)^{(i_{k+1}..i_m)} = prod(a) / (m-k)!`` for k <= m."""
    L, n = incs.shape
    T = np.zeros((L, n + 1, n + 1))
    for k in range(n + 1):
        T[:, k, k] = 1.0
        for m in range(k + 1, n + 1):
            T[:, m, k] = T[:, m - 1, k] * incs[:, m - 1] / (m - k)
    return T


def chen_table(x: PiecewiseLinearPath, index: Sequence[int]) -> ChenTable:
    """Run the prefix recursion and keep every intermediate value.  O(L n^2)."""
    idx = check_index(index, x.dim)
    n = len(idx)
    incs = x.increments[:, [i - 1 for i in idx]]
    T = _segment_factors(incs)
    vals = np.zeros((x.length + 1, n + 1))
    vals[0, 0] = 1.0
    cur = vals[0]
    for s in range(x.length):
        cur = T[s] @ cur
        vals[s + 1] = cur
    return ChenTable(idx, vals)


def coefficient_chen(x: PiecewiseLinearPath, index: Sequence[int], t_end: float | int | None = None) -> float:
    """``S(x)^I`` over ``[0, t_end]``; ``t_end`` must be a segment endpoint ``k/L``.

    An integer ``t_end`` is read as a segment count ``k``.
    """
    table = chen_table(x, index)
    return table.coefficient(segment=_segment_of(x, t_end))


def _segment_of(x: PiecewiseLinearPath, t_end) -> int:
    if t_end is None:
        return x.length
    if isinstance(t_end, (int, np.integer)) and not isinstance(t_end, bool):
        k = int(t_end)
    else:
        k_float = float(t_end) * x.length
        k = int(round(k_float))
        if abs(k_float - k) > 1e-9:
            raise PathError(f"t_end={t_end} is not a segment endpoint of a path with L={x.length}")
    if not 0 <= k <= x.length:
        raise PathError(f"t_end outside [0, 1]")
    return k


def truncated_kernel(x: PiecewiseLinearPath, y: PiecewiseLinearPath, depth: int) -> float:
    """``sum_{k<=depth} <S(x)^(k), S(y)^(k)>`` from two dense truncated signatures."""
    if x.dim != y.dim:
        raise PathError("dimension mismatch")
    return truncated_signature(x, depth).inner(truncated_signature(y, depth))


def multiset_permutations(index: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Distinct permutations of ``index`` in lexicographic order."""
    counts: dict[int, int] = {}
    for i in index:
        counts[i] = counts.get(i, 0) + 1
    keys = sorted(counts)
    n = len(index)
    word: list[int] = []

    def rec():
        if len(word) == n:
            yield tuple(word)
            return
        for c in keys:
            if counts[c]:
                counts[c] -= 1
                word.append(c)
                yield from rec()
                word.pop()
                counts[c] += 1

    yield from rec()


def count_multiset_permutations(index: Sequence[int]) -> int:
    out = math.factorial(len(index))
    for c in set(index):
        out //= math.factorial(list(index).count(c))
    return out


def anagram_sum_oracle(x: PiecewiseLinearPath, index: Sequence[int]) -> float:
    """``sum_{J in P(I)} S(x)^J`` over the distinct permutations of ``I``."""
    idx = check_index(index, x.dim)
    budget.check("anagram permutations", count_multiset_permutations(idx), budget.max_permutations())
    return math.fsum(coefficient_chen(x, J) for J in multiset_permutations(idx))
