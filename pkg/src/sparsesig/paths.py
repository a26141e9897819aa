"""Piecewise-linear paths, multi-indices and the filter paths used for extraction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class PathError(ValueError):
    """Raised for malformed paths, indices or partitions."""


@dataclass(frozen=True, eq=False)
class PiecewiseLinearPath:
    """Linear interpolation of ``L + 1`` points in ``R^d`` on a uniform grid of [0, 1].

    The point array is copied and made read-only on construction.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise PathError(f"points must be 2-D, got shape {pts.shape}")
        if pts.shape[0] < 2:
            raise PathError("a path needs at least two points (L >= 1)")
        if pts.shape[1] < 1:
            raise PathError("a path needs at least one channel (d >= 1)")
        if not np.all(np.isfinite(pts)):
            raise PathError("path coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def length(self) -> int:
        """Number of linear segments L."""
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def increments(self) -> np.ndarray:
        """Segment increments, shape (L, d)."""
        return np.diff(self.points, axis=0)

    def __eq__(self, other):
        if not isinstance(other, PiecewiseLinearPath):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.points.shape, self.points.tobytes()))

    def __repr__(self):
        return f"PiecewiseLinearPath(L={self.length}, d={self.dim})"

    def prefix(self, k: int) -> "PiecewiseLinearPath":
        """The path restricted to its first ``k`` segments, i.e. to [0, k/L]."""
        if not 1 <= k <= self.length:
            raise PathError(f"prefix length {k} outside 1..{self.length}")
        return PiecewiseLinearPath(self.points[: k + 1])

    def segment_slice(self, start: int, stop: int) -> "PiecewiseLinearPath":
        """Segments ``start .. stop-1`` as a stand-alone path."""
        if not 0 <= start < stop <= self.length:
            raise PathError(f"invalid segment range [{start}, {stop})")
        return PiecewiseLinearPath(self.points[start : stop + 1])


def as_path(x) -> PiecewiseLinearPath:
    return x if isinstance(x, PiecewiseLinearPath) else PiecewiseLinearPath(np.asarray(x))


def concatenate(x: PiecewiseLinearPath, y: PiecewiseLinearPath) -> PiecewiseLinearPath:
    """Path concatenation ``x * y``; ``y`` is translated to start where ``x`` ends."""
    if x.dim != y.dim:
        raise PathError("dimension mismatch in concatenation")
    tail = y.points[1:] - y.points[0] + x.points[-1]
    return PiecewiseLinearPath(np.vstack([x.points, tail]))


# -- multi-indices -----------------------------------------------------------

def parse_index(value: str | Sequence[int]) -> tuple[int, ...]:
    """Parse ``"1,2,3"`` (or an int sequence) into a 1-based multi-index."""
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        try:
            idx = tuple(int(p) for p in parts)
        except ValueError as exc:
            raise PathError(f"bad multi-index {value!r}") from exc
    else:
        idx = tuple(int(i) for i in value)
    if not idx:
        raise PathError("multi-index must be non-empty")
    if min(idx) < 1:
        raise PathError(f"multi-index entries are 1-based channels, got {idx}")
    return idx


def check_index(index: Sequence[int], dim: int) -> tuple[int, ...]:
    idx = tuple(int(i) for i in index)
    if not idx:
        raise PathError("multi-index must be non-empty")
    bad = [i for i in idx if not 1 <= i <= dim]
    if bad:
        raise PathError(f"channels {bad} out of range 1..{dim}")
    return idx


@dataclass(frozen=True)
class BlockPartition:
    """Split of a multi-index into consecutive blocks ``I_1 * ... * I_m``."""

    blocks: tuple[tuple[int, ...], ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise PathError("blocks must be non-empty")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "offsets", tuple(np.cumsum([len(b) for b in blocks]).tolist()))

    @classmethod
    def parse(cls, text: str) -> "BlockPartition":
        """``"1,2|3"`` -> blocks ((1, 2), (3,))."""
        return cls(tuple(parse_index(part) for part in text.split("|")))

    @classmethod
    def singletons(cls, index: Sequence[int]) -> "BlockPartition":
        return cls(tuple((i,) for i in index))

    @property
    def index(self) -> tuple[int, ...]:
        return tuple(i for b in self.blocks for i in b)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def block_of_position(self) -> tuple[int, ...]:
        """Block number of every position of the concatenated index."""
        return tuple(k for k, b in enumerate(self.blocks) for _ in b)


# -- path operations ---------------------------------------------------------

def restrict(x: PiecewiseLinearPath, index: Sequence[int]) -> PiecewiseLinearPath:
    """The path ``x^I`` whose k-th channel is channel ``i_k`` of ``x``."""
    idx = check_index(index, x.dim)
    return PiecewiseLinearPath(x.points[:, [i - 1 for i in idx]])


def scale(x: PiecewiseLinearPath, lam) -> PiecewiseLinearPath:
    """Component-wise scaling ``lam ⊙ x``."""
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    if lam.shape[0] != x.dim:
        raise PathError(f"scaling has {lam.shape[0]} entries, path has {x.dim} channels")
    return PiecewiseLinearPath(x.points * lam)


def axis_path(n: int) -> PiecewiseLinearPath:
    """``e_1 * e_2 * ... * e_n``: unit moves along successive axes."""
    if n < 1:
        raise PathError("axis path needs n >= 1")
    pts = np.zeros((n + 1, n))
    for k in range(1, n + 1):
        pts[k, :k] = 1.0
    return PiecewiseLinearPath(pts)


def block_axis_path(partition: BlockPartition) -> PiecewiseLinearPath:
    """One segment per block; segment ``i`` moves by the sum of that block's axes."""
    n = partition.offsets[-1]
    pts = np.zeros((len(partition) + 1, n))
    for k, end in enumerate(partition.offsets, start=1):
        pts[k, :end] = 1.0
    return PiecewiseLinearPath(pts)


def linear_path(increment) -> PiecewiseLinearPath:
    inc = np.asarray(increment, dtype=np.float64).reshape(-1)
    return PiecewiseLinearPath(np.vstack([np.zeros_like(inc), inc]))


def one_variation(x: PiecewiseLinearPath) -> float:
    """Total length of ``x`` with Euclidean segment norms."""
    return float(np.sum(np.linalg.norm(x.increments, axis=1)))


def reverse(x: PiecewiseLinearPath) -> PiecewiseLinearPath:
    return PiecewiseLinearPath(x.points[::-1])


# -- generation and I/O ------------------------------------------------------

def generate_path(kind: str, length: int = 1, dim: int = 1, seed: int | None = 0) -> PiecewiseLinearPath:
    """Deterministic test paths.

    ``random-uniform`` draws ``length + 1`` points i.i.d. on [0, 1]^dim from
    ``numpy.random.default_rng(seed)``; ``axis`` is ``axis_path(dim)``;
    ``linear`` is the single segment from 0 to the all-ones vector split into
    ``length`` equal pieces.
    """
    if length < 1 or dim < 1:
        raise PathError("length and dim must be >= 1")
    if kind == "random-uniform":
        rng = np.random.default_rng(seed)
        return PiecewiseLinearPath(rng.uniform(0.0, 1.0, size=(length + 1, dim)))
    if kind == "axis":
        return axis_path(dim)
    if kind == "linear":
        t = np.linspace(0.0, 1.0, length + 1)
        return PiecewiseLinearPath(np.repeat(t[:, None], dim, axis=1))
    raise PathError(f"unknown path kind {kind!r}")


def read_csv(path: str | Path, header: bool = False) -> PiecewiseLinearPath:
    """One row per time point, one column per channel.

    Errors carry the offending line number.
    """
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise PathError(f"{path}:{lineno}: non-numeric value in {row!r}") from exc
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise PathError(f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise PathError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if len(rows) < 2:
        raise PathError(f"{path}: need at least two rows, got {len(rows)}")
    return PiecewiseLinearPath(np.array(rows))


def write_csv(x: PiecewiseLinearPath, path: str | Path) -> None:
    # repr() round-trips doubles exactly
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in x.points:
            w.writerow([repr(float(v)) for v in row])


def from_json(obj: Iterable) -> PiecewiseLinearPath:
    """Path literal: a list of points, each a list of numbers."""
    return PiecewiseLinearPath(np.asarray(list(obj), dtype=np.float64))
