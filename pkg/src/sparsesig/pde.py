"""Signature kernels as solutions of the Goursat PDE on a dyadically refined grid.

Two solvers share one compiled stencil: a general one for arbitrary path
pairs (cell factor = inner product of refined increments) and an axis one
where the second path is a (block-)axis filter path, so each cell only needs
the data increment of the channel(s) active in that column block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numba
import numpy as np

from . import _stencil
from .paths import PathError, PiecewiseLinearPath


@dataclass(frozen=True)
class DyadicGrid:
    """Dyadic orders: ``gamma1`` refines the data path, ``gamma2`` the filter path."""

    gamma1: int = 3
    gamma2: int = 3

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("dyadic orders must be >= 0")

    @classmethod
    def uniform(cls, gamma: int) -> "DyadicGrid":
        return cls(gamma, gamma)

    def shape(self, rows_segments: int, cols_segments: int) -> tuple[int, int]:
        return ((rows_segments << self.gamma1) + 1, (cols_segments << self.gamma2) + 1)

    @property
    def cell_scale(self) -> float:
        return 2.0 ** -(self.gamma1 + self.gamma2)


@dataclass(frozen=True, eq=False)
class KernelGrid:
    """A solved kernel grid.

    ``values`` is the full ``(rows, cols)`` array when retention was requested;
    otherwise only the last row is kept.
    """

    final: float
    grid: DyadicGrid
    shape: tuple[int, int]
    values: np.ndarray | None = None
    last_row: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.values, self.last_row):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def retained(self) -> bool:
        return self.values is not None

    def __float__(self):
        return self.final


def grid_value(k: KernelGrid, t_node: int, s_node: int) -> float:
    """Stored value ``k(t_i, s_j)`` at integer grid node ``(i, j)``."""
    R, C = k.shape
    if not (0 <= t_node < R and 0 <= s_node < C):
        raise IndexError(f"node ({t_node}, {s_node}) outside grid {k.shape}")
    if t_node == 0 or s_node == 0:
        return 1.0
    if k.values is not None:
        return float(k.values[t_node, s_node])
    if t_node == R - 1 and k.last_row is not None:
        return float(k.last_row[s_node])
    raise LookupError("grid not retained; solve with retain=True for interior nodes")


# -- threading ---------------------------------------------------------------

def max_threads() -> int:
    return numba.config.NUMBA_NUM_THREADS


def set_threads(n: int | None) -> int:
    """Cap the solver worker pool; ``None`` or 0 means all available threads."""
    n = max_threads() if not n else min(int(n), max_threads())
    numba.set_num_threads(n)
    return n


def get_threads() -> int:
    return numba.get_num_threads()


# -- cell tables ---------------------------------------------------------------

def general_deltas(x: PiecewiseLinearPath, y: PiecewiseLinearPath, grid: DyadicGrid) -> np.ndarray:
    if x.dim != y.dim:
        raise PathError(f"dimension mismatch: {x.dim} vs {y.dim}")
    return (x.increments @ y.increments.T) * grid.cell_scale


def _blocks_of(n: int, blocks: Sequence[int] | None) -> tuple[tuple[int, ...], ...]:
    """Channel positions of each filter segment; ``blocks`` lists block sizes."""
    if blocks is None:
        return tuple((p,) for p in range(n))
    sizes = [int(b) for b in blocks]
    if any(b < 1 for b in sizes) or sum(sizes) != n:
        raise PathError(f"block sizes {sizes} do not partition {n} channels")
    out, start = [], 0
    for b in sizes:
        out.append(tuple(range(start, start + b)))
        start += b
    return tuple(out)


def axis_deltas(incs: np.ndarray, weights: np.ndarray, grid: DyadicGrid,
                blocks: Sequence[int] | None = None) -> np.ndarray:
    """Cell factors for a batch of scaled (block-)axis filters.

    ``incs`` are the segment increments of ``x^I`` (shape ``(L, n)``) and
    ``weights`` the products ``beta * lam`` (shape ``(B, n)``).  The result
    has shape ``(B, L, number of blocks)``.
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    B, n = weights.shape
    if incs.shape[1] != n:
        raise PathError(f"filter has {n} channels, path has {incs.shape[1]}")
    groups = _blocks_of(n, blocks)
    out = np.empty((B, incs.shape[0], len(groups)))
    for c, group in enumerate(groups):
        acc = incs[None, :, group[0]] * weights[:, group[0], None]
        for p in group[1:]:
            acc = acc + incs[None, :, p] * weights[:, p, None]
        out[:, :, c] = acc
    return out * grid.cell_scale


# -- solvers -----------------------------------------------------------------

def _solve(delta: np.ndarray, grid: DyadicGrid, retain: bool, traversal: str) -> tuple:
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    g1, g2 = grid.gamma1, grid.gamma2
    shape = grid.shape(*delta.shape)
    if traversal == "rows":
        if retain:
            vals = _stencil.solve_rows_full(delta, g1, g2)
            return float(vals[-1, -1]), shape, vals, None
        final, row = _stencil.solve_rows_final(delta, g1, g2)
        return float(final), shape, None, row
    if traversal == "wavefront":
        if retain:
            vals = _stencil.solve_wavefront_full(delta, g1, g2)
            return float(vals[-1, -1]), shape, vals, None
        return float(_stencil.solve_wavefront_final(delta, g1, g2)), shape, None, None
    raise ValueError(f"unknown traversal {traversal!r}")


def solve_goursat_general(x: PiecewiseLinearPath, y: PiecewiseLinearPath, grid: DyadicGrid = DyadicGrid(),
                          retain: bool = False, traversal: str = "rows") -> KernelGrid:
    """Signature kernel ``k_{x,y}`` for arbitrary piecewise-linear paths of equal dimension."""
    final, shape, vals, row = _solve(general_deltas(x, y, grid), grid, retain, traversal)
    return KernelGrid(final, grid, shape, vals, row, {"solver": "general"})


def solve_goursat_axis(xI: PiecewiseLinearPath, lam, beta: float = 1.0, grid: DyadicGrid = DyadicGrid(),
                       retain: bool = False, blocks: Sequence[int] | None = None,
                       traversal: str = "rows") -> KernelGrid:
    """Kernel of ``xI`` against the filter ``beta * lam ⊙ z``.

    ``z`` is the axis path ``e_1 * ... * e_n`` or, with ``blocks`` (block
    sizes), the block-axis path with one segment per block.  The scaling is
    applied to cell increments only.
    """
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    w = (float(beta) * lam)[None, :]
    delta = axis_deltas(xI.increments, w, grid, blocks)[0]
    final, shape, vals, row = _solve(delta, grid, retain, traversal)
    meta = {"solver": "axis", "lam": tuple(lam.tolist()), "beta": float(beta),
            "blocks": None if blocks is None else tuple(blocks)}
    return KernelGrid(final, grid, shape, vals, row, meta)


def solve_axis_batch(incs: np.ndarray, weights: np.ndarray, grid: DyadicGrid,
                     blocks: Sequence[int] | None = None, retain: bool = False) -> np.ndarray:
    """Many axis-filter solves at once, parallel across solves.

    Returns final values ``(B,)`` or, with ``retain``, full grids ``(B, rows, cols)``.
    """
    deltas = np.ascontiguousarray(axis_deltas(incs, weights, grid, blocks))
    if retain:
        return _stencil.batch_full(deltas, grid.gamma1, grid.gamma2)
    return _stencil.batch_final(deltas, grid.gamma1, grid.gamma2)
