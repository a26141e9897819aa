"""Isolating signature coefficients from signature-kernel evaluations.

A coefficient ``S(x)^I`` with ``|I| = n`` is recovered by

* restricting the path to the channels of ``I`` (``x^I``),
* taking kernels against a scaled filter path ``beta * lam ⊙ z``,
* applying a finite cross-difference in ``lam`` (kills every level but n
  and every word outside the anagram class of ``I``),
* combining several ``beta`` with Vandermonde weights ``alpha`` so that
  levels ``n+1 .. n+M`` cancel.

The filter decides what survives inside the anagram class: the linear path
keeps the whole class, the axis path keeps ``I`` alone and a block-axis path
keeps concatenations of per-block anagram classes.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.special import ive

from . import budget, oracle
from .paths import (BlockPartition, PathError, PiecewiseLinearPath, block_axis_path, check_index,
                    one_variation, restrict, reverse, scale)
from .pde import DyadicGrid, solve_axis_batch


# -- finite differences --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiniteDifferenceOperator:
    """``D f = sum_k weights[k] * f(nodes[k])`` approximating d^n/dλ_1..dλ_n at 0."""

    nodes: np.ndarray
    weights: np.ndarray
    h: float = 1.0
    kind: str = "custom"

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("one weight per node required")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def forward(cls, n: int, h: float = 1.0) -> "FiniteDifferenceOperator":
        return cls._signed_cube(n, (0.0, h), h, h**n, "forward")

    @classmethod
    def central(cls, n: int, h: float = 1.0) -> "FiniteDifferenceOperator":
        return cls._signed_cube(n, (-h, h), h, (2 * h) ** n, "central")

    @classmethod
    def _signed_cube(cls, n, values, h, norm, kind):
        if n < 1 or h <= 0:
            raise ValueError("need n >= 1 and h > 0")
        nodes = np.array(list(itertools.product(values, repeat=n)))
        signs = (-1.0) ** np.sum(nodes != h, axis=1)
        return cls(nodes, signs / norm, h, kind)

    @classmethod
    def make(cls, kind: str, n: int, h: float = 1.0) -> "FiniteDifferenceOperator":
        if kind == "central":
            return cls.central(n, h)
        if kind == "forward":
            return cls.forward(n, h)
        raise ValueError(f"unknown difference scheme {kind!r}")

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self):
        return self.nodes.shape[0]

    @property
    def c_max(self) -> float:
        return float(np.max(np.abs(self.weights)))

    def node_index(self) -> dict[tuple[float, ...], int]:
        return {tuple(row): k for k, row in enumerate(self.nodes.tolist())}


def apply_fd(fd: FiniteDifferenceOperator, evaluate: Callable[[np.ndarray], float]) -> float:
    return math.fsum(float(c) * float(evaluate(lam)) for c, lam in zip(fd.weights, fd.nodes))


# -- Vandermonde scalings ------------------------------------------------------

@dataclass(frozen=True)
class VandermondeScaling:
    """Weights with ``sum_i alphas[i] * betas[i]**m = [m == n]`` for ``n <= m <= n + M``.

    ``exact_alphas`` solve the system exactly for the (binary) betas; the
    float ``alphas`` are their roundings.  Weights reach ~1e8 for clustered
    betas, where one rounding already costs ~1e-9 in the moments, so sums
    are formed from the exact values.
    """

    n: int
    betas: tuple[float, ...]
    alphas: tuple[float, ...]
    schedule: str = "custom"
    exact_alphas: tuple[Fraction, ...] | None = None

    @property
    def depth(self) -> int:
        return len(self.betas) - 1

    def moments(self, m: int) -> float:
        """``sum_i alpha_i beta_i^m``, evaluated exactly and then rounded."""
        return float(self.weighted_sum([Fraction(b) ** m for b in self.betas]))

    def weighted_sum(self, values) -> Fraction:
        """``sum_i alpha_i values[i]`` in exact arithmetic."""
        alphas = self.exact_alphas or tuple(Fraction(a) for a in self.alphas)
        return sum((a * Fraction(v) for a, v in zip(alphas, values)), Fraction(0))


def beta_schedule(kind: str, n: int, M: int) -> tuple[float, ...]:
    """``uniform``: (i+1)/(M+1); ``nthroot``: ((i+1)/(M+1))**(1/n)."""
    if M < 0:
        raise ValueError("scaling depth M must be >= 0")
    u = [(i + 1) / (M + 1) for i in range(M + 1)]
    if kind == "uniform":
        return tuple(u)
    if kind in ("nthroot", "nth-root-uniform"):
        if n < 1:
            raise ValueError("n must be >= 1")
        return tuple(v ** (1.0 / n) for v in u)
    raise ValueError(f"unknown beta schedule {kind!r}")


def vandermonde_weights(n: int, M: int | None = None, betas: Sequence[float] | None = None,
                        schedule: str = "nthroot") -> VandermondeScaling:
    """Closed-form solution of the generalised Vandermonde system, in exact arithmetic.

    ``alpha_i = (-1)^M / beta_i^n * prod_{j != i} beta_j / (beta_i - beta_j)``
    """
    if betas is None:
        if M is None:
            raise ValueError("give M or betas")
        betas = beta_schedule(schedule, n, M)
    else:
        schedule = "custom"
    betas = tuple(float(b) for b in betas)
    if M is not None and len(betas) != M + 1:
        raise ValueError(f"expected {M + 1} betas, got {len(betas)}")
    if any(b <= 0 for b in betas):
        raise ValueError("betas must be positive")
    if len(set(betas)) != len(betas):
        raise ValueError("betas must be distinct")
    depth = len(betas) - 1
    exact = []
    fb = [Fraction(b) for b in betas]
    for i, bi in enumerate(fb):
        a = Fraction((-1) ** depth) / bi**n
        for j, bj in enumerate(fb):
            if j != i:
                a *= bj / (bi - bj)
        exact.append(a)
    return VandermondeScaling(n, betas, tuple(float(a) for a in exact), schedule, tuple(exact))


# -- plans and results ---------------------------------------------------------

@dataclass(frozen=True)
class ExtractionPlan:
    """Everything that fixes one extraction besides the path and the target.

    ``betas`` overrides the schedule (used to reproduce batch retrievals,
    whose betas come from the longer parent index).
    """

    M: int = 2
    scheme: str = "central"
    h: float = 1.0
    schedule: str = "nthroot"
    grid: DyadicGrid = DyadicGrid()
    subtract_one: bool = True
    retain_grids: bool = False
    backend: str = "kernel"
    betas: tuple[float, ...] | None = None
    reverse: bool = False

    def fd(self, n: int) -> FiniteDifferenceOperator:
        return FiniteDifferenceOperator.make(self.scheme, n, self.h)

    def scaling(self, n: int) -> VandermondeScaling:
        if self.betas is not None:
            return vandermonde_weights(n, betas=self.betas)
        return vandermonde_weights(n, self.M, schedule=self.schedule)


@dataclass(frozen=True, eq=False)
class ExtractionResult:
    """Value of one extraction plus what is needed to recover sub-coefficients.

    ``kernels[i, k]`` is the final kernel value for ``betas[i]`` and node
    ``k``; ``grids[i, k]`` the full grid when it was retained.
    """

    value: float
    index: tuple[int, ...]
    blocks: tuple[int, ...] | None
    plan: ExtractionPlan
    fd: FiniteDifferenceOperator
    scaling: VandermondeScaling
    kernels: np.ndarray | None
    grids: np.ndarray | None = None
    path_length: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.index)

    def kernel_keys(self, prefix_len: int | None = None) -> set[tuple]:
        """Identities ``(beta, node restricted to the first m blocks)`` of stored solves."""
        m = self.n if prefix_len is None else prefix_len
        return {(b, tuple(lam[:m])) for b in self.scaling.betas for lam in self.fd.nodes.tolist()}


def _combine(values: np.ndarray, scaling: VandermondeScaling, fd: FiniteDifferenceOperator,
             subtract_one: bool) -> float:
    """``sum_i alpha_i sum_k C_k (v_ik [- 1])`` with order-independent exact summation."""
    inner = []
    for row in values:
        terms = row - 1.0 if subtract_one else row
        inner.append(math.fsum((fd.weights * terms).tolist()))
    return float(scaling.weighted_sum(inner))


def _multiplicity(index: Sequence[int]) -> int:
    out = 1
    for c in Counter(index).values():
        out *= math.factorial(c)
    return out


def _filtered(x: PiecewiseLinearPath, index: tuple[int, ...], blocks: tuple[int, ...] | None,
              plan: ExtractionPlan) -> ExtractionResult:
    """``sum_i alpha_i D_lam k(x^I, beta_i lam ⊙ z)`` for the (block-)axis filter ``z``."""
    n = len(index)
    fd = plan.fd(n)
    vs = plan.scaling(n)
    if plan.backend == "exact":
        return _filtered_exact(x, index, blocks, plan, fd, vs)
    if plan.backend != "kernel":
        raise ValueError(f"unknown backend {plan.backend!r}")
    orig_index, orig_blocks = index, blocks
    sign = 1.0
    if plan.reverse:
        x, index = reverse(x), index[::-1]
        blocks = None if blocks is None else blocks[::-1]
        sign = (-1.0) ** n
    xI = restrict(x, index)
    betas = np.asarray(vs.betas)
    weights = (betas[:, None, None] * fd.nodes[None, :, :]).reshape(-1, n)
    if plan.retain_grids:
        budget.check("retained grids", weights.shape[0], budget.max_retained_grids())
    out = solve_axis_batch(xI.increments, weights, plan.grid, blocks, retain=plan.retain_grids)
    K = len(fd)
    if plan.retain_grids:
        grids = out.reshape(len(betas), K, *out.shape[1:])
        kernels = grids[:, :, -1, -1].copy()
    else:
        grids, kernels = None, out.reshape(len(betas), K)
    value = sign * _combine(kernels, vs, fd, plan.subtract_one)
    diag = {"kernel_solves": int(weights.shape[0]), "nodes": K,
            "grid_shape": list(plan.grid.shape(x.length, n if blocks is None else len(blocks))),
            "kernel_min": float(kernels.min()), "kernel_max": float(kernels.max())}
    return ExtractionResult(value, orig_index, orig_blocks, plan, fd, vs, kernels, grids, x.length, diag)


def _filtered_exact(x, index, blocks, plan, fd, vs) -> ExtractionResult:
    """Finite difference over truncated kernels at level n: exact, no Vandermonde step."""
    n = len(index)
    xI = oracle.truncated_signature(restrict(x, index), n)
    z = block_axis_path(BlockPartition(_blocks_to_partition(n, blocks)))
    value = apply_fd(fd, lambda lam: xI.inner(oracle.truncated_signature(scale(z, lam), n)))
    return ExtractionResult(value, index, blocks, plan, fd, vs, None, None, x.length,
                            {"kernel_solves": len(fd), "backend": "exact"})


def _blocks_to_partition(n: int, blocks: Sequence[int] | None) -> tuple[tuple[int, ...], ...]:
    sizes = [1] * n if blocks is None else list(blocks)
    out, start = [], 1
    for b in sizes:
        out.append(tuple(range(start, start + b)))
        start += b
    return tuple(out)


# -- public operations ---------------------------------------------------------

def extract(x: PiecewiseLinearPath, index: Sequence[int], plan: ExtractionPlan = ExtractionPlan(),
            blocks: Sequence[int] | None = None) -> ExtractionResult:
    """Raw filtered kernel sum for ``index`` with block sizes ``blocks`` (None = axis filter)."""
    idx = check_index(index, x.dim)
    return _filtered(x, idx, None if blocks is None else tuple(int(b) for b in blocks), plan)


def coefficient(x: PiecewiseLinearPath, index: Sequence[int], plan: ExtractionPlan = ExtractionPlan()) -> float:
    """Approximate ``S(x)^I`` through kernels against the axis path."""
    return extract(x, index, plan).value


def anagram_class(x: PiecewiseLinearPath, index: Sequence[int], plan: ExtractionPlan = ExtractionPlan()) -> float:
    """``S(x)^{P(I)}``: sum over the distinct permutations of ``I``.

    Uses the linear filter ``t -> t(1,..,1)``.  Repeated channels make the
    cross-derivative count each distinct word once per permutation of equal
    entries; that multiplicity is divided out.
    """
    idx = check_index(index, x.dim)
    n = len(idx)
    if plan.backend == "exact":
        fd = plan.fd(n)
        xI = oracle.truncated_signature(restrict(x, idx), n)
        ones = np.ones(n)

        def k_trunc(lam):
            y = PiecewiseLinearPath(np.vstack([np.zeros(n), lam * ones]))
            return xI.inner(oracle.truncated_signature(y, n))

        raw = apply_fd(fd, k_trunc)
    else:
        raw = _filtered(x, idx, (n,), plan).value
    return math.factorial(n) * raw / _multiplicity(idx)


def semiordered(x: PiecewiseLinearPath, partition: BlockPartition,
                plan: ExtractionPlan = ExtractionPlan()) -> float:
    """``S(x)^{P(I_1) * ... * P(I_m)}`` over distinct words, via the block-axis filter."""
    idx = check_index(partition.index, x.dim)
    res = _filtered(x, idx, partition.sizes, plan)
    factor = 1
    for blk in partition.blocks:
        factor *= math.factorial(len(blk))
        factor //= _multiplicity(blk)
    return res.value * factor


def filter_l1_max(fd: FiniteDifferenceOperator, blocks: Sequence[int] | None = None) -> float:
    """``max_node ||node ⊙ z||_1`` for the (block-)axis filter ``z``."""
    groups = _blocks_to_partition(fd.dim, blocks)
    best = 0.0
    for lam in fd.nodes:
        best = max(best, sum(float(np.linalg.norm([lam[p - 1] for p in g])) for g in groups))
    return best


def error_bound(n: int, M: int, var_I: float, fd: FiniteDifferenceOperator | None = None,
                schedule: str = "nthroot", blocks: Sequence[int] | None = None) -> float:
    """Truncation-error bound ``A (M+1)^2 B^M var^(n+M) / ((n+M)!)^2``.

    ``A = n! C_max |Λ| (var l)^n [I0(2 sqrt(var l)) - 1]`` and
    ``B = l / (2^(1/n) - 1)`` with ``l`` the largest 1-variation of a scaled
    filter.  Evaluated in log space; may return ``inf``.  The regularity
    condition on ``x`` under which the bound holds is not checked here.
    """
    if schedule not in ("nthroot", "nth-root-uniform"):
        raise ValueError("the bound assumes the nth-root-uniform beta schedule")
    fd = FiniteDifferenceOperator.central(n) if fd is None else fd
    if var_I <= 0:
        return 0.0
    ell = filter_l1_max(fd, blocks)
    vl = var_I * ell
    arg = 2.0 * math.sqrt(vl)
    # log(I0(arg) - 1), stable for small and large arguments
    i0 = ive(0, arg)
    log_i0m1 = math.log(i0 * math.exp(arg) - 1.0) if arg < 50 else math.log(i0) + arg
    log_A = (math.lgamma(n + 1) + math.log(fd.c_max) + math.log(len(fd)) + n * math.log(vl) + log_i0m1)
    log_B = math.log(ell) - math.log(2.0 ** (1.0 / n) - 1.0)
    log_bound = (log_A + 2 * math.log(M + 1) + M * log_B + (n + M) * math.log(var_I)
                 - 2 * math.lgamma(n + M + 1))
    return math.exp(log_bound) if log_bound < 709 else math.inf


def error_bound_for(x: PiecewiseLinearPath, index: Sequence[int], plan: ExtractionPlan,
                    blocks: Sequence[int] | None = None) -> float:
    n = len(index)
    return error_bound(n, plan.M, one_variation(restrict(x, index)), plan.fd(n), "nthroot", blocks)


# -- batch retrieval -----------------------------------------------------------

def _row_of(result: ExtractionResult, t) -> int:
    rows = result.grids.shape[2]
    if t is None:
        return rows - 1
    if isinstance(t, (int, np.integer)) and not isinstance(t, bool):
        i = int(t)
    else:
        f = float(t) * (rows - 1)
        i = int(round(f))
        if abs(f - i) > 1e-9:
            raise PathError(f"t={t} is not a node of the refined grid")
    if not 0 <= i < rows:
        raise PathError(f"grid row {i} outside 0..{rows - 1}")
    return i


def _subsequence_positions(index: Sequence[int], sub: Sequence[int]) -> tuple[int, ...] | None:
    pos, start = [], 0
    for c in sub:
        for p in range(start, len(index)):
            if index[p] == c:
                pos.append(p)
                start = p + 1
                break
        else:
            return None
    return tuple(pos)


def batch_retrieve(result: ExtractionResult, sub_index: Sequence[int], t=None,
                   positions: Sequence[int] | None = None) -> float:
    """Recover a sub-coefficient from the retained grids of ``result``.

    For a forward plan this is ``S(x)^J`` over ``[0, t]``; for a plan built
    with ``reverse=True`` it is ``S(x)^J`` over ``[1 - t, 1]``.  ``t`` is a
    refined grid node (integer row or float in [0, 1]).

    * central (or any) difference: ``J`` must be a prefix of ``I`` (a suffix
      for reversed plans);
    * forward difference with ``h = 1``: ``J`` may be any subsequence of
      ``I``, matched leftmost unless ``positions`` is given.

    The same betas are reused with alphas re-solved for ``|J|``, so the value
    equals a fresh extraction of ``J`` with ``betas`` fixed to those of the
    parent plan.
    """
    if result.grids is None:
        raise LookupError("grids were not retained; extract with retain_grids=True")
    if result.blocks is not None:
        raise ValueError("batch retrieval is implemented for the axis filter only")
    I = result.index
    J = tuple(int(j) for j in sub_index)
    n, m = len(I), len(J)
    if not 1 <= m <= n:
        raise ValueError("sub-index length must be in 1..|I|")
    plan = result.plan
    # positions in the order the grids were solved in
    I_solved = I[::-1] if plan.reverse else I
    J_solved = J[::-1] if plan.reverse else J
    if positions is None:
        if I_solved[:m] == J_solved:
            pos = tuple(range(m))
        elif plan.scheme == "forward":
            pos = _subsequence_positions(I_solved, J_solved)
            if pos is None:
                raise ValueError(f"{J} is not a subsequence of {I}")
        else:
            what = "suffix" if plan.reverse else "prefix"
            raise ValueError(f"{plan.scheme} difference only retrieves {what}es of the index")
    else:
        pos = tuple(int(p) for p in positions)
        if plan.reverse:
            pos = tuple(n - 1 - p for p in pos[::-1])
        if any(I_solved[p] != c for p, c in zip(pos, J_solved)) or list(pos) != sorted(set(pos)):
            raise ValueError("positions do not select the sub-index")
    contiguous_prefix = pos == tuple(range(m))
    if not contiguous_prefix and not (plan.scheme == "forward" and plan.h == 1.0):
        raise ValueError("arbitrary sub-indices need the forward difference with h = 1")

    sub_fd = FiniteDifferenceOperator.make(plan.scheme, m, plan.h)
    sub_vs = vandermonde_weights(m, betas=result.scaling.betas)
    lookup = result.fd.node_index()
    fill = 0.0 if plan.scheme == "forward" else plan.h
    row = _row_of(result, t)
    col = (pos[-1] + 1) << plan.grid.gamma2
    vals = np.empty((len(sub_vs.betas), len(sub_fd)))
    for k, lam in enumerate(sub_fd.nodes.tolist()):
        full = [fill] * n
        for p, v in zip(pos, lam):
            full[p] = v
        kk = lookup[tuple(full)]
        vals[:, k] = result.grids[:, kk, row, col]
    sign = (-1.0) ** m if plan.reverse else 1.0
    return sign * _combine(vals, sub_vs, sub_fd, plan.subtract_one)


def fresh_equivalent(x: PiecewiseLinearPath, result: ExtractionResult, sub_index: Sequence[int],
                     segments: int | None = None) -> float:
    """What :func:`batch_retrieve` reproduces, computed from scratch.

    ``segments`` restricts to the first (or, for reversed plans, last)
    ``segments`` segments of ``x``.
    """
    y = x
    if segments is not None:
        y = x.segment_slice(x.length - segments, x.length) if result.plan.reverse else x.prefix(segments)
    plan = replace(result.plan, betas=result.scaling.betas, retain_grids=False)
    return coefficient(y, sub_index, plan)
