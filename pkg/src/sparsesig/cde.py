"""Sparse linear CDEs as directed graphs, and their N-step Euler scheme.

A CDE ``dy = sum_i A^i y dx^i`` with binary, maximally sparse, disjoint
``A^i`` is a graph whose edge ``j -> k`` carries channel ``i`` whenever
``A^i[j, k] = 1``; along that edge ``dy^k`` receives ``y^j dx^i``.  The Euler
update adds, for each walk ``j_1 -> ... -> j_m``, the signature coefficient
of the channels along the walk times ``y^{j_1}`` to node ``j_m``.

Walk length counts edges; ``walks(g, N)`` holds the empty walk plus all
walks with 1..N edges.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import budget, oracle
from .extraction import ExtractionPlan, batch_retrieve, extract
from .paths import PathError, PiecewiseLinearPath


class GraphError(ValueError):
    """Base class for an invalid CDE graph."""


class NotMaximallySparse(GraphError):
    """A channel matrix does not have exactly one non-zero entry."""


class NotDisjoint(GraphError):
    """Two channels drive the same ordered node pair."""


class NotBinary(GraphError):
    """A channel matrix has an entry outside {0, 1}."""


Walk = tuple[int, ...]  # node sequence (0-based); () is the empty walk


@dataclass(frozen=True)
class CdeGraph:
    """``edges[i] = (source, target)`` for channel ``i + 1``; nodes are 0-based."""

    m: int
    edges: tuple[tuple[int, int], ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.m < 1:
            raise GraphError("graph needs at least one node")
        seen = {}
        for i, (j, k) in enumerate(self.edges):
            if not (0 <= j < self.m and 0 <= k < self.m):
                raise GraphError(f"edge {i + 1} ({j}->{k}) references a missing node")
            if (j, k) in seen:
                raise NotDisjoint(f"channels {seen[(j, k)] + 1} and {i + 1} both drive {j}->{k}")
            seen[(j, k)] = i

    @property
    def d(self) -> int:
        return len(self.edges)

    def channel(self, j: int, k: int) -> int:
        """1-based channel of edge ``j -> k``."""
        try:
            return self._channel_map[(j, k)]
        except KeyError:
            raise GraphError(f"no edge {j}->{k}") from None

    @property
    def _channel_map(self) -> dict[tuple[int, int], int]:
        cache = self.__dict__.get("_cmap")
        if cache is None:
            cache = {e: i + 1 for i, e in enumerate(self.edges)}
            object.__setattr__(self, "_cmap", cache)
        return cache

    def successors(self, j: int) -> list[int]:
        return [k for (a, k) in self.edges if a == j]

    def max_out_degree(self) -> int:
        deg = [0] * self.m
        for j, _ in self.edges:
            deg[j] += 1
        return max(deg)

    def out_regular(self) -> bool:
        deg = [0] * self.m
        for j, _ in self.edges:
            deg[j] += 1
        return len(set(deg)) == 1

    def matrices(self) -> list[np.ndarray]:
        out = []
        for j, k in self.edges:
            A = np.zeros((self.m, self.m))
            A[j, k] = 1.0
            out.append(A)
        return out


def build_graph(A: Sequence[np.ndarray]) -> CdeGraph:
    """Graph of ``dy = sum_i A^i y dx^i`` after checking the three structural assumptions."""
    mats = [np.asarray(a) for a in A]
    if not mats:
        raise GraphError("at least one channel matrix is required")
    m = mats[0].shape[0]
    edges = []
    owner: dict[tuple[int, int], int] = {}
    for i, a in enumerate(mats, start=1):
        if a.shape != (m, m):
            raise GraphError(f"A^{i} has shape {a.shape}, expected {(m, m)}")
        if not np.all((a == 0) | (a == 1)):
            raise NotBinary(f"A^{i} has entries outside {{0, 1}}")
        nz = np.argwhere(a != 0)
        if len(nz) != 1:
            raise NotMaximallySparse(f"A^{i} has {len(nz)} non-zero entries, expected exactly 1")
        j, k = (int(v) for v in nz[0])
        if (j, k) in owner:
            raise NotDisjoint(f"A^{owner[(j, k)]} and A^{i} share entry ({j + 1}, {k + 1})")
        owner[(j, k)] = i
        edges.append((j, k))
    return CdeGraph(m, tuple(edges))


# -- walks -------------------------------------------------------------------

def walks(g: CdeGraph, N: int) -> list[Walk]:
    """Empty walk, then walks with 1..N edges grouped by length, lexicographic within."""
    if N < 1:
        raise ValueError("N must be >= 1")
    succ = [sorted(g.successors(j)) for j in range(g.m)]
    out: list[Walk] = [()]
    layer = [(j,) for j in range(g.m)]
    for _ in range(N):
        layer = [w + (k,) for w in layer for k in succ[w[-1]]]
        budget.check("walks", len(out) + len(layer), budget.max_walks())
        out.extend(layer)
    return out


def count_walks(g: CdeGraph, N: int) -> int:
    """``|walks(g, N)|`` by dynamic programming, without enumeration."""
    ends = [1] * g.m  # walks with k edges ending at each node
    total = 1
    for _ in range(N):
        nxt = [0] * g.m
        for j, k in g.edges:
            nxt[k] += ends[j]
        ends = nxt
        total += sum(ends)
    return total


def walk_count_bound(g: CdeGraph, N: int) -> float:
    """Upper bound ``|walks| - 1 + m <= m (D^{N+1} - 1) / (D - 1)`` with ``D`` the max out-degree.

    The left side counts single-node walks in place of the empty walk; equality
    holds for out-degree-regular graphs.
    """
    D = g.max_out_degree()
    if D == 1:
        return float(g.m * (N + 1))
    return g.m * (D ** (N + 1) - 1) / (D - 1)


def flow(g: CdeGraph, w: Walk) -> tuple[int, ...]:
    """Channel word read along the edges of a non-empty walk."""
    if len(w) < 2:
        raise GraphError("flow needs a walk with at least one edge")
    return tuple(g.channel(a, b) for a, b in zip(w[:-1], w[1:]))


def sparsity(g: CdeGraph, N: int) -> float:
    """Walk count over the size of the level-0..N signature, ``(d-1)/(d^{N+1}-1) * |walks|``."""
    if g.d < 2:
        raise GraphError("sparsity needs at least two channels")
    return (g.d - 1) * count_walks(g, N) / (g.d ** (N + 1) - 1)


# -- Euler scheme -------------------------------------------------------------

@dataclass(frozen=True)
class EulerState:
    y: np.ndarray
    t: float

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(y)):
            raise ValueError("state has non-finite entries")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)


def _maximal_walks(g: CdeGraph, N: int) -> list[Walk]:
    """Walks that are not a proper prefix of another walk with at most N edges, longest first."""
    out = [w for w in walks(g, N)[1:] if len(w) - 1 == N or not g.successors(w[-1])]
    return sorted(out, key=len, reverse=True)


def _step_coefficients(g: CdeGraph, seg: PiecewiseLinearPath, N: int, backend: str,
                       plan: ExtractionPlan) -> dict[tuple[int, ...], float]:
    """Coefficient of every walk word, computed longest-first and read off by prefix."""
    coeffs: dict[tuple[int, ...], float] = {}
    for w in _maximal_walks(g, N):
        word = flow(g, w)
        missing = [m for m in range(1, len(word) + 1) if word[:m] not in coeffs]
        if not missing:
            continue
        if backend == "chen":
            table = oracle.chen_table(seg, word)
            for m in missing:
                coeffs[word[:m]] = table.coefficient(prefix_len=m)
        elif backend == "kernel":
            res = extract(seg, word, plan)
            for m in missing:
                coeffs[word[:m]] = res.value if m == len(word) else batch_retrieve(res, word[:m])
        else:
            raise ValueError(f"unknown backend {backend!r}")
    return coeffs


def default_step_plan() -> ExtractionPlan:
    return ExtractionPlan(M=3, scheme="central", retain_grids=True)


def euler_step(g: CdeGraph, x: PiecewiseLinearPath, state: EulerState, t_next: float, N: int,
               backend: str = "chen", plan: ExtractionPlan | None = None) -> EulerState:
    """One N-step Euler update of ``state`` from ``state.t`` to ``t_next``.

    ``x`` is the driver on [0, 1] with channel ``i`` in column ``i - 1``; both
    times must be segment endpoints ``k / L``.  ``backend`` is ``"chen"`` or
    ``"kernel"``.
    """
    if x.dim != g.d:
        raise PathError(f"driver has {x.dim} channels, graph has {g.d}")
    if len(state.y) != g.m:
        raise ValueError(f"state has {len(state.y)} entries, graph has {g.m} nodes")
    if not t_next > state.t:
        raise ValueError(f"invalid interval [{state.t}, {t_next}]")
    k0, k1 = _node(x, state.t), _node(x, t_next)
    seg = x.segment_slice(k0, k1)
    if plan is None:
        plan = default_step_plan()
    if backend == "kernel" and not plan.retain_grids:
        plan = replace(plan, retain_grids=True)
    coeffs = _step_coefficients(g, seg, N, backend, plan)
    y0 = state.y
    acc: list[list[float]] = [[v] for v in y0.tolist()]
    for w in walks(g, N)[1:]:
        acc[w[-1]].append(coeffs[flow(g, w)] * y0[w[0]])
    return EulerState(np.array([math.fsum(a) for a in acc]), float(t_next))


def _node(x: PiecewiseLinearPath, t: float) -> int:
    f = float(t) * x.length
    k = int(round(f))
    if abs(f - k) > 1e-9 or not 0 <= k <= x.length:
        raise PathError(f"t={t} is not a segment endpoint of the driver (L={x.length})")
    return k


def solve(g: CdeGraph, x: PiecewiseLinearPath, y0, partition: Sequence[float], N: int,
          backend: str = "chen", plan: ExtractionPlan | None = None) -> list[EulerState]:
    """Iterate :func:`euler_step` over ``partition``; returns the state at every node."""
    ts = [float(t) for t in partition]
    if len(ts) < 2 or ts[0] != 0.0 or any(b <= a for a, b in zip(ts[:-1], ts[1:])) or ts[-1] > 1.0:
        raise ValueError("partition must start at 0, be strictly increasing and stay in [0, 1]")
    states = [EulerState(y0, ts[0])]
    for t in ts[1:]:
        states.append(euler_step(g, x, states[-1], t, N, backend, plan))
    return states


# -- model constructors -------------------------------------------------------

def lattice_cde(D: int, m: int, kind: str = "birth-only") -> CdeGraph:
    """Birth-only or birth-death CDE on the lattice ``{1..m}^D``.

    Each coordinate receives an edge from every predecessor (one coordinate
    lowered by one); birth-death adds a loop at every node.  Nodes are
    numbered in row-major order of their coordinates.
    """
    if D < 1 or m < 1:
        raise ValueError("D and m must be >= 1")
    if kind not in ("birth-only", "birth-death"):
        raise ValueError(f"unknown lattice kind {kind!r}")
    budget.check("graph nodes", m**D, budget.max_graph_nodes())
    coords = list(itertools.product(range(m), repeat=D))
    number = {c: n for n, c in enumerate(coords)}
    edges = []
    for c in coords:
        for axis in range(D):
            if c[axis] > 0:
                pred = c[:axis] + (c[axis] - 1,) + c[axis + 1:]
                edges.append((number[pred], number[c]))
    if kind == "birth-death":
        edges.extend((n, n) for n in range(len(coords)))
    labels = tuple(",".join(str(v + 1) for v in c) for c in coords)
    return CdeGraph(len(coords), tuple(edges), labels)


def _sigmoid(total: float, speed: float, centre: float, t: np.ndarray) -> np.ndarray:
    return total / (1.0 + np.exp(-speed * (t - centre)))


@dataclass(frozen=True)
class GenerationalParams:
    """Per-generation parameter functions of the seasonal birth and epidemic death rates."""

    a: Callable[[int], float] = lambda k: 1.0
    b: Callable[[int], float] = lambda k: 10.0
    c: Callable[[int], float] = lambda k: k / 14.0
    d: Callable[[int], float] = lambda k: (14.0 - k) / 14.0
    f: Callable[[int], float] = lambda k: 10.0


@dataclass
class GenerationalRun:
    graph: CdeGraph
    driver: PiecewiseLinearPath
    states: list[EulerState]
    sparsity: float
    N: int
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def trajectory(self) -> np.ndarray:
        return np.stack([s.y for s in self.states])


def generational_graph(n: int) -> CdeGraph:
    """Chain ``1 -> 2 -> ... -> n -> (>n)`` with a death loop on every node.

    Channels ``1..n`` are the births out of generations ``1..n``; channels
    ``n+1..2n+1`` the loops of nodes ``1..n`` and the sink.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    births = [(k, k + 1) for k in range(n)]
    loops = [(k, k) for k in range(n + 1)]
    labels = tuple(str(k + 1) for k in range(n)) + (f">{n}",)
    return CdeGraph(n + 1, tuple(births + loops), labels)


def generational_driver(n: int, params: GenerationalParams, t_ep: float | None,
                        samples: Sequence[float]) -> PiecewiseLinearPath:
    """Piecewise-linear samples of ``lambda_k`` (births) and ``-mu_k`` (deaths).

    The sink uses generation index ``n + 1``.  ``t_ep=None`` switches the
    epidemic off.
    """
    t = np.asarray(samples, dtype=np.float64)
    cols = [_sigmoid(params.a(k), params.b(k), params.c(k), t) for k in range(1, n + 1)]
    for k in range(1, n + 2):
        if t_ep is None:
            cols.append(np.zeros_like(t))
        else:
            cols.append(-_sigmoid(params.d(k), params.f(k), t_ep, t))
    return PiecewiseLinearPath(np.stack(cols, axis=1))


def generational_model(n: int = 13, params: GenerationalParams | None = None, t_ep: float | None = 0.5,
                       partition: Sequence[float] | None = None, N: int = 5, backend: str = "chen",
                       samples_per_step: int = 1, plan: ExtractionPlan | None = None) -> GenerationalRun:
    """Population of ``n`` generations plus a cumulative sink over one year.

    All populations start at 1.  The driver is sampled ``samples_per_step``
    times per Euler step.
    """
    params = params or GenerationalParams()
    if partition is None:
        partition = np.linspace(0.0, 1.0, 21)
    ts = np.asarray(partition, dtype=np.float64)
    if ts.ndim != 1 or len(ts) < 2 or ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
        raise ValueError("partition must be strictly increasing from 0 to 1")
    if samples_per_step < 1:
        raise ValueError("samples_per_step must be >= 1")
    fine = np.concatenate([np.linspace(a, b, samples_per_step + 1)[:-1] for a, b in zip(ts[:-1], ts[1:])]
                          + [ts[-1:]])
    driver = generational_driver(n, params, t_ep, fine)
    g = generational_graph(n)
    # Euler nodes in units of driver segments, as fractions of L
    L = driver.length
    nodes = [k * samples_per_step / L for k in range(len(ts))]
    states = solve(g, driver, np.ones(g.m), nodes, N, backend, plan)
    states = [EulerState(s.y, float(t)) for s, t in zip(states, ts)]
    return GenerationalRun(g, driver, states, sparsity(g, N), N,
                           {"n": n, "t_ep": t_ep, "steps": len(ts) - 1, "backend": backend,
                            "samples_per_step": samples_per_step})


def parse_params(pairs: Mapping[str, str]) -> GenerationalParams:
    """Constant overrides ``{"a": "1.5", ...}`` for the parameter functions."""
    base = GenerationalParams()
    kw = {}
    for key, val in pairs.items():
        if key not in ("a", "b", "c", "d", "f"):
            raise ValueError(f"unknown model parameter {key!r}")
        v = float(val)
        kw[key] = lambda k, v=v: v
    return GenerationalParams(**{**base.__dict__, **kw})
