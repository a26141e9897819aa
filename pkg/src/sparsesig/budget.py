"""Resource guards. Defaults can be overridden through environment variables."""

import os


class BudgetExceeded(RuntimeError):
    """A computation would exceed a configured size budget."""


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    return int(float(raw))


def max_tensor_elements() -> int:
    return _env_int("SPARSESIG_MAX_TENSOR_ELEMENTS", 10**8)


def max_permutations() -> int:
    return _env_int("SPARSESIG_MAX_PERMUTATIONS", 10**6)


def max_walks() -> int:
    return _env_int("SPARSESIG_MAX_WALKS", 10**6)


def max_retained_grids() -> int:
    return _env_int("SPARSESIG_MAX_RETAINED_GRIDS", 4096)


def max_graph_nodes() -> int:
    return _env_int("SPARSESIG_MAX_GRAPH_NODES", 10**6)


def check(kind: str, requested: int, limit: int) -> None:
    if requested > limit:
        raise BudgetExceeded(f"{kind}: requested {requested} exceeds budget {limit}")
