"""``sparsesig`` command line.

Exit status: 0 on success, 2 for invalid input or arguments, 3 when a
size budget would be exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, budget, cde, oracle, pde
from .extraction import (ExtractionPlan, anagram_class, batch_retrieve, error_bound_for, extract,
                         semiordered)
from .paths import (BlockPartition, PathError, PiecewiseLinearPath, generate_path, parse_index, read_csv,
                    restrict)

EXIT_OK, EXIT_USAGE, EXIT_BUDGET = 0, 2, 3


class UsageError(ValueError):
    """Arguments that parse but make no sense together."""


# -- argument helpers ----------------------------------------------------------

def _depth_range(text: str) -> list[int]:
    """``"1..8"``, ``"3"`` or ``"1,2,5"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad depth range {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _add_input(p: argparse.ArgumentParser, dim_default: int | None = None) -> None:
    g = p.add_argument_group("path source")
    g.add_argument("--input", type=Path, help="CSV file, one row per time point")
    g.add_argument("--header", action="store_true", help="skip the first CSV row")
    g.add_argument("--generate", choices=("random-uniform", "axis", "linear"), default="random-uniform",
                   help="built-in generator when --input is absent")
    g.add_argument("--length", type=int, default=150, help="segments of a generated path")
    g.add_argument("--dim", type=int, default=dim_default, help="channels of a generated path")
    g.add_argument("--seed", type=int, default=0)


def _add_plan(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("extraction")
    g.add_argument("--depth-M", dest="M", type=int, default=2, help="Vandermonde scaling depth")
    g.add_argument("--scheme", choices=("central", "forward"), default="central")
    g.add_argument("--h", type=float, default=1.0, help="finite-difference step")
    g.add_argument("--gamma", type=int, default=None, help="dyadic order for both paths")
    g.add_argument("--gamma1", type=int, default=3)
    g.add_argument("--gamma2", type=int, default=3)
    g.add_argument("--schedule", choices=("nthroot", "uniform"), default="nthroot")
    g.add_argument("--exact-truncated", action="store_true",
                   help="use truncated kernels instead of the PDE (no truncation error)")


def _plan(args, retain: bool = False) -> ExtractionPlan:
    g1 = args.gamma if args.gamma is not None else args.gamma1
    g2 = args.gamma if args.gamma is not None else args.gamma2
    if args.M < 0 or g1 < 0 or g2 < 0 or args.h <= 0:
        raise UsageError("M and dyadic orders must be >= 0 and h > 0")
    return ExtractionPlan(M=args.M, scheme=args.scheme, h=args.h, schedule=args.schedule,
                          grid=pde.DyadicGrid(g1, g2), retain_grids=retain,
                          backend="exact" if args.exact_truncated else "kernel")


def _path(args, dim: int | None = None) -> tuple[PiecewiseLinearPath, dict]:
    if args.input is not None:
        return read_csv(args.input, header=args.header), {"source": "csv", "file": str(args.input)}
    d = args.dim if args.dim is not None else dim
    if d is None:
        raise UsageError("--dim is required for a generated path")
    x = generate_path(args.generate, args.length, d, args.seed)
    return x, {"source": "generator", "kind": args.generate, "length": args.length, "dim": d,
               "seed": args.seed, "rng": "numpy.random.default_rng"}


def _config(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k == "func":
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _emit_json(payload: dict, args, started: float) -> None:
    payload = {"version": __version__, "command": args.command, "config": _config(args),
               **payload, "elapsed_s": time.perf_counter() - started}
    text = json.dumps(payload, indent=2, default=_jsonable)
    _write(text + "\n", getattr(args, "output", None))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _emit_csv(header: Sequence[str], rows: Sequence[Sequence], meta: dict, args) -> None:
    buf = io.StringIO()
    for line in json.dumps(meta, default=_jsonable, sort_keys=True).splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _write(buf.getvalue(), getattr(args, "output", None))


def _write(text: str, target) -> None:
    if target is None or str(target) == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


# -- subcommands -----------------------------------------------------------------

def cmd_oracle(args) -> dict:
    x, src = _path(args, dim=2)
    out: dict = {"path": src}
    if args.truncate is not None:
        sig = oracle.truncated_signature(x, args.truncate)
        out["signature"] = [lvl.tolist() for lvl in sig.levels]
    if args.index:
        idx = parse_index(args.index)
        table = oracle.chen_table(x, idx)
        out["coefficient"] = table.coefficient()
        # prefix coefficients at every segment end
        out["prefix_table"] = {"index": list(idx), "rows": table.values.tolist()}
    if args.anagram:
        idx = parse_index(args.anagram)
        out["anagram_sum"] = oracle.anagram_sum_oracle(x, idx)
    if args.kernel_with is not None:
        y = read_csv(args.kernel_with, header=args.header)
        out["truncated_kernel"] = oracle.truncated_kernel(x, y, args.level)
    if len(out) == 1:
        raise UsageError("nothing to do: give --truncate, --index, --anagram or --kernel-with")
    return out


def cmd_kernel(args) -> dict:
    x, src = _path(args, dim=2)
    g1 = args.gamma if args.gamma is not None else args.gamma1
    g2 = args.gamma if args.gamma is not None else args.gamma2
    grid = pde.DyadicGrid(g1, g2)
    retain = args.dump_grids is not None
    if args.axis:
        idx = parse_index(args.index) if args.index else tuple(range(1, x.dim + 1))
        lam = args.lam if args.lam is not None else [1.0] * len(idx)
        if len(lam) != len(idx):
            raise UsageError("--lambda needs one entry per index position")
        k = pde.solve_goursat_axis(restrict(x, idx), lam, args.beta, grid, retain=retain)
    else:
        if args.other is None:
            raise UsageError("--general needs --other CSV for the second path")
        y = read_csv(args.other, header=args.header)
        k = pde.solve_goursat_general(x, y, grid, retain=retain)
    if retain:
        np.savez_compressed(args.dump_grids, values=k.values, gamma1=g1, gamma2=g2)
    return {"path": src, "kernel": k.final, "grid_shape": list(k.shape), "meta": k.meta,
            "grids_file": None if not retain else str(args.dump_grids)}


def _parse_subcoeff(text: str) -> tuple[tuple[int, ...], float | None]:
    if "@" in text:
        j, t = text.split("@", 1)
        return parse_index(j), float(t)
    return parse_index(text), None


def cmd_coeff(args) -> dict:
    x, src = _path(args)
    plan = _plan(args, retain=args.retain_grids or bool(args.subcoeff))
    out: dict = {"path": src}
    if args.anagram:
        idx = parse_index(args.index)
        out["value"] = anagram_class(x, idx, plan)
        out["target"] = {"anagram_class": list(idx)}
        out["oracle"] = oracle.anagram_sum_oracle(x, idx) if args.check else None
        return out
    if args.blocks:
        part = BlockPartition.parse(args.blocks)
        out["value"] = semiordered(x, part, plan)
        out["target"] = {"blocks": [list(b) for b in part.blocks]}
        out["error_bound"] = error_bound_for(x, part.index, plan, part.sizes)
        return out
    idx = parse_index(args.index)
    res = extract(x, idx, plan)
    out["value"] = res.value
    out["target"] = {"index": list(idx)}
    out["error_bound"] = error_bound_for(x, idx, plan)
    out["diagnostics"] = res.diagnostics
    out["alphas"] = list(res.scaling.alphas)
    out["betas"] = list(res.scaling.betas)
    if args.check:
        out["oracle"] = oracle.coefficient_chen(x, idx)
        out["abs_error"] = abs(out["value"] - out["oracle"])
    if args.subcoeff:
        subs = []
        for text in args.subcoeff:
            j, t = _parse_subcoeff(text)
            subs.append({"index": list(j), "t": t, "value": batch_retrieve(res, j, t)})
        out["subcoefficients"] = subs
    return out


def cmd_euler(args) -> tuple[list[str], list[list], dict]:
    if args.steps < 1 or args.order_N < 1:
        raise UsageError("--steps and --order-N must be >= 1")
    partition = np.linspace(0.0, 1.0, args.steps + 1)
    plan = ExtractionPlan(M=args.depth_M, retain_grids=True, grid=pde.DyadicGrid(args.gamma, args.gamma))
    if args.toy_model:
        params = cde.parse_params(dict(_kv(p) for p in args.params))
        t_ep = None if args.t_ep is not None and args.t_ep < 0 else (0.5 if args.t_ep is None else args.t_ep)
        run = cde.generational_model(args.generations, params, t_ep, partition, args.order_N, args.backend,
                                     args.samples_per_step, plan)
        g, states, s = run.graph, run.states, run.sparsity
    else:
        if not args.lattice:
            raise UsageError("give --lattice D,m or --toy-model")
        D, m = args.lattice
        g = cde.lattice_cde(D, m, args.kind)
        rng = np.random.default_rng(args.seed)
        driver = PiecewiseLinearPath(np.vstack([np.zeros(g.d),
                                                np.cumsum(rng.uniform(0, args.rate / args.steps,
                                                                      (args.steps, g.d)), axis=0)]))
        states = cde.solve(g, driver, np.ones(g.m), partition, args.order_N, args.backend, plan)
        s = cde.sparsity(g, args.order_N) if g.d >= 2 else None
    labels = g.labels or tuple(str(k + 1) for k in range(g.m))
    header = ["t"] + [f"y[{lab}]" for lab in labels]
    rows = [[repr(st.t)] + [repr(float(v)) for v in st.y] for st in states]
    meta = {"version": __version__, "command": "euler", "config": _config(args), "nodes": g.m,
            "edges": g.d, "walks": cde.count_walks(g, args.order_N), "sparsity": s}
    return header, rows, meta


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise UsageError(f"--params expects k=v, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _lattice(text: str) -> tuple[int, int]:
    try:
        D, m = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--lattice expects D,m, got {text!r}") from None
    return D, m


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_bench(args) -> tuple[list[str], list[list], dict]:
    """Runtime against depth for serial and parallel kernel extraction and the Chen recursion."""
    plan = ExtractionPlan(M=args.depth_M, grid=pde.DyadicGrid(args.gamma, args.gamma))
    full = pde.max_threads()
    par = full if args.threads is None else min(args.threads, full)
    rows = []
    for n in args.depths:
        x = generate_path("random-uniform", args.length, n, args.seed)
        idx = tuple(range(1, n + 1))
        extract(x, idx, plan)  # compile and warm caches
        pde.set_threads(1)
        serial = _median_time(lambda: extract(x, idx, plan), args.repeats)
        pde.set_threads(par)
        parallel = _median_time(lambda: extract(x, idx, plan), args.repeats)
        chen = _median_time(lambda: oracle.coefficient_chen(x, idx), args.repeats)
        rows.append([n, (plan.M + 1) * 2**n, f"{serial:.6g}", f"{parallel:.6g}", f"{chen:.6g}"])
    meta = {"version": __version__, "command": "bench", "config": _config(args), "repeats": args.repeats,
            "timing": "median wall seconds", "parallel_threads": par, "available_threads": full}
    return ["n", "kernels", "serial_s", "parallel_s", "chen_s"], rows, meta


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsesig", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap the solver worker pool")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("oracle", help="exact signatures, coefficients and kernels")
    _add_input(o)
    o.add_argument("--truncate", type=int, help="dense signature up to this level")
    o.add_argument("--index", help="coefficient and prefix table, e.g. 1,2,3")
    o.add_argument("--anagram", help="sum over distinct permutations of this index")
    o.add_argument("--kernel-with", type=Path, help="second path CSV for the truncated kernel")
    o.add_argument("--level", type=int, default=4, help="truncation level of --kernel-with")
    o.add_argument("--output", type=Path)

    k = sub.add_parser("kernel", help="solve one signature-kernel PDE")
    _add_input(k)
    mode = k.add_mutually_exclusive_group()
    mode.add_argument("--general", action="store_false", dest="axis", help="kernel against --other")
    mode.add_argument("--axis", action="store_true", default=True, help="kernel against the axis filter")
    k.add_argument("--other", type=Path)
    k.add_argument("--index", help="channels restricted before the axis solve")
    k.add_argument("--beta", type=float, default=1.0)
    k.add_argument("--lambda", dest="lam", type=_floats)
    k.add_argument("--gamma", type=int, default=None)
    k.add_argument("--gamma1", type=int, default=3)
    k.add_argument("--gamma2", type=int, default=3)
    k.add_argument("--dump-grids", type=Path, help="write the full grid to this .npz file")
    k.add_argument("--output", type=Path)

    c = sub.add_parser("coeff", help="approximate one coefficient through filtered kernels")
    _add_input(c)
    c.add_argument("--index", default="1,2")
    c.add_argument("--blocks", help='semi-ordered target, e.g. "1,2|3"')
    c.add_argument("--anagram", action="store_true", help="sum over the anagram class of --index")
    _add_plan(c)
    c.add_argument("--retain-grids", action="store_true")
    c.add_argument("--subcoeff", action="append", default=[], help='sub-coefficient "J@t", repeatable')
    c.add_argument("--check", action="store_true", help="also report the exact value")
    c.add_argument("--output", type=Path)

    e = sub.add_parser("euler", help="N-step Euler scheme for a sparse linear CDE")
    e.add_argument("--lattice", type=_lattice, help="lattice CDE D,m")
    e.add_argument("--kind", choices=("birth-only", "birth-death"), default="birth-only")
    e.add_argument("--toy-model", action="store_true", help="generational population model")
    e.add_argument("--generations", type=int, default=13)
    e.add_argument("--t-ep", type=float, default=None, help="epidemic peak; negative disables it")
    e.add_argument("--params", action="append", default=[], help="constant model parameter k=v")
    e.add_argument("--samples-per-step", type=int, default=1)
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--order-N", type=int, default=5)
    e.add_argument("--backend", choices=("chen", "kernel"), default="chen")
    e.add_argument("--depth-M", type=int, default=3)
    e.add_argument("--gamma", type=int, default=3)
    e.add_argument("--rate", type=float, default=1.0, help="total driver increase of a lattice run")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output", type=Path)

    b = sub.add_parser("bench", help="runtime against depth")
    b.add_argument("--depths", type=_depth_range, default=_depth_range("1..8"))
    b.add_argument("--length", type=int, default=10_000)
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--depth-M", type=int, default=1)
    b.add_argument("--gamma", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--output", type=Path)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            pde.set_threads(args.threads)
        if args.command in ("euler", "bench"):
            header, rows, meta = (cmd_euler if args.command == "euler" else cmd_bench)(args)
            meta["elapsed_s"] = time.perf_counter() - started
            _emit_csv(header, rows, meta, args)
        else:
            handler = {"oracle": cmd_oracle, "kernel": cmd_kernel, "coeff": cmd_coeff}[args.command]
            _emit_json(handler(args), args, started)
    except budget.BudgetExceeded as exc:
        print(f"sparsesig: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (PathError, UsageError, ValueError, IndexError, OSError) as exc:
        print(f"sparsesig: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
