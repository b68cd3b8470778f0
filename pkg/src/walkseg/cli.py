"""Command-line driver.

Subcommands:

* ``refine``       run the full pipeline on one NRVF file (or a directory)
* ``convergence``  snapshot the walk at several step counts, emit CSV
* ``ablate``       compare fusion/affinity variants, emit CSV
* ``bench``        synthetic per-iteration scaling measurements, emit CSV
* ``verify``       oracle-equivalence suite on random instances

Exit codes: 0 success, 1 pipeline error (the error class name is printed),
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bench as bench_mod
from . import verify as verify_mod
from .errors import WalksegError
from .pipeline import (
    AFFINITY_KINDS,
    FUSION_ORDERS,
    FUSIONS,
    NONNEG_POLICIES,
    PipelineOptions,
    ablation_grid,
    build_label_generator,
    build_transition,
    convergence_report,
    refine_bundle,
)
from .nrvf import load_bundle
from .synthetic import write_synthetic_bundle
from .walk import WalkConfig, WalkMode, steps_for_tolerance


def _add_walk_flags(sp: argparse.ArgumentParser, sweepable: bool = False) -> None:
    sp.add_argument("--alpha", type=float, default=0.9, help="continue-walk probability in (0,1)")
    sp.add_argument("--beta", type=float, default=0.5, help="global/local mixing weight in [0,1]")
    sp.add_argument("--c", type=float, default=1.0, help="entropy-weight sharpness, > 0")
    sp.add_argument("--epsilon-self", type=float, default=1e-2, help="local self-loop affinity")
    sp.add_argument("--steps", type=int, default=40, help="truncation length L (0 returns G)")
    sp.add_argument("--tol", type=float, default=None,
                    help="pick the smallest L whose residual bound n*alpha^(L+1) is <= TOL")
    sp.add_argument("--mode", choices=[m.value for m in WalkMode], default="iterative")
    if sweepable:
        # `ablate` sweeps whichever of these is not pinned on the command line
        sp.add_argument("--fusion", choices=FUSIONS, default=None,
                        help="pin one fusion strategy (default: sweep all)")
        sp.add_argument("--affinity", choices=AFFINITY_KINDS, default=None,
                        help="pin one affinity kind (default: sweep all)")
    else:
        sp.add_argument("--fusion", choices=FUSIONS, default="weighted")
        sp.add_argument("--affinity", choices=AFFINITY_KINDS, default="fused")
    sp.add_argument("--fusion-order", choices=FUSION_ORDERS, default="normalized")
    sp.add_argument("--nonneg", choices=NONNEG_POLICIES, default="shift",
                    help="negative-cosine policy for global affinities")
    sp.add_argument("--seed", type=int, default=0)


def _add_synthetic_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("input", nargs="?", default=None, help="NRVF file (omit for --synthetic)")
    sp.add_argument("--synthetic", action="store_true",
                    help="generate a clustered synthetic instance instead of reading a file")
    sp.add_argument("--grid", type=int, nargs=2, default=(16, 16), metavar=("H", "W"))
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--heads", type=int, default=4, help="total heads across the two layers")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="walkseg",
        description="Segmentation refinement by stochastic random walks over fused affinities.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    refine = sub.add_parser("refine", help="run the full pipeline on an NRVF bundle")
    refine.add_argument("input", help="NRVF file, or a directory of *.nrvf files")
    refine.add_argument("--out", required=True, help="output directory")
    refine.add_argument("--jobs", type=int, default=1,
                        help="parallel workers when input is a directory")
    refine.add_argument("--upsample", type=int, nargs=2, default=None, metavar=("H", "W"),
                        help="also write a nearest-neighbour upsampled mask")
    _add_walk_flags(refine)

    conv = sub.add_parser("convergence", help="per-step convergence report as CSV")
    _add_synthetic_flags(conv)
    conv.add_argument("--checkpoints", type=str, default="0,1,5,10,20,40,80")
    conv.add_argument("--out", default="-", help="CSV path, or - for stdout")
    _add_walk_flags(conv)

    abl = sub.add_parser("ablate", help="compare fusion/affinity variants as CSV")
    _add_synthetic_flags(abl)
    abl.add_argument("--out", default="-", help="CSV path, or - for stdout")
    abl.add_argument("--compare-orders", action="store_true",
                     help="also run the raw-affinity fusion order")
    _add_walk_flags(abl, sweepable=True)

    bench = sub.add_parser("bench", help="synthetic scaling benchmark as CSV")
    bench.add_argument("--out", default="-", help="CSV path, or - for stdout")
    bench.add_argument("--lowrank-sizes", type=str, default="1024,4096,16384")
    bench.add_argument("--dense-sizes", type=str, default="1024,4096")
    bench.add_argument("--dim", type=int, default=16)
    bench.add_argument("--classes", type=int, default=8)
    bench.add_argument("--heads", type=int, default=4)
    bench.add_argument("--iters", type=int, default=30)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)

    ver = sub.add_parser("verify", help="run the oracle-equivalence suite")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--scale", type=float, default=1.0,
                     help="multiplier on the number of random trials")
    return p


def _options_from(args) -> PipelineOptions:
    cfg = WalkConfig(
        alpha=args.alpha,
        steps=args.steps,
        beta=args.beta,
        c=args.c,
        epsilon_self=args.epsilon_self,
        residual_tolerance=args.tol if args.tol is not None else 1e-3,
        mode=WalkMode(args.mode),
    )
    return PipelineOptions(
        walk=cfg,
        fusion=args.fusion,
        affinity_kind=args.affinity,
        fusion_order=args.fusion_order,
        nonneg=args.nonneg,
        seed=args.seed,
    )


def _apply_tol(opt: PipelineOptions, n: int, tol: float | None) -> PipelineOptions:
    if tol is None:
        return opt
    from dataclasses import replace

    steps = steps_for_tolerance(opt.walk.alpha, n, tol)
    return replace(opt, walk=replace(opt.walk, steps=steps))


def _write_csv(rows: list[dict], out: str) -> None:
    if not rows:
        return
    fieldnames = list(rows[0].keys())
    handle = sys.stdout if out == "-" else open(out, "w", newline="")
    try:
        w = csv.DictWriter(handle, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)
    finally:
        if handle is not sys.stdout:
            handle.close()


def _materialize_input(args) -> Path:
    """Return the NRVF path to process, writing a synthetic one if asked."""
    if args.synthetic:
        if args.out != "-":
            tmp_dir = Path(args.out).parent / "_synthetic"
        else:
            tmp_dir = Path(tempfile.mkdtemp(prefix="walkseg-synthetic-"))
        tmp_dir.mkdir(parents=True, exist_ok=True)
        path = tmp_dir / f"synthetic_seed{args.seed}.nrvf"
        if args.heads % 2:
            raise ValueError("--heads must be even (two layers)")
        write_synthetic_bundle(
            path,
            seed=args.seed,
            grid_h=args.grid[0],
            grid_w=args.grid[1],
            feature_dim=args.dim,
            class_count=args.classes,
            heads_per_layer=args.heads // 2,
        )
        return path
    if args.input is None:
        raise ValueError("either an input file or --synthetic is required")
    return Path(args.input)


def _refine_one(input_path: str, opt: PipelineOptions, out_dir: str, upsample, tol) -> str:
    if tol is not None:
        bundle, _ = load_bundle(input_path)
        opt = _apply_tol(opt, bundle.n, tol)
    result = refine_bundle(input_path, opt, out_dir=out_dir, upsample=upsample)
    return (
        f"{input_path}: steps={result.probs.steps_used} "
        f"residual_bound={result.probs.residual_bound_value:.4g} -> {out_dir}"
    )


def _cmd_refine(args) -> int:
    opt = _options_from(args)
    src = Path(args.input)
    upsample = tuple(args.upsample) if args.upsample else None
    if src.is_dir():
        inputs = sorted(src.glob("*.nrvf"))
        if not inputs:
            raise WalksegError(f"no *.nrvf files in {src}")  # pragma: no cover
        jobs = max(1, args.jobs)
        tasks = [
            (str(f), opt, str(Path(args.out) / f.stem), upsample, args.tol) for f in inputs
        ]
        if jobs == 1:
            for t in tasks:
                print(_refine_one(*t))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for line in pool.map(_refine_one, *zip(*tasks)):
                    print(line)
        return 0
    print(_refine_one(str(src), opt, args.out, upsample, args.tol))
    return 0


def _cmd_convergence(args) -> int:
    opt = _options_from(args)
    path = _materialize_input(args)
    bundle, labels = load_bundle(path)
    g = build_label_generator(labels)
    built = build_transition(bundle, g, opt)
    checkpoints = [int(t) for t in args.checkpoints.split(",") if t.strip()]
    rows = convergence_report(built.operator, g, opt.walk, checkpoints)
    _write_csv(rows, args.out)
    return 0


def _cmd_ablate(args) -> int:
    fusions = (args.fusion,) if args.fusion else FUSIONS
    affinities = (args.affinity,) if args.affinity else AFFINITY_KINDS
    args.fusion = args.fusion or "weighted"
    args.affinity = args.affinity or "fused"
    opt = _options_from(args)
    path = _materialize_input(args)
    orders = FUSION_ORDERS if args.compare_orders else (args.fusion_order,)
    rows = ablation_grid(path, opt, fusions=fusions, affinities=affinities, orders=orders)
    _write_csv(rows, args.out)
    return 0


def _parse_sizes(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _cmd_bench(args) -> int:
    rows = bench_mod.run_bench(
        lowrank_sizes=_parse_sizes(args.lowrank_sizes),
        dense_sizes=_parse_sizes(args.dense_sizes),
        d=args.dim,
        k=args.classes,
        heads=args.heads,
        iters=args.iters,
        repeats=args.repeats,
        seed=args.seed,
    )
    _write_csv(rows, args.out)
    return 0


def _cmd_verify(args) -> int:
    results = verify_mod.run_all(seed=args.seed, scale=args.scale)
    failed = False
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: max deviation {r.max_deviation:.3e} (tol {r.tolerance:g})")
        failed |= not r.ok
    return 1 if failed else 0


_COMMANDS = {
    "refine": _cmd_refine,
    "convergence": _cmd_convergence,
    "ablate": _cmd_ablate,
    "bench": _cmd_bench,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"{parser.prog}: usage error: {exc}", file=sys.stderr)
        return 2
    except WalksegError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
