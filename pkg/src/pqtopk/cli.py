"""Command-line entry point: ``pqtopk {generate,build-codebook,score,verify,bench}``.

Exit codes: 0 success, 1 validation or user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import formats
from .bench import BenchConfig, emit_report, gnuplot_script, run_scaling_benchmark
from .codebook import DEFAULT_MAX_ITERS, build_pq_codebook
from .core import PQConfig, PQError, SequenceEmbedding, generate_synthetic, set_memory_budget
from .scoring import (
    ItemSubset,
    compute_sub_id_scores,
    matmul_topk,
    pq_item_scores,
    pq_topk,
    recjpq_score,
    reconstruct_dense,
    relative_deviation,
    scores_close,
    set_threads,
)

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2

log = logging.getLogger("pqtopk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def parse_count(text: str) -> int:
    """Parse '1000', '1e6' or '2.5e5' as an exact non-negative integer."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value < 0 or value != int(value):
        raise argparse.ArgumentTypeError(f"not a non-negative integer: {text!r}")
    return int(value)


def parse_sizes(text: str) -> List[int]:
    return [parse_count(t) for t in text.split(",") if t.strip()]


_UNITS = {"": 1, "K": 2**10, "M": 2**20, "G": 2**30, "T": 2**40}


def parse_bytes(text: str) -> int:
    """'8G' -> 8 GiB; plain numbers are bytes."""
    match = re.fullmatch(r"\s*([0-9.eE+]+)\s*([KMGT]?)i?B?\s*", text, flags=re.IGNORECASE)
    if not match:
        raise argparse.ArgumentTypeError(f"bad byte size: {text!r}")
    try:
        value = float(match.group(1)) * _UNITS[match.group(2).upper()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad byte size: {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError("byte size must be positive")
    return int(value)


def format_score(score: float) -> str:
    # 9 significant digits round-trip any float32
    return f"{np.float32(score):.9g}"


def format_ranking(result) -> str:
    return "".join(f"{rank} {i} {format_score(s)}\n" for rank, (i, s) in enumerate(result.entries, start=1))


def _query(args, d: int) -> SequenceEmbedding:
    if args.phi_file is not None:
        values = np.loadtxt(args.phi_file, dtype=np.float64, ndmin=1).reshape(-1)
        if values.size != d:
            raise UsageError(f"phi file has {values.size} values, instance has d={d}")
        return SequenceEmbedding(values)
    rng = np.random.default_rng(args.phi_seed)
    return SequenceEmbedding(rng.standard_normal(d, dtype=np.float32))


def score_instance(codebook, embeddings, phi, k: int, method: str, subset=None):
    """Library-level equivalent of ``pqtopk score``."""
    if method == "dense":
        return matmul_topk(reconstruct_dense(embeddings, codebook), phi, k, subset)
    S = compute_sub_id_scores(embeddings, phi)
    if method == "pqtopk":
        return pq_topk(codebook, S, k, subset)
    if method == "recjpq":
        return recjpq_score(codebook, S, k, subset)
    raise UsageError(f"unknown method {method!r}")


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = PQConfig(args.items, args.splits, args.sub_ids, args.dim)
    codebook, embeddings, _ = generate_synthetic(cfg, args.seed)
    nbytes = formats.write_instance(args.out, codebook, embeddings)
    print(f"items={cfg.num_items} splits={cfg.num_splits} sub_ids={cfg.num_sub_ids} dim={cfg.embed_dim} seed={args.seed}")
    print(f"codes: {cfg.code_bytes:,} bytes  sub-item embeddings: {cfg.sub_embedding_bytes:,} bytes")
    print(f"wrote {nbytes:,} bytes to {args.out}")
    return EXIT_OK


def cmd_build_codebook(args) -> int:
    W = formats.read_dense(args.dense)
    codebook, embeddings, report = build_pq_codebook(
        W, args.splits, args.sub_ids, max_iters=args.max_iters, seed=args.seed, threads=args.threads
    )
    nbytes = formats.write_instance(args.out, codebook, embeddings)
    for k, (mse, it) in enumerate(zip(report.split_mse, report.iterations)):
        print(f"split {k}: mse={mse:.6g} iterations={it}")
    print(f"total mse={report.total_mse:.6g}")
    print(f"wrote {nbytes:,} bytes to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    codebook, embeddings = formats.read_instance(args.instance)
    phi = _query(args, codebook.config.embed_dim)
    subset = None
    if args.subset_file is not None:
        ids = np.loadtxt(args.subset_file, dtype=np.int64, ndmin=1).reshape(-1)
        subset = ItemSubset.explicit(np.unique(ids))
    result = score_instance(codebook, embeddings, phi, args.k, args.method, subset)
    sys.stdout.write(format_ranking(result))
    return EXIT_OK


def verify_instance(codebook, embeddings, queries: int, k: int, tolerance: float, seed: int):
    """Run the equivalence checks; returns (passed, first_failure, max_deviation)."""
    W = reconstruct_dense(embeddings, codebook)
    rng = np.random.default_rng(seed)
    d = codebook.config.embed_dim
    passed, first_failure, max_dev = 0, None, 0.0
    for q in range(queries):
        phi = SequenceEmbedding(rng.standard_normal(d, dtype=np.float32))
        S = compute_sub_id_scores(embeddings, phi)
        a = pq_topk(codebook, S, k)
        b = recjpq_score(codebook, S, k)
        failure = None
        if a != b:
            diff = next((i for i, (x, y) in enumerate(zip(a.entries, b.entries)) if x != y), len(a))
            item = a.ids[diff] if diff < len(a) else None
            failure = f"query {q}: pqtopk and recjpq differ at rank {diff + 1} (item {item})"
        pq_all = pq_item_scores(codebook, S)
        dense_all = W.W @ phi.values
        max_dev = max(max_dev, float(relative_deviation(pq_all, dense_all).max()))
        if failure is None:
            bad = np.flatnonzero(~scores_close(pq_all, dense_all, tolerance))
            if bad.size:
                failure = (f"query {q}: item {bad[0]} pq score {pq_all[bad[0]]!r} vs dense "
                           f"{dense_all[bad[0]]!r}")
        if failure is None:
            dense_top = matmul_topk(W, phi, k)
            if not np.all(scores_close(a.scores, dense_top.scores, tolerance)):
                failure = f"query {q}: top-{k} scores differ from dense beyond tolerance"
        if failure is None:
            passed += 1
        elif first_failure is None:
            first_failure = failure
    return passed, first_failure, max_dev


def cmd_verify(args) -> int:
    codebook, embeddings = formats.read_instance(args.instance)
    passed, failure, max_dev = verify_instance(codebook, embeddings, args.queries, args.k, args.tolerance, args.seed)
    print(f"{passed}/{args.queries} pass")
    print(f"max relative deviation pq vs dense: {max_dev:.3g} (tolerance {args.tolerance:g})")
    if failure is not None:
        print(f"first failure: {failure}")
        return EXIT_USER
    return EXIT_OK


def cmd_bench(args) -> int:
    config = BenchConfig(
        sizes=tuple(args.sizes),
        m=args.splits,
        b=args.sub_ids,
        d=args.dim,
        K=args.k,
        queries=args.queries,
        warmup=args.warmup,
        seed=args.seed,
        methods=tuple(x.strip() for x in args.methods.split(",") if x.strip()),
        memory_budget_bytes=args.memory_budget,
        threads=args.threads,
    )

    def progress(cell):
        if cell.skipped:
            print(f"{cell.method:>7} {cell.num_items:>12,}  skipped ({cell.reason})", flush=True)
        else:
            print(f"{cell.method:>7} {cell.num_items:>12,}  median {cell.median_ms:10.3f} ms  "
                  f"p10 {cell.p10_ms:10.3f}  p90 {cell.p90_ms:10.3f}", flush=True)

    report = run_scaling_benchmark(config, progress=progress)
    out = Path(args.out)
    out.write_bytes(emit_report(report, args.format))
    print(f"wrote {args.format} report to {out}")
    if args.plot:
        from .plotting import plot_scaling

        png = out.with_suffix(".png")
        script = out.with_suffix(".gp")
        script.write_text(gnuplot_script(report, image=png.with_name(png.stem + "_gnuplot.png").name))
        plot_scaling(report, png)
        print(f"wrote figure {png} and gnuplot script {script}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="PRNG seed (default 0)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for PQTopK (default: all cores)")
    common.add_argument("--memory-budget", type=parse_bytes, default=None,
                        help="cap on large allocations, e.g. 8G (default: 75%% of RAM)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pqtopk", description="PQ-based top-K item scoring and benchmarking")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a random PQ instance")
    p.add_argument("--items", type=parse_count, required=True)
    p.add_argument("--splits", type=parse_count, default=8)
    p.add_argument("--sub-ids", type=parse_count, default=256)
    p.add_argument("--dim", type=parse_count, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-codebook", parents=[common], help="k-means PQ from a dense matrix file")
    p.add_argument("--dense", required=True, help="dense matrix file (DENS format)")
    p.add_argument("--splits", type=parse_count, default=8)
    p.add_argument("--sub-ids", type=parse_count, default=256)
    p.add_argument("--max-iters", type=parse_count, default=DEFAULT_MAX_ITERS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_codebook)

    p = sub.add_parser("score", parents=[common], help="rank items for one query")
    p.add_argument("--instance", required=True)
    q = p.add_mutually_exclusive_group()
    q.add_argument("--phi-seed", type=int, default=0, help="draw phi ~ N(0, 1) from this seed")
    q.add_argument("--phi-file", default=None, help="text file with d whitespace-separated values")
    p.add_argument("--k", type=parse_count, default=10)
    p.add_argument("--method", choices=("pqtopk", "recjpq", "dense"), default="pqtopk")
    p.add_argument("--subset-file", default=None, help="text file of item ids to restrict scoring to")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("verify", parents=[common], help="check pqtopk == recjpq and both match dense")
    p.add_argument("--instance", required=True)
    p.add_argument("--queries", type=parse_count, default=100)
    p.add_argument("--k", type=parse_count, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="latency vs catalogue size sweep")
    p.add_argument("--sizes", type=parse_sizes, default=[10**3, 10**4, 10**5, 10**6, 10**7])
    p.add_argument("--splits", type=parse_count, default=8)
    p.add_argument("--sub-ids", type=parse_count, default=256)
    p.add_argument("--dim", type=parse_count, default=512)
    p.add_argument("--k", type=parse_count, default=10)
    p.add_argument("--queries", type=parse_count, default=30)
    p.add_argument("--warmup", type=parse_count, default=5)
    p.add_argument("--methods", default="pqtopk,recjpq,dense")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", action="store_true", help="also render <out>.png and a gnuplot script <out>.gp")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    set_threads(args.threads)
    set_memory_budget(args.memory_budget)
    try:
        return args.func(args)
    except (PQError, UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    finally:
        set_threads(None)
        set_memory_budget(None)


if __name__ == "__main__":
    sys.exit(main())
