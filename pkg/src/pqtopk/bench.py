"""Latency-versus-catalogue-size sweep over the three scoring methods.

Each (method, size) cell times single queries end to end: for the PQ
methods the sub-id score precomputation plus scoring plus top-K selection,
for dense the full matrix-vector product plus top-K selection. Warmup
queries are run first and discarded.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import PQConfig, PQError, ValidationError, default_memory_budget, generate_synthetic, random_query
from .scoring import (
    compute_sub_id_scores,
    get_threads,
    matmul_topk,
    pq_topk,
    recjpq_score,
    reconstruct_dense,
)

log = logging.getLogger(__name__)

METHODS = ("dense", "recjpq", "pqtopk")
DEFAULT_SIZES = (10**3, 10**4, 10**5, 10**6, 10**7)

CSV_COLUMNS = (
    "method",
    "num_items",
    "m",
    "b",
    "d",
    "K",
    "queries",
    "median_ms",
    "p10_ms",
    "p90_ms",
    "est_bytes",
    "skipped",
    "reason",
    "threads",
    "precompute_median_ms",
)


class BenchError(PQError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    sizes: Tuple[int, ...] = DEFAULT_SIZES
    m: int = 8
    b: int = 256
    d: int = 512
    K: int = 10
    queries: int = 30
    warmup: int = 5
    seed: int = 0
    methods: Tuple[str, ...] = METHODS
    memory_budget_bytes: Optional[int] = None
    threads: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.sizes:
            raise ValidationError("at least one catalogue size is required")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValidationError(f"sizes must be strictly increasing: {self.sizes}")
        if self.sizes[0] < 1:
            raise ValidationError("catalogue sizes must be >= 1")
        if self.queries < 1:
            raise ValidationError("queries must be >= 1")
        if self.warmup < 0:
            raise ValidationError("warmup must be >= 0")
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        unknown = [x for x in self.methods if x not in METHODS]
        if unknown:
            raise ValidationError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
        if not self.methods:
            raise ValidationError("at least one method is required")
        PQConfig(1, self.m, self.b, self.d)

    @property
    def budget(self) -> int:
        if self.memory_budget_bytes is not None:
            return self.memory_budget_bytes
        return default_memory_budget()


@dataclass
class BenchCell:
    method: str
    num_items: int
    m: int
    b: int
    d: int
    K: int
    queries: int
    median_ms: Optional[float]
    p10_ms: Optional[float]
    p90_ms: Optional[float]
    est_bytes: int
    skipped: bool = False
    reason: str = ""
    threads: int = 1
    precompute_median_ms: Optional[float] = None


@dataclass
class BenchReport:
    cells: List[BenchCell] = field(default_factory=list)
    threads: int = 1
    seed: int = 0

    def cell(self, method: str, num_items: int) -> BenchCell:
        for c in self.cells:
            if c.method == method and c.num_items == num_items:
                return c
        raise KeyError((method, num_items))

    def to_dict(self) -> dict:
        return {"threads": self.threads, "seed": self.seed, "cells": [asdict(c) for c in self.cells]}

    @classmethod
    def from_dict(cls, data: dict) -> "BenchReport":
        return cls(
            cells=[BenchCell(**c) for c in data["cells"]],
            threads=int(data.get("threads", 1)),
            seed=int(data.get("seed", 0)),
        )


def estimated_bytes(method: str, config: PQConfig, K: int, threads: int = 1) -> int:
    """Resident bytes of the data a method touches at query time."""
    n = config.num_items
    score_table = config.num_splits * config.num_sub_ids * 4
    if method == "dense":
        return config.dense_bytes + n * 4
    pq_static = config.code_bytes + config.sub_embedding_bytes + score_table
    if method == "recjpq":
        # accumulator plus one gathered split column
        return pq_static + 2 * n * 4
    if method == "pqtopk":
        return pq_static + threads * K * 12
    raise BenchError(f"unknown method {method!r}")


def _size_seed(seed: int, num_items: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, num_items, stream])


def _summarise(samples_ns: Sequence[int]) -> Tuple[float, float, float]:
    ms = np.asarray(samples_ns, dtype=np.float64) / 1e6
    p10, med, p90 = np.percentile(ms, [10, 50, 90])
    return float(med), float(p10), float(p90)


def _time_queries(
    run: Callable[[object], float],
    queries: Sequence,
    warmup: int,
) -> Tuple[List[int], List[int]]:
    total, pre = [], []
    for i, phi in enumerate(queries):
        t0 = time.perf_counter_ns()
        pre_ns = run(phi)
        t1 = time.perf_counter_ns()
        if i >= warmup:
            total.append(t1 - t0)
            pre.append(pre_ns)
    return total, pre


def run_scaling_benchmark(
    config: BenchConfig,
    progress: Optional[Callable[[BenchCell], None]] = None,
) -> BenchReport:
    threads = config.threads or get_threads()
    budget = config.budget
    report = BenchReport(threads=threads, seed=config.seed)

    for n in config.sizes:
        pq_cfg = PQConfig(n, config.m, config.b, config.d)
        wanted = {meth: estimated_bytes(meth, pq_cfg, config.K, threads) for meth in config.methods}
        runnable = [meth for meth in config.methods if wanted[meth] <= budget]

        instance = None
        if runnable:
            codebook, embeddings, _ = generate_synthetic(pq_cfg, _size_seed(config.seed, n, 0), memory_budget=budget)
            qrng = np.random.default_rng(_size_seed(config.seed, n, 1))
            queries = [random_query(pq_cfg, qrng) for _ in range(config.warmup + config.queries)]
            instance = (codebook, embeddings, queries)

        for meth in config.methods:
            base = dict(method=meth, num_items=n, m=config.m, b=config.b, d=config.d, K=config.K,
                        queries=config.queries, est_bytes=wanted[meth], threads=threads)
            if meth not in runnable:
                cell = BenchCell(median_ms=None, p10_ms=None, p90_ms=None, skipped=True,
                                 reason=f"memory budget: needs {wanted[meth]:,} bytes > {budget:,}", **base)
            else:
                cell = _run_cell(meth, instance, config, threads, budget, base)
            report.cells.append(cell)
            log.info("%s |I|=%d median=%s ms", meth, n, cell.median_ms)
            if progress is not None:
                progress(cell)

    if all(c.skipped for c in report.cells):
        raise BenchError("every (method, size) cell exceeds the memory budget")
    return report


def _run_cell(meth, instance, config: BenchConfig, threads: int, budget: int, base: dict) -> BenchCell:
    codebook, embeddings, queries = instance
    K = config.K

    if meth == "dense":
        W = reconstruct_dense(embeddings, codebook, memory_budget=budget)

        def run(phi):
            matmul_topk(W, phi, K, memory_budget=budget)
            return 0

    else:
        score = recjpq_score if meth == "recjpq" else (lambda cb, S, k: pq_topk(cb, S, k, threads=threads))

        def run(phi):
            t0 = time.perf_counter_ns()
            S = compute_sub_id_scores(embeddings, phi)
            t1 = time.perf_counter_ns()
            score(codebook, S, K)
            return t1 - t0

    total, pre = _time_queries(run, queries, config.warmup)
    med, p10, p90 = _summarise(total)
    pre_med = None if meth == "dense" else float(np.median(np.asarray(pre) / 1e6))
    return BenchCell(median_ms=med, p10_ms=p10, p90_ms=p90, precompute_median_ms=pre_med, **base)


def fit_scaling_slope(report: BenchReport, method: str, size_range: Tuple[float, float]) -> float:
    """Least-squares slope of log(median latency) against log(catalogue size)."""
    lo, hi = size_range
    pts = [
        (c.num_items, c.median_ms)
        for c in report.cells
        if c.method == method and not c.skipped and c.median_ms and lo <= c.num_items <= hi
    ]
    if len(pts) < 3:
        raise BenchError(f"need >= 3 measured sizes for {method!r} in [{lo:g}, {hi:g}], have {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: BenchReport, fmt: str = "csv") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for c in report.cells:
        writer.writerow([_fmt(getattr(c, col)) for col in CSV_COLUMNS])
    return buf.getvalue().encode()


def parse_report(data: bytes, fmt: str = "csv") -> BenchReport:
    if fmt == "json":
        return BenchReport.from_dict(json.loads(data))
    rows = list(csv.DictReader(io.StringIO(data.decode())))
    cells = []
    for row in rows:
        kw = {}
        for col in CSV_COLUMNS:
            raw = row[col]
            if col in ("method", "reason"):
                kw[col] = raw
            elif col == "skipped":
                kw[col] = raw == "true"
            elif col.endswith("_ms"):
                kw[col] = float(raw) if raw else None
            else:
                kw[col] = int(raw)
        cells.append(BenchCell(**kw))
    threads = cells[0].threads if cells else 1
    return BenchReport(cells=cells, threads=threads)


def gnuplot_script(report: BenchReport, image: str = "scaling.png") -> str:
    """Self-contained gnuplot script: log-log latency vs catalogue size, one line per method."""
    methods = [m for m in METHODS if any(c.method == m and not c.skipped for c in report.cells)]
    lines = [
        "set terminal pngcairo size 800,560",
        f"set output '{image}'",
        "set logscale xy",
        "set xlabel 'catalogue size |I|'",
        "set ylabel 'median latency (ms)'",
        "set key top left",
        "set grid",
    ]
    for meth in methods:
        lines.append(f"${meth} << EOD")
        for c in report.cells:
            if c.method == meth and not c.skipped:
                lines.append(f"{c.num_items} {c.median_ms!r} {c.p10_ms!r} {c.p90_ms!r}")
        lines.append("EOD")
    plots = [f"${meth} using 1:2:3:4 with yerrorlines title '{meth}'" for meth in methods]
    lines.append("plot " + ", \\\n     ".join(plots) if plots else "# no measured cells")
    return "\n".join(lines) + "\n"
