"""Benchmark orchestration: initialize, optimize and time every
(dataset, initializer, cost) cell, then write one CSV row per cell."""

import csv
import io
import math
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Union

import click

from pgo.config import DEFAULT_MAX_ITERATIONS, MAX_THREADS
from pgo.core.costs import CostKind
from pgo.core.g2o import load_g2o
from pgo.core.graph import PoseGraph, connected_components
from pgo.core.hipe import HipeParams, HipeReport, hipe_init
from pgo.core.initializers import (
    InitKind,
    cauchy_boost_init,
    chordal_init,
    odometry_init,
    spanning_tree_init,
)
from pgo.core.metrics import normalized_chi2
from pgo.core.sparse_nls import OptimizeReport, SolverConfig, optimize
from pgo.utils.async_utils import ProgressIndicator, run_parallel

CSV_HEADER = [
    "dataset", "init", "cost", "chi2_init", "chi2_final", "iters",
    "t_init_s", "t_opt_s", "t_total_s", "error"
]


@dataclass
class RunStats:
    dataset: str
    init: str
    cost: str
    chi2_init: float = math.nan
    chi2_final: float = math.nan
    iterations: int = 0
    t_init: float = 0.0
    t_opt: float = 0.0
    error: str = ""
    hipe: Optional[HipeReport] = field(default=None, repr=False)

    @property
    def t_total(self) -> float:
        return self.t_init + self.t_opt

    @property
    def ok(self) -> bool:
        return not self.error

    def row(self) -> List[str]:
        def num(value: float) -> str:
            return "" if math.isnan(value) else f"{value:.6g}"
        return [
            self.dataset, self.init, self.cost,
            num(self.chi2_init), num(self.chi2_final), str(self.iterations),
            f"{self.t_init:.6f}", f"{self.t_opt:.6f}", f"{self.t_total:.6f}",
            self.error
        ]


@dataclass(frozen=True)
class Cell:
    dataset: Path
    init: InitKind
    cost: CostKind


def anchor_components(graph: PoseGraph) -> List[int]:
    """Fix the smallest id of every component without a fixed variable."""
    anchored = []
    for component in connected_components(graph):
        if not any(graph.variables[v].fixed for v in component):
            pinned = min(component)
            graph.variables[pinned].fixed = True
            anchored.append(pinned)
    return anchored


def run_initializer(
    graph: PoseGraph,
    kind: InitKind,
    params: HipeParams = HipeParams(),
    verbose: bool = False
) -> Optional[Union[HipeReport, OptimizeReport]]:
    """Run one initializer in place; returns its diagnostics when it has any."""
    if kind is InitKind.ODOMETRY:
        odometry_init(graph)
    elif kind is InitKind.SPANNING_TREE:
        spanning_tree_init(graph)
    elif kind is InitKind.CHORDAL:
        chordal_init(graph)
    elif kind is InitKind.CAUCHY:
        return cauchy_boost_init(graph, verbose=verbose)
    elif kind is InitKind.HIPE:
        return hipe_init(graph, params)
    else:
        raise ValueError(f"unhandled initializer {kind!r}")
    return None


def run_single(
    graph: PoseGraph,
    name: str,
    init: InitKind,
    cost: CostKind,
    params: HipeParams = HipeParams(),
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    verbose: bool = False,
    capture_errors: bool = True
) -> RunStats:
    """Initialize then optimize ``graph`` in place.

    With ``capture_errors`` failures are recorded in ``RunStats.error``
    instead of raised. ``max_iterations=0`` skips the fine-grained solve and
    reports the initial guess.
    """
    if max_iterations < 0:
        raise ValueError(f"max_iterations must be non-negative, got {max_iterations}")
    stats = RunStats(name, init.value, cost.value)
    try:
        anchor_components(graph)
        start = time.perf_counter()
        diagnostics = run_initializer(graph, init, params, verbose)
        stats.t_init = time.perf_counter() - start
        if isinstance(diagnostics, HipeReport):
            stats.hipe = diagnostics
        stats.chi2_init = normalized_chi2(graph, cost)

        if max_iterations == 0:
            stats.chi2_final = stats.chi2_init
            return stats
        start = time.perf_counter()
        report = optimize(
            graph, SolverConfig(cost=cost, max_iterations=max_iterations, verbose=verbose)
        )
        stats.t_opt = time.perf_counter() - start
        stats.iterations = report.iterations
        stats.chi2_final = normalized_chi2(graph, cost)
    except Exception as e:
        if not capture_errors:
            raise
        stats.error = f"{type(e).__name__}: {e}"
    return stats


def _run_cell(
    cell: Cell,
    params: HipeParams,
    max_iterations: int
) -> RunStats:
    name = cell.dataset.stem
    try:
        graph = load_g2o(cell.dataset)
    except Exception as e:
        return RunStats(name, cell.init.value, cell.cost.value, error=f"{type(e).__name__}: {e}")
    return run_single(graph, name, cell.init, cell.cost, params, max_iterations)


def run_benchmark(
    datasets: Sequence[Union[str, Path]],
    inits: Sequence[InitKind],
    costs: Sequence[CostKind],
    params: HipeParams = HipeParams(),
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    parallel: bool = False,
    show_progress: bool = False
) -> List[RunStats]:
    """One ``RunStats`` per (dataset, init, cost), in that nesting order.

    Each cell reloads its dataset. Parallel cells share the machine, so
    their timings are not comparable with sequential runs.
    """
    cells = [
        Cell(Path(dataset), init, cost)
        for dataset in datasets for init in inits for cost in costs
    ]
    progress = ProgressIndicator(len(cells), "Benchmark", enabled=show_progress)
    workers = MAX_THREADS if parallel else 1
    if parallel and cells:
        click.echo(
            click.style("Warning: parallel run, timings are not comparable", fg='yellow'),
            err=True
        )

    run = partial(_run_cell, params=params, max_iterations=max_iterations)
    results = run_parallel(cells, run, workers, progress)
    progress.finish()
    return results


def format_csv(stats: Sequence[RunStats]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for entry in stats:
        writer.writerow(entry.row())
    return buffer.getvalue()


def write_csv(stats: Sequence[RunStats], path: Union[str, Path]):
    Path(path).write_text(format_csv(stats))
