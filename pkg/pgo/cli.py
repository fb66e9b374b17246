"""CLI commands and interface for pgo."""

import glob
import sys
import traceback
from pathlib import Path
from typing import List, Optional

import click

from pgo.config import (
    DEFAULT_GAMMA,
    DEFAULT_K,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_SEED,
    DEFAULT_SIGMA_ROT,
    DEFAULT_SIGMA_TRANS,
    DEFAULT_SPHERE_NODES,
    DEFAULT_SPHERE_RADIUS,
    HAS_CHOLMOD,
    MAX_THREADS,
    __version__,
)
from pgo.core.benchmark import (
    anchor_components,
    format_csv,
    run_benchmark,
    run_single,
    write_csv,
)
from pgo.core.cli_additions import profile, stats, validate
from pgo.core.costs import CostKind
from pgo.core.errors import PGOError
from pgo.core.g2o import load_g2o, save_g2o
from pgo.core.generator import GeneratorSpec, generate_sphere
from pgo.core.hipe import HipeParams
from pgo.core.initializers import InitKind
from pgo.core.metrics import absolute_trajectory_error
from pgo.core.profile_manager import ProfileManager
from pgo.core.report import write_report

INIT_CHOICES = [k.value for k in InitKind]
COST_CHOICES = [k.value for k in CostKind]
DEFAULT_BENCH_INITS = "spanning-tree,cauchy,chordal,hipe"


def _fail(ctx: click.Context, error: Exception):
    click.echo(click.style(f"Error: {error}", fg='red'), err=True)
    if ctx.obj and ctx.obj.get('debug'):
        traceback.print_exc()
    sys.exit(1)


def _parse_list(value: str, parser, param: str) -> list:
    try:
        return [parser(item.strip()) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint=param)


@click.group()
@click.version_option(__version__)
@click.option('--debug', is_flag=True, help='Print tracebacks on failure')
@click.pass_context
def cli(ctx: click.Context, debug: bool):
    """pgo - pose-graph optimization with hierarchical initialization."""
    ctx.ensure_object(dict)
    ctx.obj['debug'] = debug


@cli.command('optimize')
@click.argument('input_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--init', 'init_name', help=f"Initializer ({', '.join(INIT_CHOICES)})")
@click.option('--cost', 'cost_name', help=f"Fine-grained cost ({', '.join(COST_CHOICES)})")
@click.option('--local-cost', type=click.Choice(COST_CHOICES), default='geodesic',
              help='Cost of HiPE partition and remaining-variable solves')
@click.option('--skeleton-cost', type=click.Choice(COST_CHOICES), default='geodesic',
              help='Cost of the HiPE skeleton solve')
@click.option('--k', type=int, help=f'Minimum variables per partition (default {DEFAULT_K})')
@click.option('--gamma', type=float,
              help=f'Minimum BFS distance per partition (default {DEFAULT_GAMMA})')
@click.option('--distance', type=click.Choice(['hops', 'metric']), help='BFS distance measure')
@click.option('--max-iters', type=int,
              help=f'Fine-grained iteration cap (default {DEFAULT_MAX_ITERATIONS})')
@click.option('--out', type=click.Path(dir_okay=False), help='Write the optimized graph')
@click.option('--stats', 'stats_path', type=click.Path(dir_okay=False),
              help='Write a one-row CSV of run statistics')
@click.option('--deterministic/--no-deterministic', default=None,
              help='Solve HiPE partitions on a single worker')
@click.option('--export-skeleton', type=click.Path(dir_okay=False),
              help='Write the HiPE skeleton as g2o')
@click.option('--profile', 'profile_name', help='Start from a saved profile')
@click.option('--verbose', '-v', is_flag=True, help='Print solver iterations')
@click.pass_context
def optimize_command(
    ctx: click.Context,
    input_path: str,
    init_name: Optional[str],
    cost_name: Optional[str],
    local_cost: str,
    skeleton_cost: str,
    k: Optional[int],
    gamma: Optional[float],
    distance: Optional[str],
    max_iters: Optional[int],
    out: Optional[str],
    stats_path: Optional[str],
    deterministic: Optional[bool],
    export_skeleton: Optional[str],
    profile_name: Optional[str],
    verbose: bool
):
    """Initialize and optimize a g2o pose graph."""
    base = None
    if profile_name:
        base = ProfileManager.get_profile(profile_name)
        if base is None:
            raise click.BadParameter(f"profile '{profile_name}' not found", param_hint='--profile')
    options = ProfileManager.merge(base, {
        'init': init_name, 'cost': cost_name, 'k': k, 'gamma': gamma,
        'max_iters': max_iters, 'distance': distance, 'deterministic': deterministic
    })

    try:
        init = InitKind.parse(options.get('init', InitKind.HIPE.value))
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint='--init')
    try:
        cost = CostKind.parse(options.get('cost', CostKind.GEODESIC.value))
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint='--cost')
    try:
        params = HipeParams(
            k=int(options.get('k', DEFAULT_K)),
            gamma=float(options.get('gamma', DEFAULT_GAMMA)),
            local_cost=CostKind.parse(local_cost),
            skeleton_cost=CostKind.parse(skeleton_cost),
            distance=options.get('distance', 'hops'),
            workers=1 if options.get('deterministic') else MAX_THREADS
        )
    except ValueError as e:
        raise click.UsageError(str(e))
    iterations = int(options.get('max_iters', DEFAULT_MAX_ITERATIONS))
    if iterations < 0:
        raise click.BadParameter("must be non-negative", param_hint='--max-iters')

    try:
        graph = load_g2o(input_path)
        for pinned in anchor_components(graph):
            click.echo(
                click.style(f"Warning: component without FIX, pinned variable {pinned}", fg='yellow'),
                err=True
            )
        run = run_single(
            graph, Path(input_path).stem, init, cost, params, iterations,
            verbose=verbose, capture_errors=False
        )
        if out:
            save_g2o(graph, out)
        if stats_path:
            write_csv([run], stats_path)
        if export_skeleton:
            if run.hipe is None:
                click.echo(
                    click.style("Warning: --export-skeleton only applies to --init hipe", fg='yellow'),
                    err=True
                )
            else:
                Path(export_skeleton).write_text(run.hipe.export_skeleton())
    except (PGOError, OSError) as e:
        _fail(ctx, e)

    click.echo(click.style(f"✓ {run.dataset}: {init.value} + {cost.value}", fg='green', bold=True))
    click.echo(f"  chi2 after init: {run.chi2_init:.6g}")
    click.echo(f"  chi2 final:      {run.chi2_final:.6g}")
    click.echo(f"  iterations:      {run.iterations}")
    click.echo(f"  time:            {run.t_init:.3f}s init + {run.t_opt:.3f}s opt")
    if run.hipe is not None:
        click.echo(
            f"  skeleton:        {run.hipe.skeleton_variables} variables, "
            f"{run.hipe.skeleton_edges} edges, {run.hipe.partitions} partitions"
        )
    if out:
        click.echo(f"  written:         {out}")


@cli.group()
def generate():
    """Generate synthetic datasets."""
    pass


@generate.command('sphere')
@click.option('--nodes', type=int, default=DEFAULT_SPHERE_NODES, show_default=True)
@click.option('--radius', type=float, default=DEFAULT_SPHERE_RADIUS, show_default=True)
@click.option('--sigma-rot', type=float, default=DEFAULT_SIGMA_ROT, show_default=True)
@click.option('--sigma-trans', type=float, default=DEFAULT_SIGMA_TRANS, show_default=True)
@click.option('--seed', type=int, default=DEFAULT_SEED, show_default=True)
@click.option('--nodes-per-ring', type=int, help='Poses per ring (default ceil(sqrt(nodes)))')
@click.option('--fix-first/--no-fix-first', default=True, show_default=True)
@click.option('--out', type=click.Path(dir_okay=False), required=True, help='Noisy graph')
@click.option('--ground-truth', type=click.Path(dir_okay=False), help='Ground-truth graph')
@click.pass_context
def generate_sphere_command(
    ctx: click.Context,
    nodes: int,
    radius: float,
    sigma_rot: float,
    sigma_trans: float,
    seed: int,
    nodes_per_ring: Optional[int],
    fix_first: bool,
    out: str,
    ground_truth: Optional[str]
):
    """Vehicle driving latitude rings on a sphere."""
    try:
        spec = GeneratorSpec(nodes, radius, sigma_rot, sigma_trans, seed, nodes_per_ring, fix_first)
    except ValueError as e:
        raise click.UsageError(str(e))

    header = (
        f"sphere nodes={nodes} radius={radius} sigma_rot={sigma_rot} "
        f"sigma_trans={sigma_trans} seed={seed}"
    )
    truth, noisy = generate_sphere(spec)
    try:
        save_g2o(noisy, out, header)
        if ground_truth:
            save_g2o(truth, ground_truth, header)
    except OSError as e:
        _fail(ctx, e)

    click.echo(click.style(
        f"✓ {noisy.num_variables} poses, {noisy.num_edges} edges written to {out}", fg='green'
    ))


@cli.command('bench')
@click.option('--datasets', 'patterns', multiple=True, required=True,
              help='Glob of g2o files (repeatable)')
@click.option('--inits', default=DEFAULT_BENCH_INITS, show_default=True,
              help='Comma-separated initializers')
@click.option('--costs', default='geodesic', show_default=True, help='Comma-separated costs')
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False),
              help='CSV output (stdout when omitted)')
@click.option('--report', type=click.Path(dir_okay=False), help='Markdown report')
@click.option('--max-iters', type=int, default=DEFAULT_MAX_ITERATIONS, show_default=True)
@click.option('--k', type=int, default=DEFAULT_K, show_default=True)
@click.option('--gamma', type=float, default=DEFAULT_GAMMA, show_default=True)
@click.option('--parallel', is_flag=True, help='Run cells concurrently (timings not comparable)')
@click.pass_context
def bench(
    ctx: click.Context,
    patterns: tuple,
    inits: str,
    costs: str,
    csv_path: Optional[str],
    report: Optional[str],
    max_iters: int,
    k: int,
    gamma: float,
    parallel: bool
):
    """Run every initializer and cost on every dataset."""
    init_kinds = _parse_list(inits, InitKind.parse, '--inits')
    cost_kinds = _parse_list(costs, CostKind.parse, '--costs')
    datasets: List[str] = []
    for pattern in patterns:
        datasets.extend(sorted(glob.glob(pattern)))
    if not datasets:
        click.echo(click.style("Warning: no dataset matched", fg='yellow'), err=True)

    try:
        params = HipeParams(k=k, gamma=gamma, workers=1 if parallel else MAX_THREADS)
    except ValueError as e:
        raise click.UsageError(str(e))

    results = run_benchmark(
        datasets, init_kinds, cost_kinds, params, max_iters,
        parallel=parallel, show_progress=sys.stderr.isatty()
    )
    try:
        if csv_path:
            write_csv(results, csv_path)
        else:
            click.echo(format_csv(results), nl=False)
        if report:
            write_report(results, report)
    except OSError as e:
        _fail(ctx, e)

    failed = [r for r in results if not r.ok]
    for run in failed:
        click.echo(
            click.style(f"✗ {run.dataset} / {run.init} / {run.cost}: {run.error}", fg='red'),
            err=True
        )
    if failed:
        sys.exit(1)


@cli.command('ate')
@click.argument('estimate', type=click.Path(exists=True, dir_okay=False))
@click.argument('reference', type=click.Path(exists=True, dir_okay=False))
@click.option('--no-align', is_flag=True, help='Compare in the stored frames')
@click.pass_context
def ate(ctx: click.Context, estimate: str, reference: str, no_align: bool):
    """Absolute trajectory error of ESTIMATE against REFERENCE."""
    try:
        rot, trans = absolute_trajectory_error(
            load_g2o(estimate), load_g2o(reference), align=not no_align
        )
    except (PGOError, OSError) as e:
        _fail(ctx, e)
    click.echo(f"ATE rotation:    {rot:.6g} rad")
    click.echo(f"ATE translation: {trans:.6g} m")


@cli.command('info')
def info():
    """Show version and linear-algebra backend."""
    backend = "CHOLMOD (scikit-sparse)" if HAS_CHOLMOD else "SuperLU (scipy)"
    click.echo(f"pgo {__version__}")
    click.echo(f"Sparse factorization: {backend}")
    click.echo(f"Worker threads: {MAX_THREADS}")


cli.add_command(profile)
cli.add_command(validate)
cli.add_command(stats)

if __name__ == '__main__':
    cli()
