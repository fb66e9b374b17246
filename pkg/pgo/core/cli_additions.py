"""Secondary commands registered on the main CLI group."""

import sys
import click
import numpy as np

from pgo.core.costs import CostKind
from pgo.core.errors import PGOError
from pgo.core.g2o import load_g2o
from pgo.core.graph import connected_components
from pgo.core.metrics import normalized_chi2
from pgo.core.profile_manager import PROFILE_KEYS, ProfileManager
from pgo.utils.validation_utils import validate_file


# ============= Profile Commands =============

@click.group()
def profile():
    """Manage saved optimize profiles."""
    pass


@profile.command('save')
@click.argument('name')
@click.option('--init', help='Initializer')
@click.option('--cost', help='Fine-grained cost')
@click.option('--k', type=int, help='Minimum variables per partition')
@click.option('--gamma', type=float, help='Minimum BFS distance per partition')
@click.option('--max-iters', type=int, help='Fine-grained iteration cap')
@click.option('--distance', type=click.Choice(['hops', 'metric']), help='BFS distance')
@click.option('--deterministic/--no-deterministic', default=None, help='Single-worker HiPE')
def profile_save(name: str, **options):
    """Save a named set of optimize options."""
    ProfileManager.save_profile(name, options)
    click.echo(click.style(f"✓ Profile '{name}' saved", fg='green'))


@profile.command('show')
@click.argument('name')
def profile_show(name: str):
    """Show one profile."""
    data = ProfileManager.get_profile(name)
    if data is None:
        click.echo(f"Error: Profile '{name}' not found.", err=True)
        sys.exit(1)
    click.echo(click.style(f"{name}:", fg='cyan', bold=True))
    for key in PROFILE_KEYS:
        if key in data:
            click.echo(f"  {key}: {data[key]}")


@profile.command('list')
def profile_list():
    """List saved profiles."""
    profiles = ProfileManager.list_profiles()
    if not profiles:
        click.echo("No profiles saved. Use 'pgo profile save NAME ...' to create one.")
        return
    click.echo(f"Saved profiles ({len(profiles)}):\n")
    for name, data in sorted(profiles.items()):
        summary = ", ".join(f"{k}={v}" for k, v in sorted(data.items()))
        click.echo(f"  {click.style(name, fg='green')}: {summary}")


@profile.command('delete')
@click.argument('name')
def profile_delete(name: str):
    """Delete a profile."""
    if ProfileManager.delete_profile(name):
        click.echo(click.style(f"✓ Profile '{name}' deleted", fg='green'))
    else:
        click.echo(f"Error: Profile '{name}' not found.", err=True)
        sys.exit(1)


# ============= Validate Command =============

@click.command('validate')
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--strict', is_flag=True, help='Treat warnings as errors')
def validate(path: str, strict: bool):
    """Check a g2o file for structural problems."""
    issues = validate_file(path)
    if not issues:
        click.echo(click.style(f"✓ {path}: no issues found", fg='green'))
        return

    for issue in issues:
        click.echo(issue.format())
        click.echo()

    errors = sum(1 for i in issues if i.is_error)
    warnings = len(issues) - errors
    color = 'red' if errors else 'yellow'
    click.echo(click.style(f"{errors} error(s), {warnings} warning(s)", fg=color, bold=True))
    if errors or (strict and warnings):
        sys.exit(1)


# ============= Statistics Command =============

@click.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
def stats(path: str):
    """Show graph size, connectivity and cost at the stored estimate."""
    try:
        graph = load_g2o(path)
    except (PGOError, OSError) as e:
        click.echo(click.style(f"Error: {e}", fg='red'), err=True)
        sys.exit(1)

    click.echo(click.style(f"\n📊 {path}\n", fg='cyan', bold=True))
    click.echo(f"Variables: {click.style(str(graph.num_variables), fg='green', bold=True)}")
    click.echo(f"Edges: {click.style(str(graph.num_edges), fg='green', bold=True)}")
    click.echo(f"Fixed: {len(graph.fixed_ids())}")
    click.echo(f"Components: {len(connected_components(graph))}")

    if graph.num_variables:
        degrees = np.array([graph.degree(v) for v in graph.ids()])
        click.echo(
            f"Degree: min {degrees.min()}, mean {degrees.mean():.2f}, max {degrees.max()}"
        )

    click.echo("\nNormalized chi2 at stored estimate:")
    for kind in CostKind:
        try:
            value = normalized_chi2(graph, kind)
        except PGOError as e:
            click.echo(f"  {kind.value}: n/a ({e})")
            continue
        click.echo(f"  {kind.value}: {value:.6g}")
