"""Markdown benchmark report rendered from a jinja2 template."""

from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Sequence, Union

from jinja2 import Environment, FileSystemLoader

from pgo.config import TEMPLATES_DIR, __version__
from pgo.core.benchmark import RunStats

REPORT_TEMPLATE = "benchmark_report.md.j2"


def group_by_dataset(stats: Sequence[RunStats]) -> Dict[str, List[RunStats]]:
    grouped: Dict[str, List[RunStats]] = OrderedDict()
    for entry in stats:
        grouped.setdefault(entry.dataset, []).append(entry)
    return grouped


def _fmt(value: float, spec: str = ".4g") -> str:
    return "-" if value != value else format(value, spec)


def render_report(stats: Sequence[RunStats], title: str = "Benchmark") -> str:
    env = Environment(
        loader=FileSystemLoader(str(TEMPLATES_DIR)),
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True
    )
    env.filters['num'] = _fmt
    template = env.get_template(REPORT_TEMPLATE)
    return template.render(
        title=title,
        version=__version__,
        datasets=group_by_dataset(stats),
        failures=[s for s in stats if not s.ok]
    )


def write_report(stats: Sequence[RunStats], path: Union[str, Path], title: str = "Benchmark"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(stats, title))
