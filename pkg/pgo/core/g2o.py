"""
Reader and writer for the g2o text format (SE(3) subset).

    VERTEX_SE3:QUAT id x y z qx qy qz qw
    EDGE_SE3:QUAT from to x y z qx qy qz qw i11 .. i16 i22 .. i26 .. i66
    FIX id [id ...]

The 21 information entries are the row-major upper triangle of a 6x6 matrix
ordered (translation, rotation), the same ordering as pgo tangents.
"""

from pathlib import Path
from typing import IO, Iterable, List, Optional, Tuple, Union

import click
import numpy as np

from pgo.core.errors import ParseError
from pgo.core.graph import Edge, PoseGraph
from pgo.core.se3 import Pose

VERTEX_TAG = "VERTEX_SE3:QUAT"
EDGE_TAG = "EDGE_SE3:QUAT"
FIX_TAG = "FIX"

QUATERNION_TOLERANCE = 1e-3

_UPPER = np.triu_indices(6)


def _floats(tokens: List[str], line_no: int) -> List[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as e:
        raise ParseError(line_no, f"non-numeric field ({e})") from e


def _int(token: str, line_no: int) -> int:
    try:
        value = int(token)
    except ValueError as e:
        raise ParseError(line_no, f"invalid id '{token}'") from e
    if value < 0:
        raise ParseError(line_no, f"negative id {value}")
    return value


def _pose(values: List[float], line_no: int) -> Pose:
    translation, quaternion = np.array(values[:3]), np.array(values[3:7])
    norm = float(np.linalg.norm(quaternion))
    if norm == 0.0 or not np.isfinite(norm):
        raise ParseError(line_no, "quaternion has zero norm")
    if abs(norm - 1.0) > QUATERNION_TOLERANCE:
        click.echo(
            click.style(
                f"Warning: line {line_no}: quaternion norm {norm:.6f}, renormalizing",
                fg='yellow'
            ),
            err=True
        )
    return Pose.from_quaternion(translation, quaternion / norm)


def information_from_upper(values: Iterable[float]) -> np.ndarray:
    """Expand 21 row-major upper-triangular entries into a symmetric 6x6."""
    info = np.zeros((6, 6))
    info[_UPPER] = list(values)
    return info + np.triu(info, 1).T


def parse_g2o(stream: Union[IO[str], Iterable[str]]) -> PoseGraph:
    """Parse g2o text into a PoseGraph.

    Vertices referenced by an edge but never declared are created at the
    identity with a warning. Unknown tags are skipped with a warning.
    """
    vertices: List[Tuple[int, int, Pose]] = []
    edges: List[Tuple[int, int, int, Pose, np.ndarray]] = []
    fixes: List[Tuple[int, int]] = []
    seen = set()
    skipped = {}

    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        tokens = line.split()
        tag = tokens[0]

        if tag == VERTEX_TAG:
            if len(tokens) != 9:
                raise ParseError(line_no, f"{VERTEX_TAG} expects 8 fields, got {len(tokens) - 1}")
            var_id = _int(tokens[1], line_no)
            if var_id in seen:
                raise ParseError(line_no, f"duplicate vertex id {var_id}")
            seen.add(var_id)
            vertices.append((line_no, var_id, _pose(_floats(tokens[2:], line_no), line_no)))

        elif tag == EDGE_TAG:
            if len(tokens) != 31:
                raise ParseError(line_no, f"{EDGE_TAG} expects 30 fields, got {len(tokens) - 1}")
            id_from = _int(tokens[1], line_no)
            id_to = _int(tokens[2], line_no)
            if id_from == id_to:
                raise ParseError(line_no, f"self loop on vertex {id_from}")
            values = _floats(tokens[3:], line_no)
            edges.append((
                line_no,
                id_from,
                id_to,
                _pose(values[:7], line_no),
                information_from_upper(values[7:])
            ))

        elif tag == FIX_TAG:
            if len(tokens) < 2:
                raise ParseError(line_no, "FIX expects at least one id")
            fixes.extend((line_no, _int(t, line_no)) for t in tokens[1:])

        else:
            skipped[tag] = skipped.get(tag, 0) + 1

    for tag, count in sorted(skipped.items()):
        click.echo(
            click.style(f"Warning: skipped {count} line(s) with unknown tag {tag}", fg='yellow'),
            err=True
        )

    graph = PoseGraph()
    for _, var_id, pose in sorted(vertices, key=lambda v: v[1]):
        graph.add_variable(var_id, pose)

    for line_no, id_from, id_to, measurement, information in edges:
        for endpoint in (id_from, id_to):
            if endpoint not in graph:
                click.echo(
                    click.style(
                        f"Warning: line {line_no}: vertex {endpoint} not declared, "
                        f"created at identity",
                        fg='yellow'
                    ),
                    err=True
                )
                graph.add_variable(endpoint)
        graph.add_edge(Edge(id_from, id_to, measurement, information))

    for line_no, var_id in fixes:
        if var_id not in graph:
            raise ParseError(line_no, f"FIX references unknown vertex {var_id}")
        graph.variables[var_id].fixed = True

    return graph


def _fmt(values: Iterable[float]) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def write_g2o(graph: PoseGraph, header: Optional[str] = None) -> str:
    """Serialize ``graph``: vertices by ascending id, FIX lines, then edges."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for var_id in graph.ids():
        pose = graph.estimate(var_id)
        lines.append(
            f"{VERTEX_TAG} {var_id} {_fmt(pose.translation)} {_fmt(pose.quaternion())}"
        )
    fixed = graph.fixed_ids()
    if fixed:
        lines.append(f"{FIX_TAG} " + " ".join(str(i) for i in fixed))
    for edge in graph.edges:
        z = edge.measurement
        lines.append(
            f"{EDGE_TAG} {edge.id_from} {edge.id_to} {_fmt(z.translation)} "
            f"{_fmt(z.quaternion())} {_fmt(edge.information[_UPPER])}"
        )
    return "\n".join(lines) + "\n" if lines else ""


def load_g2o(path: Union[str, Path]) -> PoseGraph:
    with open(path) as f:
        return parse_g2o(f)


def save_g2o(graph: PoseGraph, path: Union[str, Path], header: Optional[str] = None):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_g2o(graph, header))
