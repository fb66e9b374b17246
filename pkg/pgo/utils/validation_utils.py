"""Structural checks of pose graphs with readable findings and suggestions."""

from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from pgo.core.errors import ParseError
from pgo.core.g2o import load_g2o
from pgo.core.graph import PoseGraph, connected_components
from pgo.core.se3 import PI_TOLERANCE

PSD_TOLERANCE = 1e-12


class GraphIssue:
    """A validation finding with context and a suggestion."""

    def __init__(
        self,
        message: str,
        severity: str = "error",
        file_path: Optional[str] = None,
        line_number: Optional[int] = None,
        edge_index: Optional[int] = None,
        suggestion: Optional[str] = None
    ):
        self.message = message
        self.severity = severity
        self.file_path = file_path
        self.line_number = line_number
        self.edge_index = edge_index
        self.suggestion = suggestion

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def format(self) -> str:
        """Format the finding with its location."""
        parts = []

        if self.file_path:
            location = self.file_path
            if self.line_number:
                location += f":{self.line_number}"
            parts.append(f"📄 {location}")

        icon = "❌" if self.is_error else "⚠️ "
        where = f"edge {self.edge_index}: " if self.edge_index is not None else ""
        parts.append(f"{icon} {where}{self.message}")

        if self.suggestion:
            parts.append(f"💡 Suggestion: {self.suggestion}")

        return "\n".join(parts)


def validate_graph(graph: PoseGraph, file_path: Optional[str] = None) -> List[GraphIssue]:
    issues = []

    for index, edge in enumerate(graph.edges):
        angle = edge.measurement.angle()
        if abs(angle - np.pi) < PI_TOLERANCE:
            issues.append(GraphIssue(
                f"measurement rotation angle {angle:.12f} is at pi",
                severity="warning",
                file_path=file_path,
                edge_index=index,
                suggestion="the geodesic residual is ambiguous here; prefer the chordal cost"
            ))

        info = edge.information
        if not np.allclose(info, info.T, atol=PSD_TOLERANCE):
            issues.append(GraphIssue(
                "information matrix is not symmetric",
                file_path=file_path,
                edge_index=index
            ))
        elif np.min(np.linalg.eigvalsh(info)) < -PSD_TOLERANCE:
            issues.append(GraphIssue(
                "information matrix is not positive semi-definite",
                file_path=file_path,
                edge_index=index,
                suggestion="check the sign and ordering of the 21 upper-triangular entries"
            ))

    components = connected_components(graph)
    if len(components) > 1:
        sizes = ", ".join(str(len(c)) for c in components[:5])
        issues.append(GraphIssue(
            f"graph has {len(components)} connected components (sizes {sizes})",
            severity="warning",
            file_path=file_path,
            suggestion="each component gets its own gauge; fix one variable per component"
        ))

    if graph.num_variables and not graph.fixed_ids():
        issues.append(GraphIssue(
            "no fixed variable",
            severity="warning",
            file_path=file_path,
            suggestion=f"add 'FIX {min(graph.variables)}' to remove the gauge freedom"
        ))

    return issues


def validate_file(path: Union[str, Path]) -> List[GraphIssue]:
    """Parse and validate a g2o file; parse failures become a single issue."""
    try:
        graph = load_g2o(path)
    except ParseError as e:
        suggestion = None
        if "self loop" in e.reason:
            suggestion = "remove the edge; a measurement must link two distinct vertices"
        return [GraphIssue(e.reason, file_path=str(path), line_number=e.line, suggestion=suggestion)]
    return validate_graph(graph, str(path))
