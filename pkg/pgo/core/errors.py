"""Exceptions raised by the pose-graph toolkit."""

from typing import Optional


class PGOError(Exception):
    """Base class for every error raised by pgo."""


class AngleAtPi(PGOError):
    """The SE(3) logarithm is not unique: rotation angle is (numerically) pi."""

    def __init__(self, angle: float, edge_index: Optional[int] = None):
        self.angle = angle
        self.edge_index = edge_index
        where = f" on edge {edge_index}" if edge_index is not None else ""
        super().__init__(f"rotation angle {angle:.12f} is at pi{where}")


class RankDeficient(PGOError):
    """A matrix that must have full rank does not."""


class ParseError(PGOError):
    """Malformed g2o input."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class NotPositiveDefinite(PGOError):
    """Sparse factorization failed: the system matrix is not positive definite."""


class NoAnchor(PGOError):
    """A connected component touched by the free set has no fixed variable."""

    def __init__(self, component_ids):
        self.component_ids = sorted(component_ids)
        preview = ", ".join(str(i) for i in self.component_ids[:5])
        if len(self.component_ids) > 5:
            preview += ", ..."
        super().__init__(f"component {{{preview}}} has no fixed variable")


class SingularSystem(PGOError):
    """A linear initialization system is rank-deficient beyond its gauge."""


class EmptyInput(PGOError):
    """An operation that needs at least one element received none."""


class IdMismatch(PGOError):
    """Two graphs that must share variable ids do not."""

    def __init__(self, missing: set, extra: set):
        self.missing = missing
        self.extra = extra
        super().__init__(
            f"variable ids differ: {len(missing)} missing, {len(extra)} extra"
        )
