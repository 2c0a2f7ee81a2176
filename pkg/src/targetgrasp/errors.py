"""Error types shared across the pipeline.

Every error carries a short machine-readable ``kind`` so the CLI and HTTP
layers can map failures to structured responses without string matching.
"""


class TargetGraspError(Exception):
    kind = "error"

    def payload(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class RangeError(TargetGraspError):
    """A value is outside its documented range (angles, widths, scores)."""

    kind = "range"


class DomainError(TargetGraspError):
    """An argument violates a geometric precondition (e.g. depth <= 0)."""

    kind = "domain"


class UnrepresentableError(TargetGraspError):
    """A rotation cannot be expressed within the half-range Euler limits."""

    kind = "unrepresentable"


class NoTargetError(TargetGraspError):
    """Guidance did not resolve to any usable target point."""

    kind = "no-target"


class PatchError(TargetGraspError):
    """A region patch could not be extracted (out of view, too few points)."""

    kind = "patch"


class PlacementError(TargetGraspError):
    """Clutter generation failed to place an object without contact."""

    kind = "placement"


class DegenerateError(TargetGraspError):
    """Input collapses to a degenerate configuration (coincident points)."""

    kind = "degenerate"


class FormatError(TargetGraspError):
    """A file or payload does not match its documented format."""

    kind = "format"


class ConfigError(TargetGraspError):
    """Invalid configuration values (non-finite stats, bad anchor table)."""

    kind = "config"
