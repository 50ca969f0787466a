"""Exception hierarchy.

Data problems (bad files, violated invariants) and estimation problems
(singular designs, separation, non-convergence) are kept apart so callers,
the CLI in particular, can map them to different exit codes.
"""


class MrddError(Exception):
    """Base class for every error raised by this package."""


class DataError(MrddError, ValueError):
    """Input data or configuration is malformed."""


class SchemaError(DataError):
    """A required column is missing from an input file."""

    def __init__(self, column, path=None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column {column!r}{where}")


class SharpDesignError(DataError):
    """The monitored flag disagrees with the deterministic cutoff rule."""

    def __init__(self, ids):
        self.ids = list(ids)
        shown = ", ".join(str(i) for i in self.ids[:20])
        more = f" (+{len(self.ids) - 20} more)" if len(self.ids) > 20 else ""
        super().__init__(
            f"monitored flag inconsistent with the cutoff rule for "
            f"{len(self.ids)} project(s): {shown}{more}"
        )


class EstimationError(MrddError, RuntimeError):
    """A model could not be estimated on the supplied sample."""


class RankDeficiencyError(EstimationError):
    def __init__(self, message, columns=()):
        self.columns = list(columns)
        super().__init__(message)


class SeparationError(EstimationError):
    """Perfect or quasi-complete separation: the MLE does not exist."""


class ConvergenceError(EstimationError):
    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(message)
