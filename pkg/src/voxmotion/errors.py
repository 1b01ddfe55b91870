"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in ``cli.py``: input/format problems
exit 2, planning failures exit 3, numeric/training failures exit 4.
"""


class VoxmotionError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VoxmotionError):
    """Invalid specs, dimensions, or configuration values."""


class InputError(VoxmotionError):
    """Invalid runtime arguments (shape mismatches, bad ranges, ...)."""


class FormatError(VoxmotionError):
    """Corrupt or unrecognized serialized files."""


class PlanningError(VoxmotionError):
    """Base class for global-planning failures."""


class UnreachableEndpoint(PlanningError):
    """Start or goal cell is blocked in the inflated grid."""


class NoPath(PlanningError):
    """No path connects start and goal."""


class NumericError(VoxmotionError):
    """Non-finite values encountered during model evaluation."""


class TrainingError(VoxmotionError):
    """Training diverged or could not run."""
