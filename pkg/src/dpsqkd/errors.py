"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A structurally valid input combination that cannot be simulated
    (grid mismatch, interferometer delay mismatch, infeasible budget)."""


class ScheduleOverlapError(ValueError):
    """Two users' return windows (or a return window and a stray window)
    collide.  Carries the offending pair and a suggested fix."""

    def __init__(self, message, pair=None, suggested_storage_delta_m=None):
        super().__init__(message)
        self.pair = pair
        self.suggested_storage_delta_m = suggested_storage_delta_m


class ProtocolDesyncError(ValueError):
    """A detection record points at a slot Bob never modulated."""


class EstimationError(ValueError):
    """Error-rate estimation was asked to work on an empty sample."""


class SaturationWarning(UserWarning):
    """A formula was evaluated outside its validity region and clamped."""
