"""Exception types raised across the package."""


class MocapFitError(Exception):
    pass


class ConfigurationError(MocapFitError, ValueError):
    """Dimension mismatch, bad layout, or an invalid configuration value."""


class DepthViolation(MocapFitError):
    """One or more points sit closer to the camera plane than ``z_min``."""

    def __init__(self, indices, z_min):
        self.indices = [int(i) for i in indices]
        self.z_min = z_min
        shown = self.indices[:10]
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"camera-frame depth below z_min={z_min} at indices {shown}{more}")


class DegenerateFacet(MocapFitError):
    pass


class EmptyObservation(MocapFitError):
    pass


class DivergenceError(MocapFitError):
    """Raised by the optimizers; ``last_state`` holds the last finite iterate."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class SceneGenError(MocapFitError):
    pass


class ParseError(MocapFitError):
    def __init__(self, message, line=None, column=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.column = column
