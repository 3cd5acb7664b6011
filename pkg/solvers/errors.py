"""Exceptions raised by the bang-bang solver library."""


class BangBangError(Exception):
    """Base class for all library errors."""


class MeshError(BangBangError):
    """Invalid mesh parameters or nodal data that does not fit a mesh."""


class NonConvergenceError(BangBangError):
    """An inner nonlinear solve exceeded its iteration cap."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class ConfigError(BangBangError):
    """Invalid experiment or solver configuration."""


class ExportError(BangBangError):
    """Writing an output file failed."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path


class FactorizationError(BangBangError):
    """A sparse direct factorization failed."""
