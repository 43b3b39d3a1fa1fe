"""
Exception hierarchy for vicsek-kinetics
"""
from typing import Optional, Sequence


class VicsekError(Exception):
    pass


class DomainError(VicsekError, ValueError):
    """An argument lies outside the domain where the operation is defined"""
    pass


class GridMismatchError(VicsekError, ValueError):
    """Fields or kernels built on incompatible grids were combined"""
    pass


class AdmissibilityError(VicsekError):
    """The unregularised director was requested where the flux vanishes"""

    def __init__(self, message: str, cell: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.cell = tuple(cell) if cell is not None else None


class StabilityError(VicsekError):
    """A time step violates a stability or positivity bound; `cfl` is the measured value"""

    def __init__(self, message: str, cfl: float, limit: float):
        super().__init__(message)
        self.cfl = cfl
        self.limit = limit


class SolverDivergenceError(VicsekError):
    """A non-finite value appeared in an iterate"""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class ConfigError(VicsekError):
    pass
