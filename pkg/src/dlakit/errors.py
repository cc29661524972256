"""Exception hierarchy.  CLI exit codes hang off these classes."""


class DLAKitError(Exception):
    exit_code = 1
    kind = "runtime"


class DomainError(DLAKitError, ValueError):
    """Argument outside an operation's domain (bad vertex, bad tag, ...)."""

    exit_code = 2
    kind = "domain"


class ConstructionError(DLAKitError):
    """A random graph could not be built within its retry budget."""

    kind = "construction"


class BudgetError(DLAKitError):
    """A walk exceeded its hard step cap."""

    exit_code = 3
    kind = "budget"


class SamplingError(DLAKitError):
    """Attachment sampling ran out of relaunches."""

    kind = "sampling"


class SolverError(DLAKitError):
    """A linear solve failed to converge."""

    kind = "solver"


class ResourceError(DLAKitError):
    """A configured memory or combinatorial budget would be exceeded."""

    exit_code = 3
    kind = "resource"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
