"""Exception types shared across the package."""


class GaussQIError(Exception):
    """Base class for all errors raised by this package."""


class StarNotFound(GaussQIError):
    """No admissible interpolation star exists for a node.

    Raised when every candidate neighbour combination within the search
    radius has a scaled Vandermonde determinant below the threshold.
    """

    def __init__(self, owner, best_det=None, message=None):
        self.owner = owner
        self.best_det = best_det
        if message is None:
            message = f"no admissible star for node {owner}"
            if best_det is not None:
                message += f" (best |det| = {best_det:.3e})"
        super().__init__(message)


class IllConditioned(GaussQIError):
    """A local normal system exceeded the condition-number limit."""

    def __init__(self, cond, limit, message=None):
        self.cond = cond
        self.limit = limit
        if message is None:
            message = f"condition number {cond:.3e} exceeds limit {limit:.3e}"
        super().__init__(message)


class EmptyOmega(GaussQIError):
    """The refinement region admits no fine-scale grid points."""


class UncoveredNode(GaussQIError):
    """A node belongs to no local least-squares neighbourhood."""

    def __init__(self, nodes, message=None):
        self.nodes = tuple(nodes)
        if message is None:
            message = f"nodes not covered by any neighbourhood: {self.nodes}"
        super().__init__(message)


class QuadratureFailure(GaussQIError):
    """A numerical integration routine failed to converge."""


class ConfigError(GaussQIError):
    """An experiment configuration is missing or inconsistent."""
