class ConfigError(ValueError):
    """Inconsistent or invalid configuration."""


class FormatError(ValueError):
    """Malformed binary or text input."""


class InvariantError(ValueError):
    """A structural invariant (e.g. of a mixing matrix) is violated."""


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class DivergenceError(RuntimeError):
    """Training produced non-finite or exploding parameters."""

    def __init__(self, global_round: int, edge_round: int, local_iter: int, device: int | None = None):
        self.location = (global_round, edge_round, local_iter)
        self.device = device
        where = f"l={global_round}, r={edge_round}, s={local_iter}"
        if device is not None:
            where += f", device={device}"
        super().__init__(f"parameters diverged at {where}")
