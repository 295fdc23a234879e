"""Exception types shared across modules."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(ValueError):
    """Invalid experiment or ensemble configuration; ``field`` names the culprit."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalFlag(RuntimeError):
    """A numerical guard tripped; results past this point are not trustworthy."""


class StreamError(NumericalFlag):
    """A non-positive off-diagonal entry appeared beyond the scanned prefix."""

    def __init__(self, index, value):
        self.index = int(index)
        self.value = float(value)
        super().__init__(f"a({self.index}) = {self.value!r} <= 0 beyond the start-index scan")


class ConvergenceError(NumericalFlag):
    """An iterative solver hit its iteration cap."""


class UnreliableWindowError(NumericalFlag):
    """A fit window reaches data flagged as contaminated."""
