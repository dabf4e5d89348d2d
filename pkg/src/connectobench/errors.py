"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class ContractError(RuntimeError):
    """A caller violated an API precondition (not a config value)."""


class DegenerateSeriesError(ValueError):
    """A time-series row has zero variance, so its correlations are undefined."""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"time-series row {row} has zero variance")


class DatasetParseError(ValueError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"non-finite training loss ({value}) at epoch {epoch}, batch {batch}"
        )
