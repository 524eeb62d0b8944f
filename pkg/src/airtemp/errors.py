"""Exception hierarchy shared by every stage of the pipeline."""


class AirTempError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit code."""


class DimensionError(AirTempError, ValueError):
    pass


class StateError(AirTempError, RuntimeError):
    pass


class DegenerateInputError(AirTempError, ValueError):
    pass


class DivergenceError(AirTempError, ArithmeticError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class ConfigError(AirTempError, ValueError):
    pass


class CalibrationError(AirTempError, ValueError):
    def __init__(self, message: str, achievable_coverage: float):
        super().__init__(f"{message} (achievable coverage {achievable_coverage:.6f})")
        self.achievable_coverage = achievable_coverage


class DataError(AirTempError, ValueError):
    pass


class SpecError(AirTempError, ValueError):
    pass


class UndefinedMetricError(AirTempError, ValueError):
    pass


class GridFormatError(AirTempError, ValueError):
    pass


class BadMagicError(GridFormatError):
    pass


class TruncatedGridError(GridFormatError):
    pass


class VersionMismatchError(GridFormatError):
    pass


class StationFormatError(AirTempError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class DuplicateRecordError(StationFormatError):
    def __init__(self, station_id: str, timestamp: str, line: int | None = None):
        super().__init__(f"duplicate record for station {station_id} at {timestamp}", line)
        self.station_id = station_id
