from typing import Any, List, Optional, Sequence, Tuple


class PolCompError(Exception):
    """Base class for every error raised by the simulator."""

    category = "simulation"
    exit_code = 3


class ContractViolationError(PolCompError, ValueError):
    """An input does not satisfy the documented precondition (e.g. not normalized)."""

    category = "contract"


class VoltageRangeError(PolCompError, ValueError):
    """A drive voltage lies outside the channel's control range."""

    category = "range"

    def __init__(self, voltage: float, v_min: float, v_max: float):
        self.voltage = voltage
        self.v_min = v_min
        self.v_max = v_max
        super().__init__(
            f"voltage {voltage:.6g} V outside control range [{v_min:.6g}, {v_max:.6g}] V"
        )


class DecompositionError(PolCompError):
    """The target unitary cannot be reached within the retardance ranges."""

    category = "decomposition"


class CalibrationParseError(PolCompError, ValueError):
    """A calibration table file is malformed."""

    category = "calibration"
    exit_code = 2

    def __init__(self, message: str, line_number: Optional[int] = None, path: str = ""):
        self.line_number = line_number
        self.path = path
        location = f"{path}:{line_number}: " if line_number is not None else ""
        super().__init__(f"{location}{message}")


class ConfigError(PolCompError):
    """Scenario configuration failed validation; carries (field path, message) issues."""

    category = "config"
    exit_code = 2

    def __init__(self, issues: Sequence[Tuple[str, str]]):
        self.issues: List[Tuple[str, str]] = list(issues)
        super().__init__(
            "; ".join(f"{path or '<root>'}: {message}" for path, message in self.issues)
        )


class ObjectiveError(PolCompError):
    """An objective evaluation could not produce an estimate."""

    category = "objective"


class SearchIterationError(PolCompError):
    """A search iteration was aborted; the prior state is kept."""

    category = "search"

    def __init__(self, prior_state: Any, cause: BaseException):
        self.prior_state = prior_state
        self.cause = cause
        super().__init__(f"search iteration aborted: {cause}")


class ControlLoopError(PolCompError):
    """The control loop stopped early; `trace` holds the records gathered so far."""

    category = "control-loop"

    def __init__(self, trace: Any, cause: BaseException):
        self.trace = trace
        self.cause = cause
        super().__init__(f"control loop stopped: {cause}")


class ScenarioError(PolCompError):
    """A scenario could not be executed."""

    category = "scenario"


class StorageError(PolCompError):
    """Reading or writing a run file failed."""

    category = "io"
    exit_code = 4
