import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.exceptions import CalibrationParseError
from app.logger import get_logger

# Create logger for this module
logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """Measured LCVR response: strictly increasing voltages, retardance per voltage."""

    voltages: np.ndarray
    retardances: np.ndarray
    source: str = ""

    def __post_init__(self):
        for name in ("voltages", "retardances"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)


def parse_calibration_lines(lines: List[str], source: str = "<string>") -> CalibrationTable:
    """
    Parse "voltage_volts retardance_radians" samples, one per line.

    Blank lines and lines starting with '#' are ignored. Voltages must be
    strictly increasing and retardances strictly decreasing and non-negative.
    Errors are reported with the 1-based line number.
    """
    samples: List[Tuple[float, float]] = []
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue

        fields = line.split()
        if len(fields) != 2:
            raise CalibrationParseError(
                f"expected 2 columns 'voltage retardance', got {len(fields)}",
                line_number,
                source,
            )
        try:
            voltage, retardance = float(fields[0]), float(fields[1])
        except ValueError:
            raise CalibrationParseError(
                f"non-numeric value in {line!r}", line_number, source
            ) from None

        if not (np.isfinite(voltage) and np.isfinite(retardance)):
            raise CalibrationParseError("non-finite value", line_number, source)
        if retardance < 0:
            raise CalibrationParseError(
                f"negative retardance {retardance}", line_number, source
            )
        if samples and voltage <= samples[-1][0]:
            raise CalibrationParseError(
                f"voltage {voltage} is not strictly increasing", line_number, source
            )
        if samples and retardance >= samples[-1][1]:
            raise CalibrationParseError(
                f"retardance {retardance} is not strictly decreasing", line_number, source
            )
        samples.append((voltage, retardance))

    if len(samples) < 2:
        raise CalibrationParseError(
            f"calibration table needs at least 2 samples, found {len(samples)}",
            path=source,
        )

    voltages, retardances = zip(*samples)
    logger.debug("Calibration table parsed", source=source, samples=len(samples))
    return CalibrationTable(np.array(voltages), np.array(retardances), source)


def load_calibration_table(path: str) -> CalibrationTable:
    """Load a calibration table from a plain-text file."""
    logger.info("Loading calibration table", path=path)
    if not os.path.isfile(path):
        raise CalibrationParseError("calibration file not found", path=path)
    with open(path, "r", encoding="utf-8") as f:
        return parse_calibration_lines(f.readlines(), source=path)
