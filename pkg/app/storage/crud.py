import csv
import json
import math
import os
from typing import Iterable, List, Optional, Tuple

from app.exceptions import ConfigError, StorageError
from app.logger import TimingLogger, get_logger
from app.schemas import BatchSummary, RunSummary, ScenarioConfig, validate_scenario
from app.services.optimizer import TraceRecord

# Create logger for this module
logger = get_logger(__name__)

TRACE_COLUMNS = [
    "elapsed_s",
    "qber_est",
    "qber_true",
    "v1",
    "v2",
    "v3",
    "v4",
    "range_v",
    "s1",
    "s2",
    "s3",
]
SUMMARY_COLUMNS = ["seed", "initial_qber", "final_qber", "iters_to_floor", "recovered_jumps"]


def format_number(value: Optional[float]) -> str:
    """Nine significant digits; missing values become an empty field."""
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        raise StorageError(f"non-finite value {value} cannot be written")
    return format(value, ".9g")


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def trace_row(record: TraceRecord) -> List[str]:
    values = [
        record.elapsed_s,
        record.qber_est,
        record.qber_true,
        *record.voltages,
        record.range_v,
        record.stokes.s1,
        record.stokes.s2,
        record.stokes.s3,
    ]
    return [format_number(float(v)) for v in values]


def write_trace_csv(path: str, records: Iterable[TraceRecord]) -> int:
    """Write trace records to CSV; returns the number of data rows."""
    rows = 0
    with TimingLogger(logger, "write_trace_csv", path=path):
        try:
            _ensure_parent(path)
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(TRACE_COLUMNS)
                for record in records:
                    writer.writerow(trace_row(record))
                    rows += 1
        except OSError as e:
            raise StorageError(f"cannot write trace {path}: {e}") from e
    return rows


def summary_row(summary: RunSummary) -> List[str]:
    return [
        str(summary.seed),
        format_number(summary.initial_qber),
        format_number(summary.final_qber),
        format_number(summary.iters_to_floor),
        str(summary.recovered_jumps),
    ]


def write_summary_csv(path: str, summaries: Iterable[RunSummary]) -> None:
    try:
        _ensure_parent(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SUMMARY_COLUMNS)
            for summary in summaries:
                writer.writerow(summary_row(summary))
    except OSError as e:
        raise StorageError(f"cannot write summary {path}: {e}") from e
    logger.debug("Summary written", path=path)


def write_json(path: str, payload: str) -> None:
    try:
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(payload)
            f.write("\n")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def write_batch_json(path: str, batch: BatchSummary) -> None:
    write_json(path, batch.model_dump_json(indent=2))


def write_run_json(path: str, summary: RunSummary) -> None:
    write_json(path, summary.model_dump_json(indent=2))


def read_trace_csv(path: str) -> Tuple[List[str], List[List[float]]]:
    """Header and numeric rows of a trace file."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader)
            return header, [[float(value) for value in row] for row in reader]
    except (OSError, StopIteration, ValueError) as e:
        raise StorageError(f"cannot read trace {path}: {e}") from e


def load_config(path: str) -> ScenarioConfig:
    """Load and validate a JSON scenario config."""
    logger.info("Loading scenario config", path=path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise StorageError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError([("<file>", f"line {e.lineno} column {e.colno}: {e.msg}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    return validate_scenario(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return cfg.model_dump_json(indent=2)


def save_config(path: str, cfg: ScenarioConfig) -> None:
    write_json(path, dump_config(cfg))
