"""
Scenario orchestration: seeded single runs (optimize, drift_log), batches,
run summaries and file output.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.exceptions import ControlLoopError, PolCompError, ScenarioError
from app.logger import TimingLogger, get_logger
from app.schemas import (
    BatchSummary,
    RunStatus,
    RunSummary,
    ScenarioConfig,
    ScenarioKind,
)
from app.services.optimizer import ControlTrace, TraceRecord, initial_state, run_control_loop
from app.services.plant import CompensationPlant, build_plant, build_search
from app.storage import crud

# Create logger for this module
logger = get_logger(__name__)

U64_MASK = 2**64 - 1
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def splitmix64(value: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit mixing function."""
    z = (value + 0x9E3779B97F4A7C15) & U64_MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64_MASK
    return z ^ (z >> 31)


def derive_seed(root_seed: int, run_index: int) -> int:
    """Child seed of a batch run: splitmix64(root + index) mod 2^64."""
    return splitmix64((root_seed + run_index) & U64_MASK)


def run_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for the plant (noise, drift) and the search."""
    plant_seq, search_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(plant_seq), np.random.default_rng(search_seq)


@dataclass
class RunResult:
    summary: RunSummary
    records: List[TraceRecord] = field(default_factory=list)
    trace: Optional[ControlTrace] = None


def _recoveries(
    trace: ControlTrace, plant: CompensationPlant, level: float
) -> List[float]:
    times = []
    for event in plant.jump_events:
        if event.arm != "a":
            continue
        recovered = next(
            (
                it
                for it in trace.iterations
                if it.elapsed_s > event.elapsed_s and it.q_min <= level
            ),
            None,
        )
        if recovered is not None:
            times.append(recovered.elapsed_s - event.elapsed_s)
    return times


def summarize_optimize(
    trace: ControlTrace, plant: CompensationPlant, cfg: ScenarioConfig
) -> RunSummary:
    level = cfg.converged_level
    iters_to_floor = next(
        (it.iteration for it in trace.iterations if it.q_min <= level), None
    )
    recovery_times = _recoveries(trace, plant, level)
    return RunSummary(
        seed=cfg.seed,
        kind=ScenarioKind.OPTIMIZE,
        initial_qber=trace.baseline.qber_est,
        final_qber=(
            trace.iterations[-1].q_min if trace.iterations else trace.baseline.qber_est
        ),
        iters_to_floor=iters_to_floor,
        recovered_jumps=len(recovery_times),
        jump_recovery_times=recovery_times,
        jumps=sum(1 for event in plant.jump_events if event.arm == "a"),
        iterations=len(trace.iterations),
        elapsed_s=trace.iterations[-1].elapsed_s if trace.iterations else 0.0,
    )


def run_optimize(cfg: ScenarioConfig, base_dir: str = ".") -> RunResult:
    """Closed-loop stochastic search against the simulated link."""
    plant_rng, search_rng = run_streams(cfg.seed)
    search_cfg = build_search(cfg)
    state = initial_state(search_cfg)
    plant = build_plant(cfg, plant_rng, state.center, base_dir)

    try:
        trace = run_control_loop(plant, search_cfg, cfg.duration_s, search_rng, state)
    except ControlLoopError as exc:
        partial: ControlTrace = exc.trace
        summary = summarize_optimize(partial, plant, cfg) if partial.records else None
        summary = (summary or RunSummary(seed=cfg.seed)).model_copy(
            update={"status": RunStatus.FAILED, "error_message": str(exc)}
        )
        return RunResult(summary=summary, records=partial.records, trace=partial)

    return RunResult(
        summary=summarize_optimize(trace, plant, cfg), records=trace.records, trace=trace
    )


def run_drift_log(cfg: ScenarioConfig, base_dir: str = ".") -> RunResult:
    """
    Log arm A with the compensator held at the starting voltages: one reference
    Stokes snapshot and one QBER block per sampling period.
    """
    plant_rng, _ = run_streams(cfg.seed)
    voltages = initial_state(build_search(cfg)).center
    plant = build_plant(cfg, plant_rng, voltages, base_dir)

    plant.measure(voltages)
    records = [plant.reading()]
    samples = int(math.floor(cfg.duration_s / cfg.drift_sample_period_s + 1e-9))
    try:
        for _ in range(samples):
            plant.apply_due_disturbances()
            plant.advance(cfg.drift_sample_period_s)
            plant.measure(voltages)
            records.append(plant.reading())
    except PolCompError as exc:
        logger.error("Drift log aborted", error=str(exc), samples=len(records))
        return RunResult(
            summary=RunSummary(
                seed=cfg.seed,
                kind=ScenarioKind.DRIFT_LOG,
                status=RunStatus.FAILED,
                error_message=str(exc),
                initial_qber=records[0].qber_est,
                final_qber=records[-1].qber_est,
            ),
            records=records,
        )

    jumps = sum(1 for event in plant.jump_events if event.arm == "a")
    logger.info("Drift log finished", samples=len(records), jumps=jumps)
    return RunResult(
        summary=RunSummary(
            seed=cfg.seed,
            kind=ScenarioKind.DRIFT_LOG,
            initial_qber=records[0].qber_est,
            final_qber=records[-1].qber_est,
            jumps=jumps,
            elapsed_s=records[-1].elapsed_s,
        ),
        records=records,
    )


def execute_run(cfg: ScenarioConfig, base_dir: str = ".") -> RunResult:
    """Run one optimize or drift_log scenario; runtime failures are reported in the summary."""
    runners = {ScenarioKind.OPTIMIZE: run_optimize, ScenarioKind.DRIFT_LOG: run_drift_log}
    if cfg.kind not in runners:
        raise ScenarioError(f"{cfg.kind.value} is not a single-run scenario")
    with TimingLogger(logger, f"{cfg.kind.value}_run", seed=cfg.seed):
        return runners[cfg.kind](cfg, base_dir)


def write_run(result: RunResult, prefix: str) -> None:
    crud.write_trace_csv(f"{prefix}_trace.csv", result.records)
    crud.write_summary_csv(f"{prefix}_summary.csv", [result.summary])
    crud.write_run_json(f"{prefix}_summary.json", result.summary)


def run_scenario(cfg: ScenarioConfig, base_dir: str = ".", write: bool = True) -> RunResult:
    """
    Execute a single scenario deterministically under cfg.seed and write its
    trace and summary. A failed run still flushes its partial trace before
    ScenarioError is raised.
    """
    result = execute_run(cfg, base_dir)
    if write:
        write_run(result, cfg.output_prefix)
    if result.summary.status == RunStatus.FAILED:
        raise ScenarioError(result.summary.error_message or "run failed")
    logger.info(
        "Scenario finished",
        kind=cfg.kind.value,
        seed=cfg.seed,
        initial_qber=result.summary.initial_qber,
        final_qber=result.summary.final_qber,
        iters_to_floor=result.summary.iters_to_floor,
    )
    return result


def _batch_run(args: Tuple[ScenarioConfig, str, bool]) -> RunSummary:
    cfg, base_dir, write = args
    try:
        result = execute_run(cfg, base_dir)
        if write:
            crud.write_trace_csv(f"{cfg.output_prefix}_trace.csv", result.records)
        return result.summary
    except PolCompError as exc:
        logger.error("Batch run failed", seed=cfg.seed, error=str(exc))
        return RunSummary(
            seed=cfg.seed,
            kind=cfg.kind,
            status=RunStatus.FAILED,
            error_message=str(exc),
        )


def aggregate(cfg: ScenarioConfig, runs: List[RunSummary]) -> BatchSummary:
    iterations = [run.iters_to_floor for run in runs if run.iters_to_floor is not None]
    finals = [run.final_qber for run in runs if run.final_qber is not None]
    successes = sum(
        1
        for run in runs
        if run.iters_to_floor is not None and run.iters_to_floor <= cfg.success_iterations
    )
    quantiles = (
        {f"q{int(round(q * 100)):02d}": float(np.quantile(finals, q)) for q in QUANTILES}
        if finals
        else {}
    )
    return BatchSummary(
        root_seed=cfg.seed,
        runs=runs,
        failed_runs=sum(1 for run in runs if run.status == RunStatus.FAILED),
        median_iters_to_floor=float(np.median(iterations)) if iterations else None,
        success_fraction=successes / len(runs),
        final_qber_quantiles=quantiles,
    )


def batch_configs(cfg: ScenarioConfig) -> List[ScenarioConfig]:
    """Per-run configs with derived seeds and per-run output prefixes."""
    return [
        cfg.model_copy(
            update={
                "kind": cfg.batch_kind,
                "seed": derive_seed(cfg.seed, index),
                "output_prefix": f"{cfg.output_prefix}_run{index:03d}",
            }
        )
        for index in range(cfg.batch_size)
    ]


def run_batch(cfg: ScenarioConfig, base_dir: str = ".", write: bool = True) -> BatchSummary:
    """Run batch_size independent seeded scenarios and aggregate their summaries."""
    jobs = [(run_cfg, base_dir, write) for run_cfg in batch_configs(cfg)]
    with TimingLogger(
        logger, "batch", root_seed=cfg.seed, batch_size=cfg.batch_size, workers=cfg.workers
    ):
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                runs = list(pool.map(_batch_run, jobs))
        else:
            runs = [_batch_run(job) for job in jobs]

    batch = aggregate(cfg, runs)
    if write:
        crud.write_summary_csv(f"{cfg.output_prefix}_summary.csv", runs)
        crud.write_batch_json(f"{cfg.output_prefix}_batch.json", batch)
    logger.info(
        "Batch finished",
        runs=len(runs),
        failed=batch.failed_runs,
        success_fraction=batch.success_fraction,
        median_iters_to_floor=batch.median_iters_to_floor,
    )
    return batch
