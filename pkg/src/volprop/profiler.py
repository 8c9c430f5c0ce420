"""Stage-level runtime instrumentation.

Profiling is off by default and never touches the data path, so outputs
are identical with it on or off. Stages mirror the pipeline: one-time
state initialization (encoding every frame), per-slice encode, memory
attention, mask decode, memory encode, and the enclosing tracking step.
"""

from __future__ import annotations

import csv
import io
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import IoFailure


class Stage(Enum):
    STATE_INIT = "StateInit"
    ENCODE = "Encode"
    MEMORY_ATTENTION = "MemoryAttention"
    MEMORY_ENCODE = "MemoryEncode"
    DECODE = "Decode"
    TRACKING = "Tracking"


@dataclass(frozen=True)
class StageTiming:
    stage: Stage
    duration_ms: float
    slice_index: int
    run_id: str


class StageProfiler:
    """Collects wall-clock stage timings for one run when enabled.

    run_id conventionally starts with the config_id followed by a pass
    label ("<config_id>/axial-fwd"), which is how the CSV export recovers
    its config_id column.
    """

    def __init__(self, run_id: str = "", enabled: bool = True):
        self.run_id = run_id
        self.enabled = enabled
        self.timings: list[StageTiming] = []

    @contextmanager
    def stage(self, stage: Stage, slice_index: int = -1):
        if not self.enabled:
            yield
            return
        t0 = time.perf_counter_ns()
        try:
            yield
        finally:
            dt_ms = (time.perf_counter_ns() - t0) / 1e6
            self.timings.append(StageTiming(stage, dt_ms, slice_index, self.run_id))


NULL_PROFILER = StageProfiler(enabled=False)


def record(run: Callable[[StageProfiler], Any], run_id: str = "run") -> list[StageTiming]:
    """Execute a propagation run with profiling enabled; return its timings."""
    prof = StageProfiler(run_id=run_id, enabled=True)
    run(prof)
    return prof.timings


def _quantiles(values: list[float]) -> dict[str, float]:
    a = np.asarray(values, dtype=np.float64)
    return {
        "count": int(a.size),
        "mean_ms": float(a.mean()),
        "median_ms": float(np.percentile(a, 50)),
        "p95_ms": float(np.percentile(a, 95)),
        "min_ms": float(a.min()),
        "q1_ms": float(np.percentile(a, 25)),
        "q3_ms": float(np.percentile(a, 75)),
        "max_ms": float(a.max()),
    }


def summarize(timings: list[StageTiming]) -> list[dict]:
    """Per (run_id, stage) summary rows with boxplot-ready quantiles."""
    groups: dict[tuple[str, str], list[float]] = {}
    for t in timings:
        groups.setdefault((t.run_id, t.stage.value), []).append(t.duration_ms)
    rows = []
    for (run_id, stage), values in sorted(groups.items()):
        row = {"run_id": run_id, "config_id": run_id.split("/", 1)[0], "stage": stage}
        row.update(_quantiles(values))
        rows.append(row)
    return rows


def report(timings: list[StageTiming], fmt: str, path: str | Path) -> Path:
    """Write a stage-timing summary as csv or json."""
    if not timings:
        raise IoFailure("no timings to report")
    rows = summarize(timings)
    path = Path(path)
    try:
        if fmt == "csv":
            buf = io.StringIO()
            writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
            path.write_text(buf.getvalue())
        elif fmt == "json":
            path.write_text(json.dumps(rows, indent=2, sort_keys=True))
        else:
            raise IoFailure(f"unknown report format {fmt!r}")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return path


def write_raw_csv(timings: list[StageTiming], path: str | Path) -> Path:
    """Raw per-measurement export: run_id, config_id, stage, slice_index, duration_ms."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["run_id", "config_id", "stage", "slice_index", "duration_ms"])
    for t in timings:
        writer.writerow([t.run_id, t.run_id.split("/", 1)[0], t.stage.value, t.slice_index, f"{t.duration_ms:.3f}"])
    try:
        path.write_text(buf.getvalue())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return path
