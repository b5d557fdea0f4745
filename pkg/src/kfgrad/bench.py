"""Timing of one full covariance gradient by each method.

The test system is the constant-velocity model in ``k`` spatial dimensions
(state ``d = 2k``, measurement ``m = k``), simulated with the default
noise levels. Every timed call includes the filter pass.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .backprop import backward
from .fdcheck import fd_full
from .filter import run_filter
from .linalg import count_ops
from .loss import NllLoss
from .sensitivity import full_gradient_forward
from .sim import SimConfig, default_R_true, model_from_sim, simulate

__all__ = ["BenchRow", "bench_problem", "gradient_call", "run_bench", "write_bench", "METHODS"]

METHODS = ("backward", "sensitivity", "fd")


@dataclass
class BenchRow:
    method: str
    d: int
    m: int
    N: int
    repetitions: int
    median_ms: float
    multiplies: int
    ratio_to_backward: float | None = None


def bench_problem(d: int, N: int, seed: int = 0):
    """Constant-velocity model of state dimension ``d`` and simulated data."""
    if d % 2 or d < 2:
        raise ValueError(f"state dimension must be even and >= 2, got {d}")
    k = d // 2
    cfg = SimConfig(N=N, dim=k, R_true=default_R_true(k), seed=seed)
    traj = simulate(cfg)
    return model_from_sim(cfg, cfg.R_true), traj.measurements


def gradient_call(method: str, model, ys, target: str = "R"):
    """Zero-argument callable computing the full gradient of ``target``."""
    spec = NllLoss()
    if method == "backward":
        def run():
            g = backward(run_filter(model, ys), spec)
            return {"R": g.dR_static, "Q": g.dQ_static, "P0": g.dP0}[target]
    elif method == "sensitivity":
        def run():
            return full_gradient_forward(model, ys, spec, target)
    elif method == "fd":
        def run():
            return fd_full(model, ys, spec, target)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return run


def _median_ms(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def run_bench(dims=(2, 4, 6, 8), N: int = 1440, reps: int = 9,
              methods=("backward", "sensitivity"), target: str = "R", seed: int = 0,
              progress=None) -> list[BenchRow]:
    if reps < 5:
        raise ValueError("at least 5 repetitions are required")
    rows = []
    for d in dims:
        model, ys = bench_problem(d, N, seed)
        base = None
        for method in methods:
            fn = gradient_call(method, model, ys, target)
            with count_ops() as ops:
                fn()
            row = BenchRow(method, d, model.m, N, reps, _median_ms(fn, reps), ops.multiplies)
            if method == "backward":
                base = row.median_ms
            rows.append(row)
            if progress is not None:
                progress(row)
        if base is not None:
            for row in rows:
                if row.d == d:
                    row.ratio_to_backward = row.median_ms / base
    return rows


def write_bench(rows, prefix, meta=None) -> tuple[Path, Path]:
    """Write ``<prefix>.csv`` (one row per cell) and ``<prefix>_summary.json``."""
    prefix = Path(prefix)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.parent / f"{prefix.name}_summary.json"
    fields = list(BenchRow.__dataclass_fields__)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    summary = {
        "meta": meta or {},
        "ratios": {
            method: {str(r.d): r.ratio_to_backward for r in rows if r.method == method}
            for method in dict.fromkeys(r.method for r in rows) if method != "backward"
        },
        "log10_median_ms": {
            method: {str(r.d): float(np.log10(r.median_ms)) for r in rows if r.method == method}
            for method in dict.fromkeys(r.method for r in rows)
        },
    }
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return csv_path, json_path
