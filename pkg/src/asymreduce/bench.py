"""Benchmark orchestration: single runs, scaling sweeps and ablations.

Quality is reported as the relative divergence of the final patch tokens
from the unreduced forward pass. It is a proxy for reconstruction error,
not a reconstruction metric.
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .backbone import (
    Backbone,
    forward,
    gen_synthetic_sequence,
    reference_forward,
    relative_divergence,
)
from .config import ReductionConfig, ReductionPlan, resolve_plan
from .flops import FlopReport, count_flops
from .kv_path import KvMode
from .query_path import QueryReducer, length_adaptive_rq, reduce_queries
from .schedule import (
    DEFAULT_BASE_R,
    DEFAULT_PROBE_R,
    LayerTierSchedule,
    build_schedule,
    probe_sensitivity,
)

__all__ = [
    "RunResult",
    "timed",
    "run_config",
    "probe_default_schedule",
    "named_configs",
    "bench_scaling",
    "ablate",
    "write_csv",
    "SCALING_COLUMNS",
    "ABLATION_COLUMNS",
    "ABLATION_AXES",
]

SCALING_COLUMNS = ("S", "config", "time_s", "flops", "divergence")
ABLATION_COLUMNS = ("axis", "value", "S", "time_s", "match_time_s", "flops", "divergence")
ABLATION_AXES = ("rq", "rkv", "l", "G", "kv_mode")


@dataclass
class RunResult:
    output: np.ndarray
    plan: ReductionPlan
    flops: FlopReport
    time_s: float | None
    divergence: float | None


def timed(fn, repeats: int = 1):
    """Call ``fn`` ``repeats`` times; return the last result and the median time."""
    times, result = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)


def run_config(
    model: Backbone,
    X,
    config: ReductionConfig | ReductionPlan,
    baseline: np.ndarray | None = None,
    repeats: int = 1,
    timing: bool = True,
) -> RunResult:
    spec = model.spec
    S = X.shape[0]
    plan = (
        config
        if isinstance(config, ReductionPlan)
        else resolve_plan(config, S, spec.n_global, spec.excluded_global_layers)
    )
    if timing:
        out, t = timed(lambda: forward(model, X, plan), repeats)
    else:
        out, t = forward(model, X, plan), None
    div = None if baseline is None else relative_divergence(out, baseline, spec.special_count)
    return RunResult(out, plan, count_flops(spec, S, plan), t, div)


def probe_default_schedule(
    model: Backbone,
    base_r_kv: int = 1,
    seed: int = 0,
    frames: int = DEFAULT_PROBE_R,
    n_jobs: int = 1,
) -> LayerTierSchedule:
    """Probe ``model`` on a seeded smooth sequence and build a default schedule."""
    spec = model.spec
    X = gen_synthetic_sequence(frames, spec.p_patch, spec.d, "smooth_walk", seed)
    report = probe_sensitivity(model, X, DEFAULT_BASE_R, DEFAULT_PROBE_R, n_jobs=n_jobs)
    return build_schedule(report, base_r_kv)


def named_configs(schedule: LayerTierSchedule | None = None) -> dict[str, ReductionConfig]:
    """Standard comparison points for scaling runs."""
    return {
        "unreduced": ReductionConfig.identity(),
        "length_adaptive": ReductionConfig(multiplier_l=1),
        "full": ReductionConfig(multiplier_l=3, schedule=schedule),
    }


def _map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def bench_scaling(
    model: Backbone,
    S_values,
    configs: dict[str, ReductionConfig],
    seed: int = 0,
    mode: str = "smooth_walk",
    repeats: int = 1,
    jobs: int = 1,
) -> list[dict]:
    """Time, FLOPs and divergence of every config at every frame count.

    With ``jobs > 1`` runs execute concurrently and ``time_s`` is left empty,
    since overlapping runs make wall-clock numbers meaningless.
    """
    spec = model.spec
    timing = jobs <= 1
    rows = []
    for S in S_values:
        X = gen_synthetic_sequence(S, spec.p_patch, spec.d, mode, seed)
        baseline = reference_forward(model, X)

        def one(item):
            name, cfg = item
            res = run_config(model, X, cfg, baseline, repeats, timing)
            return {
                "S": S,
                "config": name,
                "time_s": res.time_s,
                "flops": res.flops.total,
                "divergence": res.divergence,
            }

        rows.extend(_map(one, list(configs.items()), jobs))
    return rows


def _ablation_config(axis: str, value, S: int, base: ReductionConfig) -> ReductionConfig:
    if axis == "rq":
        return replace(base, r_q_override=int(value), r_kv_override=1)
    if axis == "rkv":
        return replace(base, r_q_override=1, r_kv_override=int(value))
    if axis == "l":
        return replace(base, r_q_override=1, r_kv_override=base.r_kv_override or 8,
                       multiplier_l=int(value))
    if axis == "G":
        return replace(base, r_q_override=base.r_q_override or max(2, length_adaptive_rq(S)),
                       r_kv_override=1, group_size=int(value))
    if axis == "kv_mode":
        return replace(base, r_q_override=1, kv_mode=KvMode(value))
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def ablate(
    model: Backbone,
    axis: str,
    values,
    S: int,
    seed: int = 0,
    mode: str = "smooth_walk",
    repeats: int = 1,
    schedule: LayerTierSchedule | None = None,
    base: ReductionConfig | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Sweep one axis, holding the others at their defaults.

    Axes: ``rq`` (key-value factor fixed at 1), ``rkv`` (query factor fixed
    at 1), ``l`` (query 1, key-value 8; probes a schedule when none is
    given), ``G`` (query merging only) and ``kv_mode``. ``match_time_s`` is
    the time of the query merging step (matching plus averaging) alone.
    """
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    spec = model.spec
    base = base or ReductionConfig()
    if axis == "l":
        if schedule is None:
            schedule = probe_default_schedule(model, seed=seed)
        base = replace(base, schedule=schedule)
    X = gen_synthetic_sequence(S, spec.p_patch, spec.d, mode, seed)
    baseline = reference_forward(model, X)
    flat = X.reshape(S * spec.P, spec.d)
    timing = jobs <= 1

    def one(value):
        cfg = _ablation_config(axis, value, S, base)
        res = run_config(model, X, cfg, baseline, repeats, timing)
        match_t = 0.0
        if res.plan.r_q > 1 and timing:
            reducer = QueryReducer(res.plan.r_q, res.plan.group_size)
            _, match_t = timed(lambda: reduce_queries(flat, S, spec.P, reducer), repeats)
        return {
            "axis": axis,
            "value": value,
            "S": S,
            "time_s": res.time_s,
            "match_time_s": match_t if timing else None,
            "flops": res.flops.total,
            "divergence": res.divergence,
        }

    return _map(one, list(values), jobs)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, KvMode):
        return v.value
    return v


def write_csv(rows: list[dict], path: str | os.PathLike, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
