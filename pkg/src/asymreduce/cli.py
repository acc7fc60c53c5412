"""Command-line entry point: ``asymreduce {run,probe,bench-scaling,ablate,schedule-show}``.

Config files are JSON documents with optional ``backbone`` and ``reduction``
sections; flags override file values. ``ASYMREDUCE_SEED`` sets the default
seed for synthetic inputs.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

from .backbone import BackboneSpec, gen_synthetic_sequence, init_backbone, reference_forward
from .bench import (
    ABLATION_AXES,
    ABLATION_COLUMNS,
    SCALING_COLUMNS,
    ablate,
    bench_scaling,
    named_configs,
    run_config,
    timed,
    write_csv,
)
from .config import ReductionConfig, default_seed, read_document
from .exceptions import ConfigurationError, InvalidInputError, ProbeError, ScheduleFormatError
from .kv_path import KvMode
from .schedule import (
    DEFAULT_BASE_R,
    DEFAULT_MULTIPLIER,
    DEFAULT_PROBE_R,
    DEFAULT_THRESHOLD,
    build_schedule,
    load_schedule,
    probe_sensitivity,
    save_schedule,
)

_DOC_SECTIONS = ("backbone", "reduction")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_doc(path):
    if path is None:
        return BackboneSpec(), ReductionConfig()
    doc = read_document(path)
    for key in doc:
        if key not in _DOC_SECTIONS:
            raise ScheduleFormatError(f"{path}: unknown field {key!r}")
    spec = BackboneSpec.from_dict(doc.get("backbone", {}), f"{path}: backbone")
    cfg = ReductionConfig.from_dict(doc.get("reduction", {}), f"{path}: reduction")
    return spec, cfg


def _spec_and_config(args) -> tuple[BackboneSpec, ReductionConfig]:
    spec, cfg = _load_doc(getattr(args, "config", None))
    if getattr(args, "spec", None):
        doc = read_document(args.spec)
        spec = BackboneSpec.from_dict(doc.get("backbone", {}), f"{args.spec}: backbone")
    overrides = {}
    for flag, name in (
        ("r_q", "r_q_override"),
        ("r_kv", "r_kv_override"),
        ("group_size", "group_size"),
        ("multiplier", "multiplier_l"),
        ("schedule", "schedule_path"),
        ("kv_mode", "kv_mode"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "no_length_adaptive", False):
        overrides["use_length_adaptive"] = False
    if overrides:
        cfg = replace(cfg, **overrides)
    return spec, cfg


def _add_model_args(p):
    p.add_argument("--config", help="JSON document with backbone/reduction sections")
    p.add_argument("--spec", help="JSON document with a backbone section (overrides --config)")
    p.add_argument("--seed", type=int, default=None,
                   help="input seed (default: $ASYMREDUCE_SEED or 0)")
    p.add_argument("--input-mode", choices=("smooth_walk", "iid"), default="smooth_walk")


def _add_reduction_args(p):
    p.add_argument("--r-q", type=int, help="fixed query reduction factor")
    p.add_argument("--r-kv", type=int, help="fixed base key-value reduction factor")
    p.add_argument("--group-size", type=int)
    p.add_argument("--multiplier", type=int, help="low-sensitivity multiplier l")
    p.add_argument("--schedule", help="layer schedule produced by 'probe'")
    p.add_argument("--kv-mode", choices=[m.value for m in KvMode])
    p.add_argument("--no-length-adaptive", action="store_true")


def cmd_run(args) -> int:
    spec, cfg = _spec_and_config(args)
    model = init_backbone(spec)
    seed = default_seed() if args.seed is None else args.seed
    X = gen_synthetic_sequence(args.frames, spec.p_patch, spec.d, args.input_mode, seed)
    baseline, t_base = (None, None)
    if not args.no_baseline:
        baseline, t_base = timed(lambda: reference_forward(model, X))
    res = run_config(model, X, cfg, baseline, args.repeats)
    plan = res.plan
    print(f"frames={args.frames} r_q={plan.r_q} r_kv={list(plan.layer_r_kv)} "
          f"G={plan.group_size} kv_mode={plan.kv_mode.value}")
    rows = res.flops.rows()
    g = 0
    for row in rows:
        row["r_kv"] = ""
        if row["kind"] == "global":
            row["r_kv"] = plan.layer_r_kv[g]
            g += 1
        print(f"  layer {row['layer']:>3} {row['kind']:<6} n_q={row['n_q']:>8} "
              f"n_kv={row['n_kv']:>8} flops={row['total_flops']}")
    print(f"flops={res.flops.total} unreduced_flops={res.flops.unreduced_total} "
          f"flop_speedup={res.flops.speedup_vs_unreduced:.3f}")
    print(f"time_s={res.time_s:.4f}" + (
        "" if baseline is None else
        f" baseline_time_s={t_base:.4f} divergence={res.divergence:.6g}"))
    if args.csv:
        columns = ("layer", "kind", "r_kv", "n_q", "n_kv", "score_flops", "value_flops",
                   "projection_flops", "total_flops")
        write_csv(rows, args.csv, columns)
    if args.summary_csv:
        write_csv(
            [{
                "S": args.frames,
                "r_q": plan.r_q,
                "r_kv": " ".join(map(str, plan.layer_r_kv)),
                "flops": res.flops.total,
                "unreduced_flops": res.flops.unreduced_total,
                "time_s": res.time_s,
                "baseline_time_s": t_base,
                "divergence": res.divergence,
            }],
            args.summary_csv,
            ("S", "r_q", "r_kv", "flops", "unreduced_flops", "time_s",
             "baseline_time_s", "divergence"),
        )
    return 0


def cmd_probe(args) -> int:
    spec, _ = _spec_and_config(args)
    if args.exclude is not None:
        spec = replace(spec, excluded_global_layers=frozenset(args.exclude))
    model = init_backbone(spec)
    seed = default_seed() if args.seed is None else args.seed
    X = gen_synthetic_sequence(args.frames, spec.p_patch, spec.d, args.input_mode, seed)
    report = probe_sensitivity(model, X, args.base_r, args.probe_r, n_jobs=args.jobs)
    schedule = build_schedule(report, args.base_r_kv, args.threshold, args.multiplier)
    for e in schedule.layers:
        tier = "excluded" if e.excluded else ("high" if schedule.is_high(e.index) else "low")
        ratio = "-" if e.ratio is None else f"{e.ratio:.4f}"
        print(f"layer {e.index:>3} ratio={ratio:>8} tier={tier:<8} r_kv={e.assigned_r_kv}")
    if args.out:
        save_schedule(schedule, args.out)
    if args.csv:
        report.to_csv(args.csv)
    return 0


def cmd_bench_scaling(args) -> int:
    spec, _ = _spec_and_config(args)
    model = init_backbone(spec)
    schedule = load_schedule(args.schedule) if args.schedule else None
    available = named_configs(schedule)
    unknown = [c for c in args.configs if c not in available]
    if unknown:
        raise ConfigurationError(f"unknown config(s) {unknown}; choose from {list(available)}")
    configs = {name: available[name] for name in args.configs}
    seed = default_seed() if args.seed is None else args.seed
    rows = bench_scaling(model, args.frames, configs, seed, args.input_mode,
                         args.repeats, args.jobs)
    _emit(rows, SCALING_COLUMNS, args.csv)
    return 0


def cmd_ablate(args) -> int:
    spec, cfg = _spec_and_config(args)
    model = init_backbone(spec)
    schedule = cfg.load_schedule()
    seed = default_seed() if args.seed is None else args.seed
    values = args.values.split(",")
    if args.axis != "kv_mode":
        values = _int_list(args.values)
    rows = ablate(model, args.axis, values, args.frames, seed, args.input_mode,
                  args.repeats, schedule, replace(cfg, schedule=None), args.jobs)
    _emit(rows, ABLATION_COLUMNS, args.csv)
    return 0


def cmd_schedule_show(args) -> int:
    schedule = load_schedule(args.path)
    print(f"base_r_kv={schedule.base_r_kv} threshold={schedule.threshold} "
          f"multiplier_l={schedule.multiplier_l}")
    for e in schedule.layers:
        tier = "excluded" if e.excluded else ("high" if schedule.is_high(e.index) else "low")
        ratio = "-" if e.ratio is None else f"{e.ratio:.4f}"
        print(f"layer {e.index:>3} ratio={ratio:>8} tier={tier:<8} r_kv={e.assigned_r_kv}")
    return 0


def _emit(rows, columns, path):
    if path:
        write_csv(rows, path, columns)
    w = csv.writer(sys.stdout)
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if row.get(c) is None else row.get(c) for c in columns])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymreduce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one reduced forward pass with FLOP and divergence report")
    p.add_argument("--frames", type=int, required=True)
    _add_model_args(p)
    _add_reduction_args(p)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--no-baseline", action="store_true", help="skip the unreduced forward")
    p.add_argument("--csv", help="per-layer FLOP CSV")
    p.add_argument("--summary-csv", help="one-row summary CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("probe", help="per-layer sensitivity probing and schedule")
    p.add_argument("--frames", type=int, default=DEFAULT_PROBE_R)
    _add_model_args(p)
    p.add_argument("--base-r", type=int, default=DEFAULT_BASE_R)
    p.add_argument("--probe-r", type=int, default=DEFAULT_PROBE_R)
    p.add_argument("--base-r-kv", type=int, default=1,
                   help="base factor recorded in the schedule's assignments")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--multiplier", type=int, default=DEFAULT_MULTIPLIER)
    p.add_argument("--exclude", type=_int_list, help="global-layer ordinals to skip")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="schedule JSON path")
    p.add_argument("--csv", help="layer,ratio CSV path")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("bench-scaling", help="time/FLOPs/divergence against frame count")
    p.add_argument("--frames", type=_int_list, required=True, help="e.g. 100,200,400")
    p.add_argument("--configs", type=lambda s: s.split(","),
                   default=["unreduced", "length_adaptive", "full"])
    _add_model_args(p)
    p.add_argument("--schedule", help="layer schedule for the 'full' config")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help=">1 runs concurrently, without timing")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench_scaling)

    p = sub.add_parser("ablate", help="sweep one reduction axis")
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--frames", type=int, default=256)
    _add_model_args(p)
    _add_reduction_args(p)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help=">1 runs concurrently, without timing")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("schedule-show", help="print a schedule document")
    p.add_argument("path")
    p.set_defaults(func=cmd_schedule_show)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ScheduleFormatError, ConfigurationError, InvalidInputError, ProbeError) as exc:
        print(f"asymreduce: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
