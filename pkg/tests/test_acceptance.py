"""Acceptance gate: one test per criterion, each printing a single pass/fail line.

Tolerances are fixed; see the README for how each check is measured.
"""

import math
import statistics
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymreduce import kernels
from asymreduce.backbone import (
    BackboneSpec,
    forward,
    gen_synthetic_sequence,
    init_backbone,
    reference_forward,
    relative_divergence,
)
from asymreduce.bench import ablate, probe_default_schedule
from asymreduce.config import ReductionConfig, ReductionPlan, resolve_plan
from asymreduce.flops import count_flops
from asymreduce.kv_path import (
    KvReducer,
    length_adaptive_rkv,
    stride_merge_with_average,
    stride_prune,
)
from asymreduce.merging import bipartite_match, build_skeleton, merge, select_destinations, unmerge
from asymreduce.query_path import QueryReducer, comparison_count, group_frames, length_adaptive_rq
from asymreduce.query_path import reduce_queries
from asymreduce.schedule import SensitivityReport, build_schedule, probe_sensitivity

SC = 5


# 1 ---------------------------------------------------------------------------

RQ_TABLE = {1: 1, 100: 1, 101: 2, 300: 2, 301: 3, 500: 3, 501: 4, 1000: 4}
RKV_TABLE = {1: 1, 100: 1, 101: 3, 300: 8, 301: 8, 500: 13, 501: 13, 1000: 25, 256: 7}


def test_c01_schedule_exactness(criterion):
    got_q = {S: length_adaptive_rq(S) for S in RQ_TABLE}
    got_kv = {S: length_adaptive_rkv(S) for S in RKV_TABLE}
    bad = {S: (got_q[S], RQ_TABLE[S]) for S in RQ_TABLE if got_q[S] != RQ_TABLE[S]}
    bad |= {S: (got_kv[S], RKV_TABLE[S]) for S in RKV_TABLE if got_kv[S] != RKV_TABLE[S]}
    criterion(1, "schedule exactness", not bad,
              f"r_q={got_q} r_kv={got_kv}" + (f" mismatches={bad}" if bad else ""))


# 2 ---------------------------------------------------------------------------

def test_c02_identity_equivalence(criterion):
    cfg = ReductionConfig(r_q_override=1, r_kv_override=1, multiplier_l=1)
    failures = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        spec = BackboneSpec(
            n_layers=int(rng.integers(2, 7)),
            d=int(rng.choice([8, 16, 32])),
            p_patch=int(rng.integers(2, 17)),
            seed=seed,
        )
        S = int(rng.integers(1, 130))
        X = gen_synthetic_sequence(S, spec.p_patch, spec.d, ("iid", "smooth_walk")[seed % 2], seed)
        model = init_backbone(spec)
        if not np.array_equal(forward(model, X, cfg), reference_forward(model, X)):
            failures.append(seed)
    criterion(2, "identity equivalence", not failures,
              f"10 seeded pairs, bit-identical; failing seeds={failures}")


# 3 ---------------------------------------------------------------------------

def _global_oracle(x, S, P, r):
    """Single matching pass over all tokens with a hand-written argmax and mean."""
    n = S * P
    dst = select_destinations((0, n), P, r)
    is_dst = np.zeros(n, bool)
    is_dst[dst] = True
    cand = [i for i in dst if i % P >= SC]
    src = [i for i in range(n) if not is_dst[i]]
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    targets = []
    for s in src:
        sims = [float(unit[s] @ unit[c]) for c in cand]
        targets.append(cand[int(np.argmax(sims))])
    members = {int(d): [int(d)] for d in dst}
    for s, t in zip(src, targets):
        members[t].append(s)
    out = np.array([x[members[int(d)]].mean(axis=0) for d in dst])
    return np.array(targets), out


def test_c03_grouping_oracle(criterion):
    P_patch, d = 8, 6
    P = P_patch + SC
    worst, map_fail = 0.0, []
    for seed in range(10):
        S = (8, 24, 40)[seed % 3]
        r = 2 + seed % 3
        x = np.random.default_rng(seed).standard_normal((S * P, d))
        reduced, mmap, _ = reduce_queries(x, S, P, QueryReducer(r, S))
        t_ref, out_ref = _global_oracle(x, S, P, r)
        if not np.array_equal(mmap.src_targets, t_ref):
            map_fail.append(seed)
        worst = max(worst, float(np.max(np.abs(reduced - out_ref) / np.maximum(np.abs(out_ref), 1e-300))))
    ok = not map_fail and worst <= 1e-10
    criterion(3, "grouping oracle", ok,
              f"map mismatches={map_fail}, max relative token error={worst:.2e} (tol 1e-10)")


# 4 ---------------------------------------------------------------------------

def test_c04_prune_merge_equivalence(criterion):
    P_patch = 16
    P = P_patch + SC
    exact = True
    for S, r in [(8, 2), (30, 3), (64, 4), (100, 7)]:
        x = gen_synthetic_sequence(S, P_patch, 32, seed=S, sigma=0.0).reshape(S * P, 32)
        exact &= np.array_equal(stride_prune(x, S, P, r)[0], stride_merge_with_average(x, S, P, r))
    model = init_backbone(BackboneSpec())
    worst = 0.0
    for S in (64, 128):
        for r in (2, 4):
            for seed in (0, 1):
                X = gen_synthetic_sequence(S, P_patch, 32, seed=seed, sigma=0.05)
                ref = reference_forward(model, X)
                a = forward(model, X, ReductionPlan(1, (r,) * 4))
                b = forward(model, X, ReductionPlan(1, (r,) * 4, kv_mode="stride_merge"))
                between = relative_divergence(a, b)
                floor = min(relative_divergence(a, ref), relative_divergence(b, ref))
                worst = max(worst, between / floor)
    criterion(4, "pruning/merging equivalence", exact and worst <= 2.0,
              f"duplicate frames exact={exact}; max div(prune,merge)/min(div to baseline)"
              f"={worst:.3f} (limit 2)")


# 5 ---------------------------------------------------------------------------

def test_c05_zero_overhead_pruning(criterion):
    total = 0
    configs = 0
    for S in (1, 7, 50, 257):
        for P_patch in (1, 16):
            P = P_patch + SC
            x = np.random.default_rng(S).standard_normal((S * P, 4))
            for r in (1, 2, 3, 25, 300):
                with kernels.count_ops() as c:
                    stride_prune(x, S, P, r)
                    KvReducer(r).reduce(x, S, P)
                total += c.comparisons
                configs += 1
    model = init_backbone(BackboneSpec())
    with kernels.count_ops() as c:
        forward(model, gen_synthetic_sequence(120, 16, 32), ReductionPlan(1, (2, 3, 5, 40)))
    total += c.comparisons
    criterion(5, "zero-overhead pruning", total == 0,
              f"{configs + 1} configurations, comparisons counted={total}")


# 6 ---------------------------------------------------------------------------

def _counted(S, P, r, G):
    x = gen_synthetic_sequence(S, P - SC, 8, seed=S).reshape(S * P, 8)
    with kernels.count_ops() as c:
        reduce_queries(x, S, P, QueryReducer(r, G))
    return c.comparisons


def test_c06_complexity_shape(criterion):
    P, r = 21, 2
    grouped = {S: _counted(S, P, r, 20) for S in (100, 200, 400)}
    global_ = {S: _counted(S, P, r, S) for S in (100, 200, 400)}
    closed_ok = all(grouped[S] == comparison_count(S, P, r, 20) for S in grouped)
    closed_ok &= all(global_[S] == comparison_count(S, P, r, S) for S in global_)
    g_ratios = [grouped[200] / grouped[100], grouped[400] / grouped[200]]
    s_ratios = [global_[200] / global_[100], global_[400] / global_[200]]
    ok = (closed_ok and all(1.9 <= q <= 2.1 for q in g_ratios)
          and all(3.6 <= q <= 4.4 for q in s_ratios))
    criterion(6, "complexity shape", ok,
              f"G=20 ratios={[round(q, 4) for q in g_ratios]} in [1.9,2.1]; "
              f"G=S ratios={[round(q, 4) for q in s_ratios]} in [3.6,4.4]; "
              f"counter==closed form: {closed_ok}")


# 7 ---------------------------------------------------------------------------

def test_c07_flop_speedup(criterion):
    spec = BackboneSpec()
    S = 1000
    r_q, r_kv = length_adaptive_rq(S), length_adaptive_rkv(S)
    # layer 1 high-sensitivity, others low
    report = SensitivityReport(32, 256, {0: 1.0, 1: 1.3, 2: 1.0, 3: 1.0})
    cfg = ReductionConfig(multiplier_l=3, schedule=build_schedule(report, r_kv))
    plan = resolve_plan(cfg, S, spec.n_global)
    ratios = count_flops(spec, S, plan).global_attention_ratios()
    low = [q for q, rk in zip(ratios, plan.layer_r_kv) if rk == 3 * r_kv]
    low_ok = all(q >= 100 for q in low)
    all_ok = all(q >= r_q * r_kv for q in ratios)
    criterion(7, "FLOP speedup", (r_q, r_kv) == (4, 25) and low_ok and all_ok,
              f"r_q={r_q} r_kv={plan.layer_r_kv}; score+value reduction per global layer="
              f"{[round(q, 1) for q in ratios]}; low-sensitivity >=100: {low_ok}; "
              f"all >= r_q*r_kv={r_q * r_kv}: {all_ok}")


# 8 ---------------------------------------------------------------------------

def _median_time(fn, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


@pytest.mark.slow
def test_c08_wall_clock_scaling(criterion):
    model = init_backbone(BackboneSpec())
    S = 1000
    cfg = ReductionConfig(multiplier_l=3, schedule=probe_default_schedule(model))
    X = gen_synthetic_sequence(S, 16, 32, seed=0)
    t_full = _median_time(lambda: forward(model, X, cfg))
    t_ref = _median_time(lambda: reference_forward(model, X))
    speedup = t_ref / t_full
    criterion(8, "wall-clock scaling", speedup >= 10.0,
              f"S=1000 unreduced {t_ref:.2f}s vs full {t_full:.3f}s, speedup {speedup:.1f}x "
              f"(need >=10x, median of 3)")


# 9 ---------------------------------------------------------------------------

def test_c09_probing_determinism_and_tiering(criterion):
    model = init_backbone(BackboneSpec(seed=11))
    X = gen_synthetic_sequence(256, 16, 32, seed=11)
    a = probe_sensitivity(model, X)
    b = probe_sensitivity(model, X)
    same = a.ratios == b.ratios and a.base_error == b.base_error
    fixture = build_schedule(SensitivityReport(32, 256, {0: 1.0, 1: 1.2, 2: 1.04}), 8, 1.05, 3)
    fixture_ok = fixture.assignments == [24, 8, 24]
    spec24 = BackboneSpec(n_layers=48)
    ratios = {i: (1.2 if 11 <= i <= 16 else 1.0) for i in range(spec24.n_global)}
    sched = build_schedule(SensitivityReport(32, 256, ratios), 8)
    plan = resolve_plan(ReductionConfig(r_kv_override=8, schedule=sched), 1000, spec24.n_global)
    high = [i for i, r in enumerate(plan.layer_r_kv) if r == 8]
    tier_ok = spec24.n_global == 24 and high == list(range(11, 17))
    criterion(9, "probing determinism and tiering", same and fixture_ok and tier_ok,
              f"bit-reproducible={same}; fixture -> {fixture.assignments}; "
              f"24-layer high tier={high}")


# 10 --------------------------------------------------------------------------

cases = st.tuples(
    st.integers(1, 8),   # frames
    st.integers(1, 10),  # patch tokens per frame
    st.integers(1, 5),   # r
    st.integers(1, 8),   # G
    st.integers(0, 2**32 - 1),
)


def _run_case(case):
    S, p_patch, r, G, seed = case
    P = p_patch + SC
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((S * P, 3))
    if rng.random() < 0.3:
        x[rng.integers(0, S * P, size=S)] = x[0]  # force exact duplicates and ties
    reduced, mmap, stats = reduce_queries(x, S, P, QueryReducer(r, G))
    return x, P, G, reduced, mmap, stats


_failures = {}


def _check(name, ok):
    if not ok:
        _failures[name] = _failures.get(name, 0) + 1
    assert ok, name


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(cases)
def _prop_cluster_mean(case):
    x, P, G, reduced, mmap, _ = _run_case(case)
    members = {int(d): [int(d)] for d in mmap.dst_indices}
    for s, t in mmap.src_assign.items():
        members[t].append(s)
    expected = np.array([x[members[int(d)]].mean(axis=0) for d in mmap.dst_indices])
    _check("cluster-mean", np.allclose(reduced, expected, rtol=1e-12, atol=1e-12))


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(cases)
def _prop_partition(case):
    x, P, G, reduced, mmap, _ = _run_case(case)
    all_idx = np.sort(np.concatenate([mmap.dst_indices, mmap.src_indices]))
    ok = np.array_equal(all_idx, np.arange(mmap.n_total))
    ok &= np.intersect1d(mmap.dst_indices, mmap.src_indices).size == 0
    ok &= bool(np.all(np.isin(mmap.src_targets, mmap.dst_indices)))
    _check("partition", ok)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(cases)
def _prop_special_exemption(case):
    x, P, G, reduced, mmap, _ = _run_case(case)
    specials = np.flatnonzero(np.arange(mmap.n_total) % P < SC)
    ok = bool(np.all(np.isin(specials, mmap.dst_indices)))
    ok &= not np.any(np.isin(mmap.src_targets, specials))
    # special rows pass through merging unchanged
    ok &= np.array_equal(reduced[mmap.dst_rank(specials)], x[specials])
    _check("special-token exemption", ok)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(cases)
def _prop_group_locality(case):
    x, P, G, reduced, mmap, stats = _run_case(case)
    ok = bool(np.all(mmap.src_indices // P // G == mmap.src_targets // P // G))
    ok &= bool(np.all(stats.distances <= G - 1))
    _check("group-boundary locality", ok)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(cases)
def _prop_idempotence(case):
    x, P, G, reduced, mmap, _ = _run_case(case)
    once = unmerge(reduced, mmap)
    twice = unmerge(merge(once, mmap), mmap)
    _check("unmerge-merge idempotence", np.array_equal(once, twice))


def test_c10_merge_algebra(criterion):
    props = [_prop_cluster_mean, _prop_partition, _prop_special_exemption,
             _prop_group_locality, _prop_idempotence]
    errors = []
    for prop in props:
        try:
            prop()
        except AssertionError as exc:
            errors.append(str(exc).splitlines()[0])
    criterion(10, "merge algebra", not errors,
              f"5 properties x 1000 cases; failing={errors or 'none'}")


# 11 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c11_ablation_monotonicity(criterion):
    model = init_backbone(BackboneSpec())
    values = [1, 2, 4, 8, 16, 32]
    rows = ablate(model, "rkv", values, S=500, seed=0, repeats=3)
    times = [r["time_s"] for r in rows]
    divs = {r["value"]: r["divergence"] for r in rows}
    decreasing = all(b < a for a, b in zip(times, times[1:]))
    flat = all(divs[v] <= 3 * divs[2] for v in values if v <= 8)
    criterion(11, "ablation monotonicity", decreasing and flat,
              f"time_s={[round(t, 3) for t in times]} strictly decreasing={decreasing}; "
              f"divergence={ {v: round(d, 3) for v, d in divs.items()} } "
              f"r_kv<=8 within 3x of r_kv=2: {flat}")
