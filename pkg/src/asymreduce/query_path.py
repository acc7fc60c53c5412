"""Intra-group query merging and the length-adaptive query reduction factor."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .merging import MatchStats, MergeMap, bipartite_match, build_skeleton, merge
from .validation import SPECIAL_COUNT, check_factor, check_flat_tokens

__all__ = [
    "DEFAULT_GROUP_SIZE",
    "QueryReducer",
    "group_frames",
    "reduce_queries",
    "length_adaptive_rq",
    "comparison_count",
    "query_token_count",
    "matching_cost_probe",
]

DEFAULT_GROUP_SIZE = 20


@dataclass(frozen=True)
class QueryReducer:
    r_q: int = 1
    group_size: int = DEFAULT_GROUP_SIZE

    def __post_init__(self):
        check_factor(self.r_q, "r_q")
        check_factor(self.group_size, "group_size")

    @property
    def is_identity(self) -> bool:
        return self.r_q == 1

    def reduce(self, x, S: int, P: int):
        return reduce_queries(x, S, P, self)


def group_frames(S: int, G: int) -> list[tuple[int, int]]:
    """Split ``S`` frames into ``ceil(S / G)`` contiguous half-open ranges."""
    S = check_factor(S, "S")
    G = check_factor(G, "G")
    return [(start, min(start + G, S)) for start in range(0, S, G)]


def reduce_queries(
    x, S: int, P: int, reducer: QueryReducer, special_count: int = SPECIAL_COUNT
) -> tuple[np.ndarray, MergeMap, MatchStats]:
    """Merge query tokens independently within each group of frames.

    Parameters
    ----------
    x : ndarray of shape (S * P, d)
        Frame-major flattened tokens.

    Returns
    -------
    reduced : ndarray of shape (n_dst, d)
    merge_map : MergeMap
        Covers all ``S * P`` positions; pass it to ``unmerge``.
    stats : MatchStats
    """
    x = check_flat_tokens(x, S, P)
    if reducer.is_identity:
        return x, MergeMap.identity(S * P), MatchStats()
    skeleton = build_skeleton(
        S, P, reducer.r_q, group_frames(S, reducer.group_size), special_count
    )
    merge_map, stats = bipartite_match(x, skeleton, P)
    return merge(x, merge_map), merge_map, stats


def length_adaptive_rq(S: int) -> int:
    """Query reduction factor for an ``S``-frame input."""
    S = check_factor(S, "S")
    if S <= 100:
        return 1
    if S <= 300:
        return 2
    if S <= 500:
        return 3
    return 4


def _patch_dst_per_group(S, P, r, G, special_count):
    """(frames, patch destinations) for every group under the cyclic rule."""
    n_patch = P - special_count
    # patch positions p in [0, n_patch) with p % r == c
    per_offset = [len(range(c, n_patch, r)) for c in range(r)]
    for start, end in group_frames(S, G):
        yield end - start, sum(per_offset[f % r] for f in range(end - start))


def comparison_count(
    S: int, P: int, r: int, G: int, special_count: int = SPECIAL_COUNT
) -> int:
    """Closed-form number of similarity evaluations for grouped matching.

    Sum over groups of ``|sources| * |patch destinations|``.
    """
    if r == 1:
        return 0
    n_patch = P - special_count
    return sum(
        (frames * n_patch - dst) * dst
        for frames, dst in _patch_dst_per_group(S, P, r, G, special_count)
    )


def query_token_count(
    S: int, P: int, r: int, G: int = DEFAULT_GROUP_SIZE, special_count: int = SPECIAL_COUNT
) -> int:
    """Number of query tokens left after merging ``S`` frames at factor ``r``."""
    if r == 1:
        return S * P
    return S * special_count + sum(
        dst for _, dst in _patch_dst_per_group(S, P, r, G, special_count)
    )


def matching_cost_probe(
    S_values, G: int = DEFAULT_GROUP_SIZE, P_patch: int = 16, d: int = 32,
    seed: int = 0, r: int = 2, repeats: int = 1,
) -> list[dict]:
    """Time grouped (fixed ``G``) against global (``G = S``) query matching.

    Returns one row per (S, strategy) with the exact comparison count and the
    median wall-clock time of the matching step over ``repeats`` runs.
    """
    from .backbone import gen_synthetic_sequence

    P = P_patch + SPECIAL_COUNT
    rows = []
    for S in S_values:
        x = gen_synthetic_sequence(S, P_patch, d, "smooth_walk", seed).reshape(S * P, d)
        for label, g in (("grouped", G), ("global", S)):
            skeleton = build_skeleton(S, P, r, group_frames(S, g))
            times = []
            for _ in range(max(1, repeats)):
                t0 = time.perf_counter()
                _, stats = bipartite_match(x, skeleton, P)
                times.append(time.perf_counter() - t0)
            rows.append(
                {
                    "S": S,
                    "strategy": label,
                    "G": g,
                    "comparisons": stats.comparisons,
                    "groups": math.ceil(S / g),
                    "time_s": float(np.median(times)),
                }
            )
    return rows
