"""Token merging machinery: destination selection, matching, merge, unmerge.

A sequence of ``n_total`` tokens is split into destinations (kept) and
sources (folded into a destination). Tokens are laid out frame-major with
``P`` tokens per frame, the first ``special_count`` of which are the camera
and register tokens. Special tokens are always destinations and are never
matched against, so per-frame tokens never get mixed across frames.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from os import PathLike

import numpy as np

from . import kernels
from .exceptions import ConfigurationError, InvalidInputError
from .validation import SPECIAL_COUNT, check_factor

__all__ = [
    "MergeMap",
    "MatchStats",
    "select_destinations",
    "build_skeleton",
    "bipartite_match",
    "merge",
    "unmerge",
    "SIM_BUCKET_WIDTH",
]

SIM_BUCKET_WIDTH = 0.05


@dataclass(frozen=True)
class MergeMap:
    """Assignment of source tokens to destination tokens.

    Attributes
    ----------
    n_total : int
        Length of the unreduced sequence.
    dst_indices : ndarray of int
        Sorted indices of kept tokens; merged output rows follow this order.
    src_indices : ndarray of int
        Sorted indices of tokens folded into a destination.
    src_targets : ndarray of int or None
        Destination token index for each entry of ``src_indices``; ``None``
        for a skeleton that has not been matched yet.
    candidates : ndarray of int
        Destinations that sources may be matched to (a subset of
        ``dst_indices``; special tokens are excluded).
    group_bounds : list of (start, end)
        Half-open token-index ranges; matching never crosses a range.
    """

    n_total: int
    dst_indices: np.ndarray
    src_indices: np.ndarray
    src_targets: np.ndarray | None = None
    candidates: np.ndarray | None = None
    group_bounds: list = field(default_factory=list)

    @classmethod
    def identity(cls, n_total: int) -> "MergeMap":
        idx = np.arange(n_total, dtype=np.intp)
        empty = np.empty(0, dtype=np.intp)
        return cls(n_total, idx, empty, empty, empty, [(0, n_total)])

    @property
    def is_identity(self) -> bool:
        return self.src_indices.size == 0

    @property
    def is_matched(self) -> bool:
        return self.src_targets is not None

    @property
    def src_assign(self) -> dict[int, int]:
        if self.src_targets is None:
            return {}
        return dict(zip(self.src_indices.tolist(), self.src_targets.tolist()))

    def dst_rank(self, token_indices) -> np.ndarray:
        """Row of the merged output holding each given destination index."""
        return np.searchsorted(self.dst_indices, token_indices)

    def validate(self) -> None:
        """Check the partition, membership and group-locality invariants."""
        n = self.n_total
        both = np.concatenate([self.dst_indices, self.src_indices])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise InvalidInputError("destinations and sources do not partition the sequence")
        if self.src_targets is None:
            return
        if self.src_targets.shape != self.src_indices.shape:
            raise InvalidInputError("one target per source is required")
        if self.src_targets.size == 0:
            return
        rank = self.dst_rank(self.src_targets)
        if np.any(rank >= self.dst_indices.size) or np.any(
            self.dst_indices[np.minimum(rank, self.dst_indices.size - 1)] != self.src_targets
        ):
            raise InvalidInputError("a source is assigned to a non-destination token")
        starts = np.array([b[0] for b in self.group_bounds])
        g_src = np.searchsorted(starts, self.src_indices, side="right")
        g_dst = np.searchsorted(starts, self.src_targets, side="right")
        if np.any(g_src != g_dst):
            raise InvalidInputError("a source is matched across a group boundary")


@dataclass
class MatchStats:
    """Distances and similarities of every matched (source, destination) pair."""

    distances: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    similarities: np.ndarray = field(default_factory=lambda: np.empty(0))
    comparisons: int = 0

    @property
    def pair_count(self) -> int:
        return int(self.distances.size)

    @property
    def inter_frame_distance_histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.distances, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    @property
    def similarity_histogram(self) -> dict[float, int]:
        """Counts keyed by the lower edge of each ``SIM_BUCKET_WIDTH`` bucket."""
        n_buckets = int(round(2.0 / SIM_BUCKET_WIDTH))
        idx = np.floor((self.similarities + 1.0) / SIM_BUCKET_WIDTH).astype(np.intp)
        idx = np.clip(idx, 0, n_buckets - 1)
        values, counts = np.unique(idx, return_counts=True)
        return {
            round(-1.0 + int(v) * SIM_BUCKET_WIDTH, 10): int(c)
            for v, c in zip(values, counts)
        }

    def fraction_within(self, max_distance: int) -> float:
        if self.pair_count == 0:
            return 1.0
        return float(np.mean(self.distances <= max_distance))

    def extend(self, other: "MatchStats") -> "MatchStats":
        return MatchStats(
            np.concatenate([self.distances, other.distances]),
            np.concatenate([self.similarities, other.similarities]),
            self.comparisons + other.comparisons,
        )

    def to_csv(self, path: str | PathLike, kind: str = "distance") -> None:
        """Write ``distance,count`` or ``sim_bucket,count`` rows."""
        if kind == "distance":
            header, hist = ("distance", "count"), self.inter_frame_distance_histogram
        elif kind == "similarity":
            header, hist = ("sim_bucket", "count"), self.similarity_histogram
        else:
            raise ValueError(f"unknown histogram kind {kind!r}")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in sorted(hist):
                w.writerow([k, hist[k]])


def select_destinations(
    group: tuple[int, int], P: int, r: int, special_count: int = SPECIAL_COUNT
) -> np.ndarray:
    """Destination token indices for one frame-aligned group.

    Within the group's frame ``f`` (counted from the group start), the patch
    token at patch position ``p`` is a destination iff ``p % r == f % r``.
    Special tokens are always destinations.

    Parameters
    ----------
    group : (start, end)
        Half-open token-index range; both ends must be multiples of ``P``.
    P : int
        Tokens per frame, including special tokens.
    r : int
        Reduction factor over patch tokens.
    """
    r = check_factor(r, "r")
    start, end = group
    if start % P or end % P or end <= start:
        raise InvalidInputError(f"group {group} is not aligned to frames of {P} tokens")
    n_frames = (end - start) // P
    frame = np.arange(n_frames)[:, None]
    within = np.arange(P)[None, :]
    patch_pos = within - special_count
    is_dst = (within < special_count) | (patch_pos % r == frame % r)
    f_idx, w_idx = np.nonzero(is_dst)
    return (start + f_idx * P + w_idx).astype(np.intp)


def build_skeleton(
    S: int,
    P: int,
    r: int,
    frame_groups: list[tuple[int, int]],
    special_count: int = SPECIAL_COUNT,
) -> MergeMap:
    """Unmatched MergeMap covering ``S`` frames split into ``frame_groups``."""
    n_total = S * P
    if r == 1:
        return MergeMap.identity(n_total)
    bounds = [(a * P, b * P) for a, b in frame_groups]
    dst = np.concatenate([select_destinations(g, P, r, special_count) for g in bounds])
    is_dst = np.zeros(n_total, dtype=bool)
    is_dst[dst] = True
    src = np.flatnonzero(~is_dst)
    candidates = dst[(dst % P) >= special_count]
    return MergeMap(n_total, dst, src, None, candidates, bounds)


def _match_block(tokens, src, cand, frame_of):
    """Best candidate for each source; ties go to the lowest index."""
    a = kernels.normalize_rows(tokens[src])
    b = kernels.normalize_rows(tokens[cand])
    sims = a @ b.T
    kernels.record_comparisons(sims.size)
    best = np.argmax(sims, axis=1)
    targets = cand[best]
    best_sim = sims[np.arange(src.size), best]
    dist = np.abs(frame_of(src) - frame_of(targets))
    return targets, dist, best_sim, sims.size


def bipartite_match(tokens, skeleton: MergeMap, P) -> tuple[MergeMap, MatchStats]:
    """Match every source to its most cosine-similar candidate in its group.

    Parameters
    ----------
    tokens : ndarray of shape (n_total, d)
    skeleton : MergeMap
        Output of :func:`build_skeleton` (assignments ignored).
    P : int or ndarray of int
        Tokens per frame, used for inter-frame distance statistics; or an
        explicit frame number for every token when the sequence is not
        frame-aligned.

    Returns
    -------
    merge_map : MergeMap
    stats : MatchStats
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] != skeleton.n_total:
        raise InvalidInputError(
            f"tokens shape {tokens.shape} does not match map over {skeleton.n_total} tokens"
        )
    if skeleton.is_identity:
        return replace(skeleton, src_targets=np.empty(0, dtype=np.intp)), MatchStats()
    if np.ndim(P) == 0:
        frame_of = lambda idx: idx // P  # noqa: E731
    else:
        frame_ids = np.asarray(P)
        frame_of = frame_ids.__getitem__
    cand_all = skeleton.dst_indices if skeleton.candidates is None else skeleton.candidates
    targets = np.empty_like(skeleton.src_indices)
    dists, sims, comparisons = [], [], 0
    for start, end in skeleton.group_bounds:
        s_lo, s_hi = np.searchsorted(skeleton.src_indices, [start, end])
        if s_hi == s_lo:
            continue
        c_lo, c_hi = np.searchsorted(cand_all, [start, end])
        if c_hi == c_lo:
            raise ConfigurationError(
                f"group [{start}, {end}) has sources but no destination to match"
            )
        t, dist, sim, n = _match_block(
            tokens, skeleton.src_indices[s_lo:s_hi], cand_all[c_lo:c_hi], frame_of
        )
        targets[s_lo:s_hi] = t
        dists.append(dist)
        sims.append(sim)
        comparisons += n
    stats = MatchStats(
        np.concatenate(dists) if dists else np.empty(0, dtype=np.intp),
        np.concatenate(sims) if sims else np.empty(0),
        comparisons,
    )
    return replace(skeleton, src_targets=targets), stats


def _check_map(tokens, merge_map: MergeMap) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] != merge_map.n_total:
        raise InvalidInputError(
            f"tokens shape {tokens.shape} does not match map over {merge_map.n_total} tokens"
        )
    if not merge_map.is_matched:
        raise InvalidInputError("merge map has no source assignments")
    return tokens


def merge(tokens, merge_map: MergeMap) -> np.ndarray:
    """Average each destination with its matched sources.

    A destination matched by ``n`` sources becomes the mean of those
    ``n + 1`` tokens. The mean is accumulated as ``x_d + sum(x_s - x_d)/(n+1)``,
    which is algebraically the plain average and leaves a destination
    bit-for-bit unchanged when its sources equal it.
    """
    tokens = _check_map(tokens, merge_map)
    out = kernels.gather_rows(tokens, merge_map.dst_indices)
    if merge_map.is_identity:
        return out
    rank = merge_map.dst_rank(merge_map.src_targets)
    diff = tokens[merge_map.src_indices] - tokens[merge_map.src_targets]
    delta = kernels.scatter_add_rows(np.zeros_like(out), rank, diff)
    counts = np.bincount(rank, minlength=out.shape[0]).astype(np.float64)
    out += delta / (counts + 1.0)[:, None]
    return out


def unmerge(reduced, merge_map: MergeMap) -> np.ndarray:
    """Scatter merged rows back to full length; sources copy their destination."""
    reduced = np.asarray(reduced, dtype=np.float64)
    if reduced.ndim != 2 or reduced.shape[0] != merge_map.dst_indices.size:
        raise InvalidInputError(
            f"expected {merge_map.dst_indices.size} reduced rows, got shape {reduced.shape}"
        )
    if not merge_map.is_matched:
        raise InvalidInputError("merge map has no source assignments")
    out = np.empty((merge_map.n_total, reduced.shape[1]), dtype=np.float64)
    out[merge_map.dst_indices] = reduced
    if merge_map.src_indices.size:
        out[merge_map.src_indices] = reduced[merge_map.dst_rank(merge_map.src_targets)]
    return out
