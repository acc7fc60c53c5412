"""Key-value token reduction by temporal stride.

The production operator is :func:`stride_prune`: keep every ``r_kv``-th
frame, drop the rest, compare nothing. :func:`stride_merge_with_average`
and :func:`random_token_prune` exist for ablations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .merging import MergeMap, bipartite_match, merge
from .validation import SPECIAL_COUNT, check_factor, check_flat_tokens

__all__ = [
    "KvMode",
    "KvReducer",
    "kept_frames",
    "stride_prune",
    "stride_merge_with_average",
    "random_token_prune",
    "length_adaptive_rkv",
]


class KvMode(str, enum.Enum):
    STRIDE_PRUNE = "stride_prune"
    STRIDE_MERGE = "stride_merge"
    RANDOM_PRUNE = "random_prune"


@dataclass(frozen=True)
class KvReducer:
    r_kv: int = 1
    mode: KvMode = KvMode.STRIDE_PRUNE
    seed: int = 0

    def __post_init__(self):
        check_factor(self.r_kv, "r_kv")
        object.__setattr__(self, "mode", KvMode(self.mode))

    @property
    def is_identity(self) -> bool:
        return self.r_kv == 1

    def reduce(self, x, S: int, P: int) -> np.ndarray:
        if self.is_identity:
            return check_flat_tokens(x, S, P)
        if self.mode is KvMode.STRIDE_PRUNE:
            return stride_prune(x, S, P, self.r_kv)[0]
        if self.mode is KvMode.STRIDE_MERGE:
            return stride_merge_with_average(x, S, P, self.r_kv)
        return random_token_prune(x, S, P, self.r_kv, self.seed)


def kept_frames(S: int, r_kv: int) -> np.ndarray:
    """Frames 0, r_kv, 2*r_kv, ... below ``S``."""
    return np.arange(0, S, check_factor(r_kv, "r_kv"))


def stride_prune(x, S: int, P: int, r_kv: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep all ``P`` tokens of every ``r_kv``-th frame, starting at frame 0.

    Returns
    -------
    pruned : ndarray of shape (ceil(S / r_kv) * P, d)
    frames : ndarray of int
        The kept frame numbers, ascending.
    """
    x = check_flat_tokens(x, S, P)
    frames = kept_frames(S, r_kv)
    if r_kv == 1:
        return x, frames
    return x.reshape(S, P, -1)[frames].reshape(frames.size * P, -1), frames


def stride_merge_with_average(
    x, S: int, P: int, r_kv: int, special_count: int = SPECIAL_COUNT
) -> np.ndarray:
    """Same kept frames as :func:`stride_prune`, with dropped tokens averaged in.

    Each patch token of a dropped frame is matched to its most similar kept
    patch token and folded in by averaging. Special tokens of dropped frames
    are discarded, as in pruning.
    """
    x = check_flat_tokens(x, S, P)
    frames = kept_frames(S, r_kv)
    if r_kv == 1:
        return x
    keep = np.zeros(S, dtype=bool)
    keep[frames] = True
    frame_of = np.repeat(np.arange(S), P)
    is_special = np.tile(np.arange(P) < special_count, S)
    kept_tok = keep[frame_of]
    # work on the subsequence of kept tokens plus dropped patch tokens
    sel = np.flatnonzero(kept_tok | ~is_special)
    sub_kept = kept_tok[sel]
    sub_patch = ~is_special[sel]
    dst = np.flatnonzero(sub_kept)
    skeleton = MergeMap(
        n_total=sel.size,
        dst_indices=dst,
        src_indices=np.flatnonzero(~sub_kept),
        candidates=np.flatnonzero(sub_kept & sub_patch),
        group_bounds=[(0, sel.size)],
    )
    merge_map, _ = bipartite_match(x[sel], skeleton, frame_of[sel])
    return merge(x[sel], merge_map)


def random_token_prune(x, S: int, P: int, r_kv: int, seed: int = 0) -> np.ndarray:
    """Keep ``ceil(S * P / r_kv)`` tokens chosen uniformly at random, in order."""
    x = check_flat_tokens(x, S, P)
    r_kv = check_factor(r_kv, "r_kv")
    n = S * P
    if r_kv == 1:
        return x
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=math.ceil(n / r_kv), replace=False))
    return x[idx]


def length_adaptive_rkv(S: int) -> int:
    """Key-value reduction factor for an ``S``-frame input."""
    S = check_factor(S, "S")
    if S <= 100:
        return 1
    return math.ceil(S / 40)
