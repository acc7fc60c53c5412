"""Single-head scaled dot-product attention and the two backbone layer kinds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import InvalidInputError
from .kv_path import KvReducer
from .merging import MatchStats, unmerge
from .query_path import QueryReducer, reduce_queries

__all__ = [
    "LayerKind",
    "AttentionLayerParams",
    "sdpa",
    "frame_attention",
    "global_attention",
    "reference_global_attention",
]

# score-matrix entries materialised at once; bounds peak memory of long inputs
SDPA_CHUNK_ELEMENTS = 1 << 22


class LayerKind(str, enum.Enum):
    FRAME = "frame"
    GLOBAL = "global"


@dataclass(frozen=True)
class AttentionLayerParams:
    """Projection weights of one attention layer, each ``d x d``."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise InvalidInputError(f"{name} has shape {w.shape}, expected ({d}, {d})")

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "AttentionLayerParams":
        return cls(*(np.zeros((d, d)) for _ in range(4)))


def sdpa(q, k, v) -> np.ndarray:
    """``softmax(q k^T / sqrt(d)) v``, one output row per query row.

    The score matrix is built in row blocks so long key sequences do not
    need ``Nq * Nkv`` floats at once. Block boundaries depend only on the
    shapes, so results are reproducible.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise InvalidInputError("sdpa expects 2-D q, k, v")
    if not (q.shape[1] == k.shape[1] == v.shape[1]) or k.shape[0] != v.shape[0]:
        raise InvalidInputError(
            f"sdpa shape mismatch: q{q.shape} k{k.shape} v{v.shape}"
        )
    n_q, d = q.shape
    n_kv = k.shape[0]
    if n_kv == 0:
        raise InvalidInputError("sdpa needs at least one key")
    scale = 1.0 / math.sqrt(d)
    kt = k.T
    out = np.empty((n_q, d), dtype=np.float64)
    step = max(1, SDPA_CHUNK_ELEMENTS // n_kv)
    for lo in range(0, n_q, step):
        scores = kernels.matmul(q[lo:lo + step], kt)
        scores *= scale
        kernels.row_softmax(scores, out=scores)
        out[lo:lo + step] = kernels.matmul(scores, v)
    return out


def frame_attention(x, params: AttentionLayerParams) -> np.ndarray:
    """Attention restricted to each frame's own tokens, plus residual.

    Parameters
    ----------
    x : ndarray of shape (S, P, d)
    """
    S, P, d = x.shape
    flat = x.reshape(S * P, d)
    q = kernels.matmul(flat, params.w_q).reshape(S, P, d)
    k = kernels.matmul(flat, params.w_k).reshape(S, P, d)
    v = kernels.matmul(flat, params.w_v).reshape(S, P, d)
    scores = kernels.batched_matmul(q, k.transpose(0, 2, 1))
    scores *= 1.0 / math.sqrt(d)
    probs = kernels.row_softmax(scores.reshape(S * P, P)).reshape(S, P, P)
    attn = kernels.batched_matmul(probs, v).reshape(S * P, d)
    return (flat + kernels.matmul(attn, params.w_o)).reshape(S, P, d)


def global_attention(
    x,
    params: AttentionLayerParams,
    qpath: QueryReducer | None = None,
    kvpath: KvReducer | None = None,
    stats_out: list | None = None,
) -> np.ndarray:
    """Attention over all ``S * P`` tokens with asymmetric reduction.

    Queries are merged within frame groups before projection, keys/values
    are reduced before projection, and the attention output is unmerged
    back to full length before the residual add. Identity reducers give
    exactly :func:`reference_global_attention`.

    If ``stats_out`` is a list, the query-path :class:`MatchStats` is
    appended to it.
    """
    qpath = qpath or QueryReducer()
    kvpath = kvpath or KvReducer()
    S, P, d = x.shape
    if params.d != d:
        raise InvalidInputError(f"layer dim {params.d} does not match tokens dim {d}")
    flat = x.reshape(S * P, d)

    if qpath.is_identity:
        q_tokens, merge_map, stats = flat, None, MatchStats()
    else:
        q_tokens, merge_map, stats = reduce_queries(flat, S, P, qpath)
    kv_tokens = flat if kvpath.is_identity else kvpath.reduce(flat, S, P)

    q = kernels.matmul(q_tokens, params.w_q)
    k = kernels.matmul(kv_tokens, params.w_k)
    v = kernels.matmul(kv_tokens, params.w_v)
    out = kernels.matmul(sdpa(q, k, v), params.w_o)
    if merge_map is not None:
        out = unmerge(out, merge_map)
    if stats_out is not None:
        stats_out.append(stats)
    return (flat + out).reshape(S, P, d)


def reference_global_attention(x, params: AttentionLayerParams) -> np.ndarray:
    """Unreduced global attention with residual; the baseline for comparisons."""
    S, P, d = x.shape
    flat = x.reshape(S * P, d)
    q = kernels.matmul(flat, params.w_q)
    k = kernels.matmul(flat, params.w_k)
    v = kernels.matmul(flat, params.w_v)
    out = kernels.matmul(sdpa(q, k, v), params.w_o)
    return (flat + out).reshape(S, P, d)
