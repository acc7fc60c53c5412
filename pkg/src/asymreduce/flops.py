"""Closed-form FLOP accounting for the backbone's attention layers.

Counts are ``2 * multiply-accumulates`` of the matrix products only
(softmax, merging and matching are excluded), so they match what
:func:`asymreduce.kernels.count_ops` observes during a forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .attention import LayerKind
from .backbone import BackboneSpec
from .config import ReductionConfig, ReductionPlan, resolve_plan
from .kv_path import KvMode
from .query_path import query_token_count

__all__ = ["LayerFlops", "FlopReport", "attention_flops", "kv_token_count", "count_flops"]


@dataclass(frozen=True)
class LayerFlops:
    layer: int
    kind: LayerKind
    n_q: int
    n_kv: int
    score_flops: int
    value_flops: int
    projection_flops: int

    @property
    def attention_flops(self) -> int:
        return self.score_flops + self.value_flops

    @property
    def total(self) -> int:
        return self.score_flops + self.value_flops + self.projection_flops


@dataclass(frozen=True)
class FlopReport:
    layers: tuple[LayerFlops, ...]
    unreduced: tuple[LayerFlops, ...]

    @property
    def total(self) -> int:
        return sum(l.total for l in self.layers)

    @property
    def unreduced_total(self) -> int:
        return sum(l.total for l in self.unreduced)

    @property
    def speedup_vs_unreduced(self) -> float:
        return self.unreduced_total / self.total

    def global_attention_ratios(self) -> list[float]:
        """Unreduced / reduced score+value FLOPs of each global layer."""
        return [
            u.attention_flops / r.attention_flops
            for r, u in zip(self.layers, self.unreduced)
            if r.kind is LayerKind.GLOBAL
        ]

    def rows(self) -> list[dict]:
        return [
            {
                "layer": l.layer,
                "kind": l.kind.value,
                "n_q": l.n_q,
                "n_kv": l.n_kv,
                "score_flops": l.score_flops,
                "value_flops": l.value_flops,
                "projection_flops": l.projection_flops,
                "total_flops": l.total,
            }
            for l in self.layers
        ]


def attention_flops(n_q: int, n_kv: int, d: int, batch: int = 1) -> tuple[int, int, int]:
    """(score, value, projection) FLOPs of one attention call.

    Query and output projections run on ``n_q`` rows, key and value
    projections on ``n_kv`` rows.
    """
    score = 2 * n_q * n_kv * d * batch
    value = 2 * n_q * n_kv * d * batch
    projection = 2 * d * d * (2 * n_q + 2 * n_kv) * batch
    return score, value, projection


def kv_token_count(S: int, P: int, r_kv: int, mode: KvMode = KvMode.STRIDE_PRUNE) -> int:
    if r_kv == 1:
        return S * P
    if KvMode(mode) is KvMode.RANDOM_PRUNE:
        return math.ceil(S * P / r_kv)
    return math.ceil(S / r_kv) * P


def count_flops(
    spec: BackboneSpec, S: int, config: ReductionConfig | ReductionPlan | None = None
) -> FlopReport:
    """FLOPs of every layer for an ``S``-frame input, reduced and unreduced."""
    if config is None:
        plan = ReductionPlan.uniform(spec.n_global)
    elif isinstance(config, ReductionPlan):
        plan = config
    else:
        plan = resolve_plan(config, S, spec.n_global, spec.excluded_global_layers)
    P, d = spec.P, spec.d
    n_q = query_token_count(S, P, plan.r_q, plan.group_size, spec.special_count)
    reduced, unreduced = [], []
    g = 0
    for i, kind in enumerate(spec.layer_kinds):
        if kind is LayerKind.FRAME:
            row = LayerFlops(i, kind, P, P, *attention_flops(P, P, d, batch=S))
            reduced.append(row)
            unreduced.append(row)
            continue
        n_kv = kv_token_count(S, P, plan.layer_r_kv[g], plan.kv_mode)
        reduced.append(LayerFlops(i, kind, n_q, n_kv, *attention_flops(n_q, n_kv, d)))
        unreduced.append(LayerFlops(i, kind, S * P, S * P, *attention_flops(S * P, S * P, d)))
        g += 1
    return FlopReport(tuple(reduced), tuple(unreduced))
