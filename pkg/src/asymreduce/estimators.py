"""scikit-learn compatible wrappers.

Inputs are token tensors of shape (n_frames, tokens_per_frame, n_features)
with the special tokens first in each frame. ``fit`` learns whatever is
data dependent (a merge map, kept frames, a layer schedule) and
``transform`` applies it, so the reducers compose with ``Pipeline``,
``clone`` and ``get_params``/``set_params``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backbone import (
    BackboneSpec,
    forward,
    init_backbone,
    reference_forward,
    relative_divergence,
)
from .config import ReductionConfig, resolve_plan
from .exceptions import InvalidInputError
from .kv_path import KvMode, KvReducer, kept_frames
from .merging import merge, unmerge
from .query_path import QueryReducer, reduce_queries
from .schedule import build_schedule, probe_sensitivity
from .validation import SPECIAL_COUNT, check_tokens

__all__ = ["QueryMerger", "KvPruner", "ReducedBackbone"]


def _check_same_layout(est, X):
    if X.shape[:2] != (est.n_frames_, est.tokens_per_frame_):
        raise InvalidInputError(
            f"X has layout {X.shape[:2]}, estimator was fitted on "
            f"{(est.n_frames_, est.tokens_per_frame_)}"
        )


class QueryMerger(TransformerMixin, BaseEstimator):
    """Intra-group token merging.

    ``fit`` matches source tokens to destinations within groups of
    ``group_size`` frames; ``transform`` averages any tensor of the same
    layout through that map and returns the merged ``(n_dst, n_features)``
    rows; ``inverse_transform`` copies merged rows back to every position.

    Parameters
    ----------
    r_q : int, default=2
        Reduction factor over patch tokens.
    group_size : int, default=20
        Frames per matching group.
    special_count : int, default=5
        Leading per-frame tokens that are never merged.

    Attributes
    ----------
    merge_map_ : MergeMap
    match_stats_ : MatchStats
    n_frames_, tokens_per_frame_, n_features_in_ : int
    """

    def __init__(self, r_q=2, group_size=20, special_count=SPECIAL_COUNT):
        self.r_q = r_q
        self.group_size = group_size
        self.special_count = special_count

    def fit(self, X, y=None):
        X = check_tokens(X, n_special=self.special_count)
        S, P, d = X.shape
        _, self.merge_map_, self.match_stats_ = reduce_queries(
            X.reshape(S * P, d), S, P, QueryReducer(self.r_q, self.group_size),
            self.special_count,
        )
        self.n_frames_, self.tokens_per_frame_, self.n_features_in_ = S, P, d
        return self

    def transform(self, X):
        check_is_fitted(self, "merge_map_")
        X = check_tokens(X, n_special=self.special_count)
        _check_same_layout(self, X)
        S, P, d = X.shape
        return merge(X.reshape(S * P, d), self.merge_map_)

    def inverse_transform(self, Xt):
        check_is_fitted(self, "merge_map_")
        out = unmerge(Xt, self.merge_map_)
        return out.reshape(self.n_frames_, self.tokens_per_frame_, -1)


class KvPruner(TransformerMixin, BaseEstimator):
    """Key-value token reduction by temporal stride (or an ablation mode).

    Parameters
    ----------
    r_kv : int, default=1
    mode : {"stride_prune", "stride_merge", "random_prune"}
    seed : int, default=0
        Only used by ``random_prune``.
    """

    def __init__(self, r_kv=1, mode="stride_prune", seed=0):
        self.r_kv = r_kv
        self.mode = mode
        self.seed = seed

    def fit(self, X, y=None):
        X = check_tokens(X)
        self.reducer_ = KvReducer(self.r_kv, KvMode(self.mode), self.seed)
        self.n_frames_, self.tokens_per_frame_, self.n_features_in_ = X.shape
        self.kept_frames_ = (
            None if self.reducer_.mode is KvMode.RANDOM_PRUNE
            else kept_frames(self.n_frames_, self.r_kv)
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "reducer_")
        X = check_tokens(X)
        _check_same_layout(self, X)
        S, P, d = X.shape
        return self.reducer_.reduce(X.reshape(S * P, d), S, P)


class ReducedBackbone(TransformerMixin, BaseEstimator):
    """Synthetic alternating-attention backbone with asymmetric token reduction.

    ``fit`` builds the seeded model and, when ``probe`` is true, runs the
    offline sensitivity probe on ``X`` to derive the two-tier layer
    schedule. ``transform`` runs the reduced forward pass. ``score`` returns
    the negative relative divergence from the unreduced forward, so larger
    is better.
    """

    def __init__(
        self,
        n_layers=8,
        d=32,
        p_patch=16,
        seed=0,
        weight_scale=1.0,
        excluded_global_layers=(),
        r_q=None,
        r_kv=None,
        group_size=20,
        multiplier_l=3,
        length_adaptive=True,
        kv_mode="stride_prune",
        probe=False,
        base_r=32,
        probe_r=256,
        threshold=1.05,
    ):
        self.n_layers = n_layers
        self.d = d
        self.p_patch = p_patch
        self.seed = seed
        self.weight_scale = weight_scale
        self.excluded_global_layers = excluded_global_layers
        self.r_q = r_q
        self.r_kv = r_kv
        self.group_size = group_size
        self.multiplier_l = multiplier_l
        self.length_adaptive = length_adaptive
        self.kv_mode = kv_mode
        self.probe = probe
        self.base_r = base_r
        self.probe_r = probe_r
        self.threshold = threshold

    def _config(self, schedule=None) -> ReductionConfig:
        return ReductionConfig(
            r_q_override=self.r_q,
            r_kv_override=self.r_kv,
            group_size=self.group_size,
            multiplier_l=self.multiplier_l,
            use_length_adaptive=self.length_adaptive,
            kv_mode=self.kv_mode,
            schedule=schedule,
        )

    def fit(self, X, y=None):
        spec = BackboneSpec(
            n_layers=self.n_layers,
            d=self.d,
            p_patch=self.p_patch,
            seed=self.seed,
            weight_scale=self.weight_scale,
            excluded_global_layers=frozenset(self.excluded_global_layers),
        )
        self.model_ = init_backbone(spec)
        X = check_tokens(X, n_special=spec.special_count, d=spec.d)
        self.n_features_in_ = X.shape[2]
        self.sensitivity_ = None
        self.schedule_ = None
        if self.probe:
            self.sensitivity_ = probe_sensitivity(self.model_, X, self.base_r, self.probe_r)
            base = self._config().resolve_r_kv(X.shape[0])
            self.schedule_ = build_schedule(
                self.sensitivity_, base, self.threshold, self.multiplier_l
            )
        self.config_ = self._config(self.schedule_)
        return self

    def plan(self, n_frames: int):
        """Resolved per-layer factors for an ``n_frames`` input."""
        check_is_fitted(self, "model_")
        spec = self.model_.spec
        return resolve_plan(self.config_, n_frames, spec.n_global, spec.excluded_global_layers)

    def transform(self, X):
        check_is_fitted(self, "model_")
        return forward(self.model_, X, self.config_)

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=np.float64)
        ref = reference_forward(self.model_, X)
        return -relative_divergence(self.transform(X), ref, self.model_.spec.special_count)
