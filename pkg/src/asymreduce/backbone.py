"""Synthetic alternating-attention backbone with seeded weights.

Stands in for a pretrained multi-view reconstruction backbone: a stack of
frame and global attention layers (attention plus residual, no MLP or
norm) over frame-major tokens of shape (S, P, d), where the first
``special_count`` tokens of every frame are the camera and register tokens.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionLayerParams,
    LayerKind,
    frame_attention,
    global_attention,
    reference_global_attention,
)
from .config import ReductionConfig, ReductionPlan, read_document, resolve_plan
from .exceptions import ConfigurationError, InvalidInputError, ScheduleFormatError
from .kv_path import KvReducer
from .query_path import QueryReducer
from .validation import SPECIAL_COUNT, check_tokens

__all__ = [
    "BackboneSpec",
    "Backbone",
    "init_backbone",
    "forward",
    "reference_forward",
    "gen_synthetic_sequence",
    "relative_divergence",
    "save_spec",
    "load_spec",
]


def _alternating(n_layers: int) -> tuple[LayerKind, ...]:
    return tuple(LayerKind.FRAME if i % 2 == 0 else LayerKind.GLOBAL for i in range(n_layers))


@dataclass(frozen=True)
class BackboneSpec:
    n_layers: int = 8
    layer_kinds: tuple = None
    d: int = 32
    p_patch: int = 16
    special_count: int = SPECIAL_COUNT
    seed: int = 0
    weight_scale: float = 1.0
    # global-layer ordinals standing in for register-only attention layers
    excluded_global_layers: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        kinds = self.layer_kinds
        kinds = _alternating(self.n_layers) if kinds is None else tuple(LayerKind(k) for k in kinds)
        object.__setattr__(self, "layer_kinds", kinds)
        object.__setattr__(self, "excluded_global_layers", frozenset(self.excluded_global_layers))
        if len(kinds) != self.n_layers:
            raise ConfigurationError(
                f"{len(kinds)} layer kinds given for n_layers={self.n_layers}"
            )
        if self.d < 1 or self.p_patch < 1 or self.special_count < 0:
            raise ConfigurationError("d and p_patch must be positive")
        bad = [i for i in self.excluded_global_layers if not 0 <= i < self.n_global]
        if bad:
            raise ConfigurationError(f"excluded global layers {sorted(bad)} do not exist")

    @property
    def P(self) -> int:
        return self.p_patch + self.special_count

    @property
    def global_layer_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.layer_kinds) if k is LayerKind.GLOBAL]

    @property
    def n_global(self) -> int:
        return len(self.global_layer_indices)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "layer_kinds": [k.value for k in self.layer_kinds],
            "d": self.d,
            "p_patch": self.p_patch,
            "special_count": self.special_count,
            "seed": self.seed,
            "weight_scale": self.weight_scale,
            "excluded_global_layers": sorted(self.excluded_global_layers),
        }

    @classmethod
    def from_dict(cls, data, where: str = "backbone") -> "BackboneSpec":
        if not isinstance(data, dict):
            raise ScheduleFormatError(f"{where}: expected an object")
        allowed = set(cls().to_dict())
        for key in data:
            if key not in allowed:
                raise ScheduleFormatError(f"{where}: unknown field {key!r}")
        try:
            return cls(**data)
        except (ValueError, TypeError) as exc:
            raise ScheduleFormatError(f"{where}: {exc}") from None


def save_spec(spec: BackboneSpec, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"backbone": spec.to_dict()}, indent=2) + "\n")


def load_spec(path: str | os.PathLike) -> BackboneSpec:
    doc = read_document(path)
    return BackboneSpec.from_dict(doc.get("backbone", {}), f"{path}: backbone")


@dataclass(frozen=True)
class Backbone:
    spec: BackboneSpec
    layers: tuple[AttentionLayerParams, ...]


def init_backbone(spec: BackboneSpec) -> Backbone:
    """Draw every projection from N(0, 1/d) with ``spec.seed``.

    ``spec.weight_scale`` multiplies all weights; 0 gives a model whose
    layers are exact no-ops.
    """
    rng = np.random.default_rng(spec.seed)
    scale = spec.weight_scale / np.sqrt(spec.d)
    layers = tuple(
        AttentionLayerParams(*(rng.standard_normal((spec.d, spec.d)) * scale for _ in range(4)))
        for _ in range(spec.n_layers)
    )
    return Backbone(spec, layers)


def _check_input(model: Backbone, X) -> np.ndarray:
    X = check_tokens(X, n_special=model.spec.special_count, d=model.spec.d)
    if X.shape[1] != model.spec.P:
        raise InvalidInputError(
            f"input has {X.shape[1]} tokens per frame, model expects {model.spec.P}"
        )
    return X


def forward(
    model: Backbone,
    X,
    config: ReductionConfig | ReductionPlan | None = None,
    stats_out: list | None = None,
) -> np.ndarray:
    """Run all layers in order, reducing tokens in global layers only.

    ``config`` may be a :class:`ReductionConfig` (resolved against the input
    length) or an already resolved :class:`ReductionPlan`; ``None`` means no
    reduction.
    """
    X = _check_input(model, X)
    spec = model.spec
    if config is None:
        plan = ReductionPlan.uniform(spec.n_global)
    elif isinstance(config, ReductionPlan):
        plan = config
    else:
        plan = resolve_plan(config, X.shape[0], spec.n_global, spec.excluded_global_layers)
    if len(plan.layer_r_kv) != spec.n_global:
        raise ConfigurationError(
            f"plan covers {len(plan.layer_r_kv)} global layers, model has {spec.n_global}"
        )
    qpath = QueryReducer(plan.r_q, plan.group_size)
    g = 0
    for kind, params in zip(spec.layer_kinds, model.layers):
        if kind is LayerKind.FRAME:
            X = frame_attention(X, params)
        else:
            kvpath = KvReducer(plan.layer_r_kv[g], plan.kv_mode, plan.seed)
            X = global_attention(X, params, qpath, kvpath, stats_out)
            g += 1
    return X


def reference_forward(model: Backbone, X) -> np.ndarray:
    """Forward pass with plain, unreduced global attention."""
    X = _check_input(model, X)
    for kind, params in zip(model.spec.layer_kinds, model.layers):
        if kind is LayerKind.FRAME:
            X = frame_attention(X, params)
        else:
            X = reference_global_attention(X, params)
    return X


def relative_divergence(out, ref, special_count: int = SPECIAL_COUNT) -> float:
    """``||out - ref|| / ||ref||`` over patch tokens only."""
    a = np.asarray(out)[:, special_count:]
    b = np.asarray(ref)[:, special_count:]
    denom = np.linalg.norm(b)
    if denom == 0.0:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / denom)


def gen_synthetic_sequence(
    S: int,
    p_patch: int,
    d: int,
    mode: str = "smooth_walk",
    seed: int = 0,
    sigma: float = 0.05,
    special_count: int = SPECIAL_COUNT,
) -> np.ndarray:
    """Synthetic frame tokens of shape (S, p_patch + special_count, d).

    ``iid`` draws every token from a unit Gaussian. ``smooth_walk`` draws
    frame 0 that way and adds ``sigma`` times unit Gaussian noise per frame,
    mimicking the redundancy of consecutive video frames.
    """
    rng = np.random.default_rng(seed)
    P = p_patch + special_count
    if mode == "iid":
        return rng.standard_normal((S, P, d))
    if mode != "smooth_walk":
        raise InvalidInputError(f"unknown sequence mode {mode!r}")
    steps = rng.standard_normal((S, P, d))
    steps[1:] *= sigma
    return np.cumsum(steps, axis=0)
