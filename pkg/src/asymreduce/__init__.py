"""Asymmetric query/key-value token reduction for alternating-attention backbones."""

from .backbone import (
    Backbone,
    BackboneSpec,
    forward,
    gen_synthetic_sequence,
    init_backbone,
    reference_forward,
    relative_divergence,
)
from .config import ReductionConfig, ReductionPlan, resolve_plan
from .estimators import KvPruner, QueryMerger, ReducedBackbone
from .exceptions import ConfigurationError, InvalidInputError, ProbeError, ScheduleFormatError
from .flops import count_flops
from .kv_path import KvMode, KvReducer, length_adaptive_rkv
from .merging import MergeMap, MatchStats, merge, unmerge
from .query_path import QueryReducer, length_adaptive_rq
from .schedule import (
    LayerTierSchedule,
    SensitivityReport,
    build_schedule,
    load_schedule,
    probe_sensitivity,
    save_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "BackboneSpec",
    "ConfigurationError",
    "InvalidInputError",
    "KvMode",
    "KvPruner",
    "KvReducer",
    "LayerTierSchedule",
    "MatchStats",
    "MergeMap",
    "ProbeError",
    "QueryMerger",
    "QueryReducer",
    "ReducedBackbone",
    "ReductionConfig",
    "ReductionPlan",
    "ScheduleFormatError",
    "SensitivityReport",
    "build_schedule",
    "count_flops",
    "forward",
    "gen_synthetic_sequence",
    "init_backbone",
    "length_adaptive_rkv",
    "length_adaptive_rq",
    "load_schedule",
    "merge",
    "probe_sensitivity",
    "reference_forward",
    "relative_divergence",
    "resolve_plan",
    "save_schedule",
    "unmerge",
]
