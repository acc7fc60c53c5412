"""Offline per-layer sensitivity probing and the two-tier key-value schedule.

Schedule documents are JSON with a fixed field order::

    {
      "base_r_kv": 8,
      "threshold": 1.05,
      "multiplier_l": 3,
      "layers": [
        {"index": 0, "ratio": 1.0, "assigned_r_kv": 24, "excluded": false},
        ...
      ]
    }

``index`` is the ordinal of the layer among the model's global attention
layers. ``ratio`` is ``null`` for excluded layers.
"""

from __future__ import annotations

import csv
import json
import math
import numbers
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, forward, reference_forward, relative_divergence
from .config import ReductionPlan, read_document
from .exceptions import InvalidInputError, ProbeError, ScheduleFormatError
from .validation import check_factor

__all__ = [
    "DEFAULT_BASE_R",
    "DEFAULT_PROBE_R",
    "DEFAULT_THRESHOLD",
    "DEFAULT_MULTIPLIER",
    "SensitivityReport",
    "LayerEntry",
    "LayerTierSchedule",
    "probe_sensitivity",
    "build_schedule",
    "dumps_schedule",
    "loads_schedule",
    "save_schedule",
    "load_schedule",
]

DEFAULT_BASE_R = 32
DEFAULT_PROBE_R = 256
DEFAULT_THRESHOLD = 1.05
DEFAULT_MULTIPLIER = 3


@dataclass(frozen=True)
class SensitivityReport:
    base_r: int
    probe_r: int
    ratios: dict  # global-layer ordinal -> degradation ratio
    excluded_layers: frozenset = field(default_factory=frozenset)
    base_error: float = float("nan")

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "ratio"])
            for i in sorted(self.ratios):
                w.writerow([i, repr(float(self.ratios[i]))])


@dataclass(frozen=True)
class LayerEntry:
    index: int
    ratio: float | None
    assigned_r_kv: int
    excluded: bool = False


@dataclass(frozen=True)
class LayerTierSchedule:
    base_r_kv: int
    threshold: float
    multiplier_l: int
    layers: tuple[LayerEntry, ...]

    def entry(self, index: int) -> LayerEntry:
        for e in self.layers:
            if e.index == index:
                return e
        raise KeyError(index)

    def is_high(self, index: int) -> bool:
        """High-sensitivity layers (and excluded ones) keep the base factor."""
        e = self.entry(index)
        return e.excluded or e.ratio is None or e.ratio > self.threshold

    @property
    def assignments(self) -> list[int]:
        return [e.assigned_r_kv for e in self.layers]

    @property
    def high_sensitivity_layers(self) -> list[int]:
        return [e.index for e in self.layers if self.is_high(e.index) and not e.excluded]


def probe_sensitivity(
    model: Backbone,
    X,
    base_r: int = DEFAULT_BASE_R,
    probe_r: int = DEFAULT_PROBE_R,
    excluded=None,
    n_jobs: int = 1,
) -> SensitivityReport:
    """Degradation ratio of every probed global layer.

    All global layers run at ``base_r``; then, one layer at a time, the
    target layer runs at ``probe_r``. Error is the relative divergence of
    the final patch tokens from the unreduced forward, and each ratio is
    ``probed_error / base_error``. Query reduction is off throughout.

    When both errors are exactly zero the layer cannot degrade and its
    ratio is 1.0; a zero base error with a non-zero probed error raises
    :class:`ProbeError`. Probes of different layers are independent and run
    on ``n_jobs`` threads; the report does not depend on ``n_jobs``.
    """
    base_r = check_factor(base_r, "base_r")
    probe_r = check_factor(probe_r, "probe_r")
    if base_r > probe_r:
        raise InvalidInputError(f"base_r={base_r} exceeds probe_r={probe_r}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] < probe_r:
        raise InvalidInputError(
            f"probing at r={probe_r} needs at least {probe_r} frames, got shape {X.shape}"
        )
    spec = model.spec
    excluded = spec.excluded_global_layers if excluded is None else frozenset(excluded)
    sc = spec.special_count

    ref = reference_forward(model, X)
    base_plan = ReductionPlan.uniform(spec.n_global, r_q=1, r_kv=base_r)
    e_base = relative_divergence(forward(model, X, base_plan), ref, sc)
    targets = [i for i in range(spec.n_global) if i not in excluded]

    def probe(i):
        out = forward(model, X, base_plan.with_layer(i, probe_r))
        return relative_divergence(out, ref, sc)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            errors = list(pool.map(probe, targets))
    else:
        errors = [probe(i) for i in targets]

    ratios = {}
    for i, e_i in zip(targets, errors):
        if e_base == 0.0:
            if e_i != 0.0:
                raise ProbeError(
                    f"base error is zero but probing layer {i} gives {e_i}; ratio undefined"
                )
            ratios[i] = 1.0
        else:
            ratios[i] = e_i / e_base
    return SensitivityReport(base_r, probe_r, ratios, excluded, e_base)


def build_schedule(
    report: SensitivityReport,
    base_r_kv: int,
    threshold: float = DEFAULT_THRESHOLD,
    l: int = DEFAULT_MULTIPLIER,  # noqa: E741
) -> LayerTierSchedule:
    """Two tiers: ratio above ``threshold`` keeps ``base_r_kv``, the rest get ``l * base_r_kv``."""
    base_r_kv = check_factor(base_r_kv, "base_r_kv")
    l = check_factor(l, "l")  # noqa: E741
    entries = []
    for i in sorted(set(report.ratios) | set(report.excluded_layers)):
        if i in report.excluded_layers:
            entries.append(LayerEntry(i, None, base_r_kv, True))
            continue
        ratio = float(report.ratios[i])
        assigned = base_r_kv if ratio > threshold else l * base_r_kv
        entries.append(LayerEntry(i, ratio, assigned, False))
    return LayerTierSchedule(base_r_kv, float(threshold), l, tuple(entries))


# -- document form ---------------------------------------------------------

_TOP_FIELDS = ("base_r_kv", "threshold", "multiplier_l", "layers")
_LAYER_FIELDS = ("index", "ratio", "assigned_r_kv", "excluded")


def dumps_schedule(schedule: LayerTierSchedule) -> str:
    doc = {
        "base_r_kv": schedule.base_r_kv,
        "threshold": schedule.threshold,
        "multiplier_l": schedule.multiplier_l,
        "layers": [
            {
                "index": e.index,
                "ratio": e.ratio,
                "assigned_r_kv": e.assigned_r_kv,
                "excluded": e.excluded,
            }
            for e in schedule.layers
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _int(value, where):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ScheduleFormatError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _float(value, where):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ScheduleFormatError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ScheduleFormatError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ScheduleFormatError(f"{where}: unknown field {key!r}")
    for key in allowed:
        if key not in obj:
            raise ScheduleFormatError(f"{where}: missing field {key!r}")


def _from_doc(doc, src: str) -> LayerTierSchedule:
    _check_keys(doc, _TOP_FIELDS, src)
    base = _int(doc["base_r_kv"], f"{src}: base_r_kv")
    threshold = _float(doc["threshold"], f"{src}: threshold")
    mult = _int(doc["multiplier_l"], f"{src}: multiplier_l")
    if base < 1 or mult < 1:
        raise ScheduleFormatError(f"{src}: base_r_kv and multiplier_l must be >= 1")
    if not isinstance(doc["layers"], list):
        raise ScheduleFormatError(f"{src}: layers: expected a list")
    entries, seen = [], set()
    for n, item in enumerate(doc["layers"]):
        where = f"{src}: layers[{n}]"
        _check_keys(item, _LAYER_FIELDS, where)
        index = _int(item["index"], f"{where}.index")
        if index < 0 or index in seen:
            raise ScheduleFormatError(f"{where}.index: invalid or duplicate index {index}")
        seen.add(index)
        excluded = item["excluded"]
        if not isinstance(excluded, bool):
            raise ScheduleFormatError(f"{where}.excluded: expected true or false")
        ratio = item["ratio"]
        if ratio is None:
            if not excluded:
                raise ScheduleFormatError(f"{where}.ratio: required for a probed layer")
        else:
            ratio = _float(ratio, f"{where}.ratio")
        assigned = _int(item["assigned_r_kv"], f"{where}.assigned_r_kv")
        if assigned < 1:
            raise ScheduleFormatError(f"{where}.assigned_r_kv: must be >= 1")
        entries.append(LayerEntry(index, ratio, assigned, excluded))
    return LayerTierSchedule(base, threshold, mult, tuple(entries))


def loads_schedule(text: str, src: str = "<string>") -> LayerTierSchedule:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"{src}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return _from_doc(doc, src)


def save_schedule(schedule: LayerTierSchedule, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_schedule(schedule))


def load_schedule(path: str | os.PathLike) -> LayerTierSchedule:
    return _from_doc(read_document(path), str(path))
