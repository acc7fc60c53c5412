"""Reduction settings and their resolution into a per-layer plan.

Precedence for each reduction factor: an explicit override, then the
length-adaptive rule (when enabled), then 1.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .exceptions import ConfigurationError, ScheduleFormatError
from .kv_path import KvMode, length_adaptive_rkv
from .query_path import DEFAULT_GROUP_SIZE, length_adaptive_rq
from .validation import check_factor

__all__ = ["SEED_ENV_VAR", "default_seed", "ReductionConfig", "ReductionPlan", "resolve_plan"]

SEED_ENV_VAR = "ASYMREDUCE_SEED"


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from None


@dataclass(frozen=True)
class ReductionPlan:
    """Fully resolved factors for one forward pass.

    ``layer_r_kv[i]`` is the key-value factor of the ``i``-th global layer.
    """

    r_q: int
    layer_r_kv: tuple[int, ...]
    group_size: int = DEFAULT_GROUP_SIZE
    kv_mode: KvMode = KvMode.STRIDE_PRUNE
    seed: int = 0

    def __post_init__(self):
        check_factor(self.r_q, "r_q")
        check_factor(self.group_size, "group_size")
        for r in self.layer_r_kv:
            check_factor(r, "r_kv")
        object.__setattr__(self, "layer_r_kv", tuple(int(r) for r in self.layer_r_kv))
        object.__setattr__(self, "kv_mode", KvMode(self.kv_mode))

    @classmethod
    def uniform(cls, n_global: int, r_q: int = 1, r_kv: int = 1, **kw) -> "ReductionPlan":
        return cls(r_q, (r_kv,) * n_global, **kw)

    def with_layer(self, index: int, r_kv: int) -> "ReductionPlan":
        rs = list(self.layer_r_kv)
        rs[index] = r_kv
        return ReductionPlan(self.r_q, tuple(rs), self.group_size, self.kv_mode, self.seed)

    @property
    def is_identity(self) -> bool:
        return self.r_q == 1 and all(r == 1 for r in self.layer_r_kv)


@dataclass
class ReductionConfig:
    """User-facing reduction settings.

    Parameters
    ----------
    r_q_override, r_kv_override : int, optional
        Fixed factors that beat the length-adaptive rules.
    group_size : int
        Frames per query-matching group.
    multiplier_l : int
        Low-sensitivity layers use ``multiplier_l * r_kv``. Only applies when a
        layer schedule is supplied; without one every layer is treated as
        high-sensitivity.
    use_length_adaptive : bool
        Derive factors from the frame count when not overridden.
    schedule_path : str, optional
        Schedule document produced by ``probe``.
    kv_mode : KvMode
    seed : int
        Seed for the random key-value pruning mode.
    """

    r_q_override: int | None = None
    r_kv_override: int | None = None
    group_size: int = DEFAULT_GROUP_SIZE
    multiplier_l: int = 3
    use_length_adaptive: bool = True
    schedule_path: str | None = None
    kv_mode: KvMode = KvMode.STRIDE_PRUNE
    seed: int = 0
    schedule: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("r_q_override", "r_kv_override"):
            value = getattr(self, name)
            if value is not None:
                check_factor(value, name)
        check_factor(self.group_size, "group_size")
        check_factor(self.multiplier_l, "multiplier_l")
        self.kv_mode = KvMode(self.kv_mode)

    @classmethod
    def identity(cls) -> "ReductionConfig":
        return cls(use_length_adaptive=False, multiplier_l=1)

    def resolve_r_q(self, S: int) -> int:
        if self.r_q_override is not None:
            return self.r_q_override
        return length_adaptive_rq(S) if self.use_length_adaptive else 1

    def resolve_r_kv(self, S: int) -> int:
        if self.r_kv_override is not None:
            return self.r_kv_override
        return length_adaptive_rkv(S) if self.use_length_adaptive else 1

    def load_schedule(self):
        from .schedule import load_schedule

        if self.schedule is not None:
            return self.schedule
        if self.schedule_path is not None:
            return load_schedule(self.schedule_path)
        return None

    # -- document form -----------------------------------------------------

    _FIELDS = (
        "r_q_override", "r_kv_override", "group_size", "multiplier_l",
        "use_length_adaptive", "schedule_path", "kv_mode", "seed",
    )

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k in self._FIELDS}
        d["kv_mode"] = self.kv_mode.value
        return d

    @classmethod
    def from_dict(cls, data: dict, where: str = "reduction") -> "ReductionConfig":
        if not isinstance(data, dict):
            raise ScheduleFormatError(f"{where}: expected an object")
        for key in data:
            if key not in cls._FIELDS:
                raise ScheduleFormatError(f"{where}: unknown field {key!r}")
        try:
            return cls(**data)
        except (ValueError, TypeError) as exc:
            raise ScheduleFormatError(f"{where}: {exc}") from None

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ReductionConfig":
        doc = read_document(path)
        return cls.from_dict(doc.get("reduction", {}), f"{path}: reduction")


def read_document(path: str | os.PathLike) -> dict:
    """Parse a JSON document, turning decode errors into located messages."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScheduleFormatError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(doc, dict):
        raise ScheduleFormatError(f"{path}: top level must be an object")
    return doc


def resolve_plan(
    config: ReductionConfig, S: int, n_global: int, excluded=frozenset()
) -> ReductionPlan:
    """Per-layer factors for an ``S``-frame input to a model with ``n_global`` global layers."""
    r_q = config.resolve_r_q(S)
    base = config.resolve_r_kv(S)
    schedule = config.load_schedule()
    high = set(range(n_global))
    if schedule is not None:
        known = {e.index for e in schedule.layers}
        bad = sorted(i for i in known if not 0 <= i < n_global)
        if bad:
            raise ConfigurationError(
                f"schedule references global layer(s) {bad}; model has {n_global}"
            )
        high = {i for i in range(n_global) if i not in known or schedule.is_high(i)}
    high |= set(excluded)
    layer_r_kv = tuple(base if i in high else config.multiplier_l * base for i in range(n_global))
    return ReductionPlan(r_q, layer_r_kv, config.group_size, config.kv_mode, config.seed)

