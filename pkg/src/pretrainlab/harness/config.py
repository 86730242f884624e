"""Run configuration: TOML files with a strict schema.

Every section maps to a dataclass below; unknown sections or keys, and values
of the wrong type, are rejected with :class:`ValidationError` so that a typo
in a learning rate or regularisation weight cannot pass silently.  Integer
sizes of ``0`` mean "full batch" / "disabled" where noted, since TOML has no
null.  Example::

    seed = 0

    [task]
    N = 200
    n = 32
    d = 16

    [regularizer]
    variant = "radreg"
    lambda = 0.1
    B = 8
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from ..errors import ValidationError

__all__ = [
    "TaskSection",
    "ModelSection",
    "PretrainSection",
    "FinetuneSection",
    "RegularizerSection",
    "ExperimentSection",
    "BoundsSection",
    "RunConfig",
    "load_config",
    "parse_config",
    "config_to_dict",
]

VARIANTS = ("none", "l2", "radreg")

# TOML keys that are not valid Python identifiers
_ALIASES = {"lambda": "lam"}
_REVERSE = {v: k for k, v in _ALIASES.items()}


@dataclass
class TaskSection:
    path: str = ""  # a saved task container; empty means generate
    N: int = 200
    n: int = 32
    n_test: int = 200
    d: int = 16
    K: int = 1
    c1: float = 1.0
    c2: float = 1.0
    margin: float = 0.1
    label_rule: str = "linear"
    num_classes: int = 2

    def check(self):
        for k in ("N", "n", "d", "K"):
            if getattr(self, k) < 1:
                raise ValidationError(f"task.{k} must be positive")
        if self.n_test < 0:
            raise ValidationError("task.n_test must be non-negative")
        if self.label_rule not in ("linear", "multiclass"):
            raise ValidationError(f"task.label_rule must be linear or multiclass")


@dataclass
class ModelSection:
    kind: str = "ce"  # ce: MLP encoder, mae: transformer encoder
    m: int = 32
    L: int = 2
    d_k: int = 4
    alpha1: float = 0.5
    alpha2: float = 0.5

    def check(self):
        if self.kind not in ("ce", "mae"):
            raise ValidationError(f"model.kind must be ce or mae, got {self.kind!r}")
        if self.m < 1 or self.d_k < 1 or self.L < 0:
            raise ValidationError("model sizes must be positive (L non-negative)")
        if self.kind == "mae" and self.L < 1:
            raise ValidationError("a transformer encoder needs L >= 1")


@dataclass
class PretrainSection:
    learning_rate: float = 0.02
    iterations: int = 2000
    batch_size: int = 32  # 0: full batch
    mask_ratio: float = 0.25
    fill_value: float = 0.0
    masked_only: bool = False

    def check(self):
        if not self.learning_rate > 0 or self.iterations < 0 or self.batch_size < 0:
            raise ValidationError("pretrain: need learning_rate > 0, iterations and "
                                  "batch_size >= 0")
        if not 0 <= self.mask_ratio <= 1:
            raise ValidationError("pretrain.mask_ratio must lie in [0, 1]")


@dataclass
class FinetuneSection:
    learning_rate: float = 1.0
    iterations: int = 200
    batch_size: int = 0  # 0: full batch
    radius: float = 10.0

    def check(self):
        if not self.learning_rate > 0 or self.iterations < 0 or self.batch_size < 0:
            raise ValidationError("finetune: need learning_rate > 0, iterations and "
                                  "batch_size >= 0")
        if not self.radius > 0:
            raise ValidationError("finetune.radius must be positive")


@dataclass
class RegularizerSection:
    variant: str = "none"
    lam: float = 0.0
    B: int = 8
    alpha: float = 0.01
    dual_step: float = 0.1
    radius: float = 1.0
    project: bool = True
    down_batch_size: int = 0  # 0: full batch
    probe_every: int = 0  # 0: no Moreau probes

    def check(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"regularizer.variant must be one of {VARIANTS}")
        if self.lam < 0 or self.alpha < 0 or self.dual_step < 0:
            raise ValidationError("lambda, alpha and dual_step must be non-negative")
        if self.B < 1:
            raise ValidationError("regularizer.B must be at least 1")
        if not self.radius > 0:
            raise ValidationError("regularizer.radius must be positive")
        if self.down_batch_size < 0 or self.probe_every < 0:
            raise ValidationError("down_batch_size and probe_every must be non-negative")


@dataclass
class ExperimentSection:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    variants: list = field(default_factory=lambda: list(VARIANTS))
    l2_lambda: float = 1e-3
    radreg_lambda: float = 0.1
    rad_est_B: int = 256

    def check(self):
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool)
                                     and 0 <= s < 2 ** 64 for s in self.seeds):
            raise ValidationError("experiment.seeds must be a non-empty list of u64 integers")
        if not self.variants or any(v not in VARIANTS for v in self.variants):
            raise ValidationError(f"experiment.variants must be drawn from {VARIANTS}")
        if len(set(self.variants)) != len(self.variants):
            raise ValidationError("experiment.variants contains duplicates")
        if self.l2_lambda < 0 or self.radreg_lambda < 0:
            raise ValidationError("lambdas must be non-negative")
        if self.rad_est_B < 1:
            raise ValidationError("experiment.rad_est_B must be at least 1")


@dataclass
class BoundsSection:
    kind: str = "ce"  # ce, mae or both
    W: list = field(default_factory=lambda: [1.0, 1.0])
    B: list = field(default_factory=lambda: [1.0, 1.0])
    z_norm: float = 1.0
    x_sq_sum: float = 1.0
    x_star: float = 1.0
    d: float = 16.0
    m: float = 32.0
    K: float = 1.0
    d_k: float = 4.0
    alpha1: float = 0.5
    alpha2: float = 0.5
    n: float = 32.0
    N: float = 200.0
    nu: float = 0.05
    H: float = 1.0
    b: float = 1.0
    G_phi: float = 1.0
    B_phi: float = 1.0
    R: float = 1.0
    tv: float = 0.0
    C_beta: float = 1.0
    beta: float = 0.5
    complexity_mult: float = 1.0
    covering_mult: float = 1.0
    confidence_mult: float = 1.0
    sum_variant: str = "appendix"
    rho_variant: str = "appendix"

    def check(self):
        if self.kind not in ("ce", "mae", "both"):
            raise ValidationError("bounds.kind must be ce, mae or both")
        for k in ("W", "B"):
            if not all(_is_number(v) for v in getattr(self, k)):
                raise ValidationError(f"bounds.{k} must be a list of numbers")


_SECTIONS = {
    "task": TaskSection,
    "model": ModelSection,
    "pretrain": PretrainSection,
    "finetune": FinetuneSection,
    "regularizer": RegularizerSection,
    "experiment": ExperimentSection,
    "bounds": BoundsSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    task: TaskSection = field(default_factory=TaskSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    regularizer: RegularizerSection = field(default_factory=RegularizerSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)

    def check(self) -> "RunConfig":
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) \
                or not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        for name in _SECTIONS:
            getattr(self, name).check()
        return self


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(section: str, key: str, value, default):
    where = f"{section}.{key}" if section else key
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not _is_number(value):
            raise ValidationError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValidationError(f"{where} must be an array, got {value!r}")
        return list(value)
    raise AssertionError(f"unhandled default type for {where}")  # pragma: no cover


def _build(cls, section: str, raw: dict):
    if not isinstance(raw, dict):
        raise ValidationError(f"[{section}] must be a table")
    obj = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        attr = _ALIASES.get(key, key)
        if attr not in known or key in _REVERSE:
            raise ValidationError(f"unknown key {key!r} in [{section}]")
        setattr(obj, attr, _coerce(section, key, value, getattr(obj, attr)))
    return obj


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config is not valid TOML: {exc}") from None
    cfg = RunConfig()
    for key, value in raw.items():
        if key == "seed":
            cfg.seed = _coerce("", "seed", value, 0)
        elif key in _SECTIONS:
            setattr(cfg, key, _build(_SECTIONS[key], key, value))
        else:
            raise ValidationError(f"unknown top-level key {key!r}")
    return cfg.check()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-data echo of ``cfg`` using the file's key names."""
    out = {"seed": cfg.seed}
    for name in _SECTIONS:
        sec = dataclasses.asdict(getattr(cfg, name))
        out[name] = {_REVERSE.get(k, k): v for k, v in sec.items()}
    return out
