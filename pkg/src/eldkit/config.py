"""Flat ``key = value`` pipeline configuration.

Keys carry a section prefix (``smm.step_size = 0.05``); ``seed`` and
``vocab.min_count`` are top level.  Unknown keys are rejected.  Sequence
values are comma separated.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable

from .baysmm import SmmTrainConfig
from .errors import MalformedLine
from .evaluation import BACKENDS, GridSpec
from .synth import SynthConfig

DEFAULT_SEED = 42


@dataclass
class ClassifierConfig:
    backend: str = "glcu"
    l2_weight: float = 1e-4
    em_iters: int = 50
    max_iters: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")


@dataclass
class CvConfig:
    folds: int = 5
    backend: str = "glcu"


@dataclass
class PipelineConfig:
    seed: int = DEFAULT_SEED
    min_count: float = 1e-3
    smm: SmmTrainConfig = field(default_factory=SmmTrainConfig)
    clf: ClassifierConfig = field(default_factory=ClassifierConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    cv: CvConfig = field(default_factory=CvConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_SECTIONS = ("smm", "clf", "grid", "cv", "synth")
_TOP = {"seed": "seed", "vocab.min_count": "min_count"}


def _coerce(text: str, default):
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default:
            return tuple(_coerce(t, default[0]) for t in items)
        return tuple(items)
    return text


def parse_config(lines: Iterable[str]) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MalformedLine("expected 'key = value'", lineno)
        out[key.strip()] = value.strip()
    return out


def build_config(values: dict[str, str], base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply string `values` onto `base` (defaults if None), validating keys."""
    cfg = base or PipelineConfig()
    top = {}
    per_section: dict[str, dict] = {s: {} for s in _SECTIONS}
    for key, raw in values.items():
        if key in _TOP:
            name = _TOP[key]
            top[name] = _coerce(raw, getattr(cfg, name))
            continue
        section, _, name = key.partition(".")
        if section not in per_section:
            raise KeyError(f"unknown config key {key!r}")
        obj = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(obj)}
        if name not in names:
            raise KeyError(f"unknown config key {key!r}")
        per_section[section][name] = _coerce(raw, getattr(obj, name))
    changes = dict(top)
    for section, kv in per_section.items():
        if kv:
            changes[section] = dataclasses.replace(getattr(cfg, section), **kv)
    return dataclasses.replace(cfg, **changes)


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as f:
        return build_config(parse_config(f))


def config_as_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)
