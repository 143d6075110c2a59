"""Pipeline configuration as a line-oriented ``key = value`` file.

Top-level keys are plain names (``seed = 3``); settings of a component live
under a dotted prefix (``gan.iterations = 2000``). Unknown keys are errors.
Each pipeline stage hashes only the keys it depends on, chained with the
hashes of its upstream stages, so changing a downstream setting (for example
``finetune_set.generated_per_class``) leaves upstream artifacts valid.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import FinetuneSetConfig, SelectionConfig
from .errors import ConfigError
from .gan import FinetuneConfig, GanTrainConfig
from .normpool import EstimatorConfig
from .synth import SynthConfig

SECTIONS = {
    "gan": GanTrainConfig,
    "finetune": FinetuneConfig,
    "estimator": EstimatorConfig,
    "selection": SelectionConfig,
    "finetune_set": FinetuneSetConfig,
    "synth": SynthConfig,
}
# section fields that are driven by the top-level seed instead
_SEEDED = {("gan", "seed"), ("finetune", "seed")}


@dataclass
class PipelineConfig:
    data_dir: str = ""
    output_dir: str = "out"
    seed: int = 0
    channel_index: int = 0
    M: int = 73
    eval_records: tuple[str, ...] = ()  # empty means every DS2 record found
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    finetune_set: FinetuneSetConfig = field(default_factory=FinetuneSetConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def items(self) -> dict[str, object]:
        """Flat ``key -> value`` view in declaration order."""
        out: dict[str, object] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in SECTIONS:
                for sf in dataclasses.fields(value):
                    if (f.name, sf.name) not in _SEEDED:
                        out[f"{f.name}.{sf.name}"] = getattr(value, sf.name)
            else:
                out[f.name] = value
        return out

    def set(self, key: str, raw: str) -> None:
        key = key.strip()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS or (section, name) in _SEEDED:
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(self, section)
        else:
            section, name, target = None, key, self
            if name in SECTIONS:
                raise ConfigError(f"{key!r} is a section; set {key}.<field> instead")
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        hints = typing.get_type_hints(type(target))
        setattr(target, name, _parse_value(raw, hints[name], key))
        if name == "seed" and section is None:
            self.gan.seed = self.finetune.seed = self.seed
        if isinstance(target, GanTrainConfig):
            target.__post_init__()

    def to_text(self) -> str:
        return "\n".join(f"{k} = {_format_value(v)}" for k, v in self.items().items()) + "\n"

    def stage_hash(self, keys: list[str], upstream: list[str], fingerprint: str | None = None) -> str:
        items = self.items()
        payload = {"keys": {k: _jsonable(items[k]) for k in keys}, "upstream": upstream, "input": fingerprint}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _parse_value(raw: str, hint, key: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if origin is tuple:
            args = typing.get_args(hint)
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_parse_value(x, args[0], key) for x in items)
            if len(items) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values")
            return tuple(_parse_value(x, a, key) for x, a in zip(items, args))
        if origin is dict or hint is dict:
            out = {}
            for part in raw.split(","):
                if part.strip():
                    k, v = part.split(":")
                    out[k.strip()] = float(v)
            return out
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    raise ConfigError(f"unsupported type for {key}")


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, dict):
        return ", ".join(f"{k}: {x}" for k, x in v.items())
    return str(v)


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg.set(key, value)
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_config(text, cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.set(key, value)
    return cfg
