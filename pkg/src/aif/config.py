"""Run configuration: one JSON document, paths relative to the file."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    corpus: str
    lexicon: str
    stopwords: str
    finetune: str
    hierarchy: str
    panel: list[str]
    investment: str
    availability: str | None = None
    exclusions: str | None = None
    output_dir: str = "out"


@dataclass
class EncoderSettings:
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    max_seq_len: int = 64


@dataclass
class PretrainConfig:
    steps: int = 200
    batch_size: int = 48
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class FinetuneConfig:
    batch_size: int = 16
    epochs: int = 10
    lr: float = 5e-4
    val_fraction: float = 0.2


@dataclass
class PipelineKnobs:
    top_k: int = 50
    screen_threshold: float = 0.1
    max_lag: int = 5
    mask_rate: float = 0.15
    jan_adjust: bool = True
    interpolate_gaps: bool = False
    national_region: str = "national"
    sentence_delimiters: str = "。！？\n"


@dataclass
class RunConfig:
    paths: Paths
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    pipeline: PipelineKnobs = field(default_factory=PipelineKnobs)
    polarity_overrides: dict[str, str] = field(default_factory=dict)
    rng_seed: int = 0
    base_dir: Path = field(default=Path("."), compare=False)

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if value is None:
            return None
        return (self.base_dir / value).resolve()

    def panel_paths(self) -> list[Path]:
        return [(self.base_dir / p).resolve() for p in self.paths.panel]

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def knob_problems(self) -> list[str]:
        k, e = self.pipeline, self.encoder
        problems = []
        if k.top_k < 1:
            problems.append("pipeline.top_k must be >= 1")
        if not 0.0 <= k.screen_threshold <= 1.0:
            problems.append("pipeline.screen_threshold must lie in [0, 1]")
        if k.max_lag < 0:
            problems.append("pipeline.max_lag must be >= 0")
        if not 0.0 <= k.mask_rate <= 1.0:
            problems.append("pipeline.mask_rate must lie in [0, 1]")
        if e.d_model % e.num_heads or (e.d_model // e.num_heads) % 2:
            problems.append("encoder.d_model / num_heads must be an even integer")
        if min(e.num_heads, e.d_model, e.d_ff, e.max_seq_len) < 1 or e.num_layers < 0:
            problems.append("encoder sizes must be positive")
        if self.pretrain.steps < 1 or self.pretrain.batch_size < 1:
            problems.append("pretrain.steps and pretrain.batch_size must be >= 1")
        if self.finetune.batch_size < 1 or self.finetune.epochs < 0:
            problems.append("finetune.batch_size must be >= 1 and finetune.epochs >= 0")
        if not 0.0 < self.finetune.val_fraction < 1.0:
            problems.append("finetune.val_fraction must lie in (0, 1)")
        if not 0 <= self.rng_seed < 2**31:
            problems.append("rng_seed must fit in a non-negative 32-bit integer")
        return problems


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    data = dict(data)
    allowed = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    if "paths" not in data:
        raise ConfigError("config: missing 'paths'")
    paths = dict(data.pop("paths"))
    if isinstance(paths.get("panel"), str):
        paths["panel"] = [paths["panel"]]
    sections = {"encoder": EncoderSettings, "pretrain": PretrainConfig,
                "finetune": FinetuneConfig, "pipeline": PipelineKnobs}
    kwargs = {"paths": _build(Paths, paths, "paths")}
    for key, cls in sections.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    for key in ("polarity_overrides", "rng_seed"):
        if key in data:
            kwargs[key] = data.pop(key)
    return RunConfig(base_dir=Path(base_dir), **kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)
