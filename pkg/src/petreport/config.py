"""Typed configuration for every pipeline stage.

All numeric defaults reproduce the reference operating point, so an empty
config file is a valid run configuration. ``load_config`` rejects unknown
keys instead of ignoring them: a typo must fail loudly, not silently fall
back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import yaml

from .errors import ConfigError

# Width of the encoder token space and the number of resampled tokens per
# modality are fixed contract values, not tunables.
TOKEN_WIDTH = 768
LATENT_TOKENS = 128

F18_HALF_LIFE_S = 6586.2

LORA_TARGET_NAMES = ("query", "key", "value", "output")

SCHEDULE_LINEAR_WARMUP = "linear_warmup_constant"


@dataclass
class PrepConfig:
    """Volumetric preprocessing constants."""

    target_spacing_mm: Tuple[float, float, float] = (1.5, 1.5, 3.0)
    orientation: str = "RAS"
    hu_clip: Tuple[float, float] = (-1000.0, 1000.0)
    body_margin_slices: int = 10
    thigh_fraction: float = 0.2
    thigh_cap_slices: int = 50
    region_buffer_slices: int = 10
    decay_correct: bool = False
    half_life_s: float = F18_HALF_LIFE_S

    def validate(self):
        if len(self.target_spacing_mm) != 3 or any(s <= 0 for s in self.target_spacing_mm):
            raise ConfigError(f"prep.target_spacing_mm must be 3 positive floats, got {self.target_spacing_mm}")
        if self.orientation.upper() != "RAS":
            raise ConfigError(f"prep.orientation: only 'RAS' is supported, got {self.orientation!r}")
        lo, hi = self.hu_clip
        if not lo < hi:
            raise ConfigError(f"prep.hu_clip must satisfy low < high, got {self.hu_clip}")
        if self.body_margin_slices < 0:
            raise ConfigError("prep.body_margin_slices must be >= 0")
        if not 0.0 <= self.thigh_fraction <= 1.0:
            raise ConfigError(f"prep.thigh_fraction must lie in [0, 1], got {self.thigh_fraction}")
        if self.thigh_cap_slices < 0:
            raise ConfigError("prep.thigh_cap_slices must be >= 0")
        if self.region_buffer_slices < 0:
            raise ConfigError("prep.region_buffer_slices must be >= 0")
        if self.half_life_s <= 0:
            raise ConfigError("prep.half_life_s must be > 0")


@dataclass
class EncoderConfig:
    """Dual-stream encoder and token-resampler geometry."""

    window_shape: Tuple[int, int, int] = (32, 32, 32)
    patch_shape: Tuple[int, int, int] = (4, 4, 4)
    token_width: int = TOKEN_WIDTH
    latent_tokens: int = LATENT_TOKENS
    encoder_depth: int = 2
    encoder_heads: int = 8
    sampler_depth: int = 2
    sampler_heads: int = 8
    sampler_ff_mult: int = 4
    decoder_width: int = 4096
    freeze_encoder: bool = True

    def validate(self):
        for name, shape in (("window_shape", self.window_shape), ("patch_shape", self.patch_shape)):
            if len(shape) != 3 or any(int(v) != v or v < 1 for v in shape):
                raise ConfigError(f"encoder.{name} must be 3 positive ints, got {shape}")
        if any(w % p != 0 for w, p in zip(self.window_shape, self.patch_shape)):
            raise ConfigError(
                f"encoder.window_shape {self.window_shape} must be divisible by patch_shape {self.patch_shape}"
            )
        if self.token_width != TOKEN_WIDTH:
            raise ConfigError(f"encoder.token_width is fixed at {TOKEN_WIDTH}, got {self.token_width}")
        if self.latent_tokens != LATENT_TOKENS:
            raise ConfigError(f"encoder.latent_tokens is fixed at {LATENT_TOKENS}, got {self.latent_tokens}")
        for name, v in (
            ("encoder_depth", self.encoder_depth),
            ("encoder_heads", self.encoder_heads),
            ("sampler_depth", self.sampler_depth),
            ("sampler_heads", self.sampler_heads),
            ("sampler_ff_mult", self.sampler_ff_mult),
            ("decoder_width", self.decoder_width),
        ):
            if v < 1:
                raise ConfigError(f"encoder.{name} must be >= 1, got {v}")
        if self.token_width % self.encoder_heads != 0:
            raise ConfigError("encoder.token_width must be divisible by encoder_heads")
        if self.token_width % self.sampler_heads != 0:
            raise ConfigError("encoder.token_width must be divisible by sampler_heads")


@dataclass
class LoraConfig:
    """Low-rank adapter settings for the decoder's attention projections."""

    rank: int = 8
    alpha: float = 32.0
    dropout: float = 0.1
    target_matrices: Tuple[str, ...] = ("query", "value")

    def validate(self):
        if self.rank < 1:
            raise ConfigError(f"lora.rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ConfigError(f"lora.alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"lora.dropout must lie in [0, 1), got {self.dropout}")
        if not self.target_matrices:
            raise ConfigError("lora.target_matrices must not be empty")
        for name in self.target_matrices:
            if name not in LORA_TARGET_NAMES:
                raise ConfigError(
                    f"lora.target_matrices: unknown matrix {name!r}, expected subset of {LORA_TARGET_NAMES}"
                )

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


@dataclass
class TrainConfig:
    """Optimization schedule.

    The pretrain_* fields govern the stand-in base decoder: full-capacity
    language-model fitting on the text layout before the base is frozen
    and only the adapter stack trains. A deployment with a genuinely
    pretrained decoder would set pretrain_steps to 0.
    """

    base_lr: float = 5e-5
    warmup_steps: int = 100
    schedule: str = SCHEDULE_LINEAR_WARMUP
    epochs: int = 30
    micro_batch: int = 2
    accum_steps: int = 8
    effective_batch: int = 16
    weight_decay: float = 0.01
    seed: int = 0
    max_steps: Optional[int] = None
    pretrain_steps: int = 200
    pretrain_lr: float = 1e-2

    def validate(self):
        if self.base_lr <= 0:
            raise ConfigError(f"train.base_lr must be > 0, got {self.base_lr}")
        if self.warmup_steps < 0:
            raise ConfigError("train.warmup_steps must be >= 0")
        if self.schedule != SCHEDULE_LINEAR_WARMUP:
            raise ConfigError(f"train.schedule: only {SCHEDULE_LINEAR_WARMUP!r} is supported, got {self.schedule!r}")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.micro_batch < 1 or self.accum_steps < 1:
            raise ConfigError("train.micro_batch and train.accum_steps must be >= 1")
        if self.micro_batch * self.accum_steps != self.effective_batch:
            raise ConfigError(
                f"train.effective_batch ({self.effective_batch}) must equal "
                f"micro_batch * accum_steps ({self.micro_batch} * {self.accum_steps})"
            )
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("train.max_steps must be >= 1 when set")
        if self.pretrain_steps < 0:
            raise ConfigError("train.pretrain_steps must be >= 0")
        if self.pretrain_lr <= 0:
            raise ConfigError("train.pretrain_lr must be > 0")


@dataclass
class GenerationConfig:
    """Decoding-time settings."""

    top_p: float = 0.9
    temperature: float = 0.7
    repetition_penalty: float = 1.05
    max_new_tokens: int = 1024
    greedy_mode: bool = False
    stop_token: str = "[end-of-report]"
    max_input_tokens: int = 2048

    def validate(self):
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"generation.top_p must lie in (0, 1], got {self.top_p}")
        if self.temperature <= 0:
            raise ConfigError(f"generation.temperature must be > 0, got {self.temperature}")
        if self.repetition_penalty < 1.0:
            raise ConfigError(f"generation.repetition_penalty must be >= 1, got {self.repetition_penalty}")
        if self.max_new_tokens < 1:
            raise ConfigError("generation.max_new_tokens must be >= 1")
        if not self.stop_token:
            raise ConfigError("generation.stop_token must be non-empty")
        if self.max_input_tokens < 1:
            raise ConfigError("generation.max_input_tokens must be >= 1")


_SECTIONS = {
    "prep": PrepConfig,
    "encoder": EncoderConfig,
    "lora": LoraConfig,
    "train": TrainConfig,
    "generation": GenerationConfig,
}


@dataclass
class PipelineConfig:
    """Bundle of all stage configs; the unit of fingerprinting."""

    prep: PrepConfig = field(default_factory=PrepConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    def validate(self):
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _coerce(section_name: str, cls, raw: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {section_name}.{key}")
        default = getattr(cls(), key)
        if isinstance(default, tuple) and isinstance(value, (list, tuple)):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:  # wrong structural shape, e.g. scalar for a tuple field
        raise ConfigError(f"bad value in section {section_name!r}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    sections = {}
    for key, raw in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section: {key}")
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config section {key!r} must be a mapping")
        sections[key] = _coerce(key, _SECTIONS[key], raw)
    cfg = PipelineConfig(**sections)
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    """Load a YAML config file; an empty file yields the default config."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: PipelineConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
