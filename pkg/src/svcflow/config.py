"""Pipeline configuration with cross-field validation and env overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .fusion import ABLATIONS

ENV_PREFIX = "SVCFLOW_"
SIGMA_MODES = ("frame", "utterance", "none")


@dataclass(frozen=True)
class PipelineConfig:
    # signal
    sample_rate: int = 24000
    hop: int = 240
    fft_size: int = 1024
    window: str = "hann"
    # matching
    k: int = 4
    aggregate: str = "mean"
    query_layers: tuple = (20, 21, 22, 23, 24)
    value_layer: int = 6
    # fusion
    ssl_dim: int = 1024
    d_model: int = 256
    condition_channels: int = 258
    d_spk: int = 192
    n_blocks: int = 4
    n_heads: int = 4
    d_ff: int = 1024
    kernel: int = 9
    spk_branch: bool = True
    dual_attention: bool = True
    residual: bool = True
    melody_positions: bool = True
    # flow model
    n_bands: int = 4
    overlap: int = 8
    cfm_hidden: int = 128
    cfm_blocks: int = 4
    cfm_kernel: int = 7
    sigma_mode: str = "frame"
    n_steps: int = 10
    lam: float = 0.01
    # training
    lr: float = 0.002
    weight_decay: float = 0.01
    train_steps: int = 2000
    segment_frames: int = 32
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "query_layers", tuple(int(v) for v in self.query_layers))
        self.validate()

    @property
    def ablation(self) -> str:
        if not self.spk_branch:
            return "no-spk"
        if not self.dual_attention:
            return "no-att"
        return "none"

    def with_ablation(self, ablation: str) -> "PipelineConfig":
        if ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {ablation!r}")
        return self.replace(spk_branch=ablation != "no-spk", dual_attention=ablation == "none")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        # deferred to avoid an import cycle through the cfm package
        from .cfm.bands import BandSpec
        from .features.stft import check_invertible

        if self.condition_channels != self.d_model + 2:
            raise ConfigError(
                f"condition_channels ({self.condition_channels}) must equal d_model + 2 ({self.d_model + 2})")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        for name in ("sample_rate", "hop", "fft_size", "k", "ssl_dim", "d_model", "d_spk", "n_blocks",
                     "n_heads", "d_ff", "kernel", "n_bands", "cfm_hidden", "cfm_blocks", "n_steps",
                     "train_steps", "segment_frames", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode must be one of {SIGMA_MODES}")
        if self.aggregate not in ("mean", "weighted"):
            raise ConfigError(f"aggregate must be 'mean' or 'weighted', got {self.aggregate!r}")
        if self.lam < 0 or self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lam and weight_decay must be >= 0 and lr > 0")
        if self.fft_size < 2 * self.hop:
            raise ConfigError(f"fft_size {self.fft_size} must be at least twice the hop {self.hop}")
        BandSpec(self.fft_size, self.hop, self.n_bands, self.overlap)
        check_invertible(self.fft_size, self.hop, self.window)

    def band_spec(self):
        from .cfm.bands import BandSpec

        return BandSpec(self.fft_size, self.hop, self.n_bands, self.overlap)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["query_layers"] = list(self.query_layers)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


def _parse_env_value(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as a boolean")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}") from None
    return raw


def env_overrides(environ=None) -> dict:
    """Config keys taken from ``SVCFLOW_<KEY>`` variables (e.g. ``SVCFLOW_N_STEPS=4``)."""
    environ = os.environ if environ is None else environ
    defaults = PipelineConfig()
    out = {}
    for f in fields(PipelineConfig):
        raw = environ.get(ENV_PREFIX + f.name.upper())
        if raw is not None:
            out[f.name] = _parse_env_value(raw, getattr(defaults, f.name))
    return out


def load_config(path=None, overrides=None, environ=None) -> PipelineConfig:
    """Defaults, then the JSON file, then environment, then explicit overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data.update(env_overrides(environ))
    data.update(overrides or {})
    return PipelineConfig.from_dict(data)


def tiny_config(**changes) -> PipelineConfig:
    """Small configuration for tests and the end-to-end smoke run."""
    base = dict(ssl_dim=32, d_model=32, condition_channels=34, d_spk=16, n_blocks=1, n_heads=2, d_ff=64,
                kernel=5, fft_size=512, n_bands=2, overlap=8, cfm_hidden=128, cfm_blocks=3, train_steps=8000,
                segment_frames=32)
    base.update(changes)
    return PipelineConfig(**base)
