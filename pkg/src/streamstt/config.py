"""Model configuration, stream timing constants, and the delay spec."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any

SAMPLE_RATE = 16000
MS_PER_FRAME = 80  # one decoder step of audio
SAMPLES_PER_FRAME = SAMPLE_RATE * MS_PER_FRAME // 1000  # 1280
MEL_HOP = 160  # 10 ms
MEL_FRAMES_PER_STEP = SAMPLES_PER_FRAME // MEL_HOP  # 8
ENCODER_FRAMES_PER_STEP = 4  # 50 Hz encoder -> 12.5 Hz decoder

TAU_MIN_FRAMES = 1
TAU_MAX_FRAMES = 30

CONDITIONING_MODES = ("ada_rmsnorm", "sum_embedding", "special_token")


@dataclass(frozen=True)
class DelaySpec:
    """Target streaming delay in 80 ms decoder frames."""

    tau_frames: int

    def __post_init__(self) -> None:
        if not (TAU_MIN_FRAMES <= self.tau_frames <= TAU_MAX_FRAMES):
            raise ValueError(
                f"delay must be {TAU_MIN_FRAMES}..{TAU_MAX_FRAMES} frames, got {self.tau_frames}"
            )

    @property
    def tau_ms(self) -> int:
        return self.tau_frames * MS_PER_FRAME

    @classmethod
    def from_ms(cls, ms: int) -> "DelaySpec":
        if ms % MS_PER_FRAME != 0:
            raise ValueError(f"delay_ms must be a multiple of {MS_PER_FRAME}, got {ms}")
        return cls(ms // MS_PER_FRAME)

    @classmethod
    def from_frames(cls, frames: int) -> "DelaySpec":
        return cls(frames)


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int
    d_model: int
    n_heads: int
    window: int  # encoder frames, inclusive of self
    conv_channels: int
    ffn_hidden: int
    n_mels: int = 128
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class DecoderConfig:
    n_layers: int
    d_model: int
    n_heads: int
    n_kv_heads: int
    window: int  # tokens, inclusive of self
    ffn_hidden: int
    cond_inner: int = 32  # inner width of the delay-conditioning MLPs
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class ModelConfig:
    preset: str
    encoder: EncoderConfig
    decoder: DecoderConfig
    pooling: int = 4  # adapter temporal pooling, encoder frames per decoder step
    conditioning: str = "ada_rmsnorm"

    def __post_init__(self) -> None:
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")
        if self.pooling < 1:
            raise ValueError("pooling must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(
            preset=d["preset"],
            encoder=EncoderConfig(**d["encoder"]),
            decoder=DecoderConfig(**d["decoder"]),
            pooling=d.get("pooling", 4),
            conditioning=d.get("conditioning", "ada_rmsnorm"),
        )


def tiny_config(conditioning: str = "ada_rmsnorm") -> ModelConfig:
    """Desk-scale preset used by the test and training suites."""
    return ModelConfig(
        preset="tiny",
        encoder=EncoderConfig(
            n_layers=2, d_model=64, n_heads=4, window=32, conv_channels=64, ffn_hidden=256
        ),
        decoder=DecoderConfig(
            n_layers=2, d_model=64, n_heads=4, n_kv_heads=2, window=128, ffn_hidden=256
        ),
        conditioning=conditioning,
    )


def paper_config(conditioning: str = "ada_rmsnorm") -> ModelConfig:
    """Production-scale dimensions; instantiate sub-modules only (4.4B total)."""
    return ModelConfig(
        preset="paper",
        encoder=EncoderConfig(
            n_layers=32, d_model=1280, n_heads=32, window=750, conv_channels=1280, ffn_hidden=5120
        ),
        decoder=DecoderConfig(
            n_layers=26, d_model=3072, n_heads=32, n_kv_heads=8, window=8192, ffn_hidden=8192
        ),
        conditioning=conditioning,
    )


PRESETS = {"tiny": tiny_config, "paper": paper_config}
