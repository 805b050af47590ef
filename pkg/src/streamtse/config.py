"""Model dimensions shared by the encoder and both language models."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .codec import CODEBOOK_SIZE, D_LATENT

NULL_TOKEN = CODEBOOK_SIZE  # reserved id; emitting it before a chunk is complete is a collapse
VOCAB_SIZE = CODEBOOK_SIZE + 1


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 16
    n_heads: int = 1
    enc_layers: int = 1
    selm_layers: int = 1
    arlm_layers: int = 1
    ffn_mult: int = 2
    conv_width: int = 3
    n_mels: int = 40
    d_latent: int = D_LATENT
    enc_window: int | None = None
    # fixed input normalisation for log-mel features
    mel_center: float = -1.5
    mel_scale: float = 4.5
    # initial bias on the null token's logit so an untrained model never picks it
    null_bias: float = -10.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        base = dict(d_model=8, n_heads=1, enc_layers=1, selm_layers=1, arlm_layers=1, ffn_mult=2)
        base.update(overrides)
        return cls(**base)
