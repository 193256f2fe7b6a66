"""Model hyperparameters and ablation switches."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict


def _default_vocab() -> list:
    from ..synth.queries import default_bank

    return default_bank().vocabulary()


@dataclass
class ModelConfig:
    feature_dim: int = 64          # D (paper-scale backbones use 512)
    n_groups: int = 16             # centers per object
    group_size: int = 32           # points per group
    k_prop: int = 3                # propagation neighbors
    heads: int = 4
    encoder_k: int = 16            # neighborhood size for point-encoder stats
    head_hidden: int = 32
    max_tokens: int = 12
    vocab: list = field(default_factory=_default_vocab)
    # ablation toggles (full model = all on)
    use_ici: bool = True
    use_bcr: bool = True
    use_background_token: bool = True
    use_group_loss: bool = True
    use_gated_propagation: bool = True
    use_tg: bool = True
    use_tp: bool = True
    # head/propagation variants
    head_text_attention: bool = True
    idw_feature_space: bool = False
    idw_cross_object: bool = False

    def validate(self):
        if self.feature_dim % self.heads != 0:
            raise ValueError("feature_dim must be divisible by heads")
        if self.n_groups < 1 or self.group_size < 1:
            raise ValueError("n_groups and group_size must be >= 1")
        if self.k_prop > self.n_groups:
            raise ValueError("k_prop must be <= n_groups")
        if self.max_tokens < 1 or not self.vocab:
            raise ValueError("vocabulary and max_tokens must be non-empty")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data).validate()
