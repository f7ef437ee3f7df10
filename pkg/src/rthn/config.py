"""Model and training hyperparameters.

Defaults follow the published setup: 200-d words, 50-d RP/GP embeddings,
100 LSTM units per direction, q/k/v of 250/250/200 with 5 heads, 75 words per
clause, 45 clauses per document, Adam at lr 0.005 with batches of 32.
"""

import dataclasses
import json
import warnings
from dataclasses import dataclass

VARIANTS = ("RTHN", "NoGPE", "NoRPE", "APE", "RRHN", "TTHN")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    variant: str = "RTHN"
    n_layers: int = 3
    word_dim: int = 200
    rpe_dim: int = 50
    gpe_dim: int = 50
    lstm_hidden: int = 100
    qk_dim: int = 250
    v_dim: int = 200
    n_heads: int = 5
    ffn_dim: int = 800
    gp_window: int = 10
    max_clauses: int = 45
    max_words: int = 75
    # both sublayers get residual + norm; False keeps only the post-FFN one
    double_residual: bool = True
    init_scale: float = 0.1
    forget_bias: float = 1.0
    ln_eps: float = 1e-6
    # optimisation
    lr: float = 0.005
    batch_size: int = 32
    l2: float = 1e-5
    aux_loss_weight: float = 1.0
    max_epochs: int = 30
    patience: int = 5
    val_fraction: float = 0.1
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def model_dim(self):
        return 2 * self.lstm_hidden

    @property
    def word_encoder(self):
        return "transformer" if self.variant == "TTHN" else "bilstm"

    @property
    def clause_encoder(self):
        return "bilstm" if self.variant == "RRHN" else "transformer"

    @property
    def uses_gpe(self):
        return self.variant != "NoGPE"

    @property
    def position_mode(self):
        return {"NoRPE": "none", "APE": "absolute"}.get(self.variant, "relative")

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in (
            "n_layers", "word_dim", "rpe_dim", "gpe_dim", "lstm_hidden", "qk_dim",
            "v_dim", "n_heads", "ffn_dim", "max_clauses", "max_words", "batch_size",
        ):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gp_window < 0:
            raise ConfigError("gp_window must be >= 0")
        if self.v_dim != self.model_dim:
            raise ConfigError(
                f"v_dim ({self.v_dim}) must equal 2*lstm_hidden ({self.model_dim})"
            )
        if self.qk_dim % self.n_heads or self.v_dim % self.n_heads:
            raise ConfigError(
                f"qk_dim {self.qk_dim} and v_dim {self.v_dim} must divide by n_heads {self.n_heads}"
            )
        if self.lr < 0 or self.l2 < 0 or self.aux_loss_weight < 0:
            raise ConfigError("lr, l2 and aux_loss_weight must be non-negative")
        if self.n_layers > 5:
            warnings.warn(f"n_layers={self.n_layers} is beyond the evaluated range 1..5")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def small_config(**overrides):
    """Desk-scale dimensions used by the synthetic experiments and tests."""
    base = dict(
        word_dim=16, rpe_dim=8, gpe_dim=8, lstm_hidden=8, qk_dim=20, v_dim=16,
        n_heads=2, ffn_dim=32, gp_window=4, max_clauses=12, max_words=10,
        batch_size=16, max_epochs=20,
    )
    base.update(overrides)
    return ModelConfig(**base)
