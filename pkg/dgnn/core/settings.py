from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

READOUT_ALIASES = {
    "gated": "gated_sum",
    "gated_sum": "gated_sum",
    "sum": "gated_sum",
    "gr": "GR",
    "global": "GR",
    "cr": "CR",
    "concat": "CR",
}


class ModelConfig(BaseModel):
    hidden: int = Field(default=64, ge=1, description="Node state width d.")
    steps: int = Field(default=3, ge=1, description="Message passing steps T.")
    net_width: int = Field(default=128, ge=1, description="Hidden width of the three-layer edge and readout nets.")
    d_out: Optional[int] = Field(default=None, ge=1, description="Readout embedding width; defaults to hidden.")
    readout: Literal["gated_sum", "GR", "CR"] = "gated_sum"
    strategy: Literal["DG", "FC", "GN"] = "GN"
    norm_columns: bool = False
    norm_rows: bool = False
    seed: int = 0

    @field_validator("readout", mode="before")
    @classmethod
    def _readout_alias(cls, v):
        if isinstance(v, str):
            return READOUT_ALIASES.get(v.lower(), v)
        return v

    @field_validator("strategy", mode="before")
    @classmethod
    def _strategy_upper(cls, v):
        return v.upper() if isinstance(v, str) else v

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.readout == "GR" and self.strategy != "GN":
            raise ValueError("readout GR requires strategy GN (a global node)")
        return self

    @property
    def out_width(self) -> int:
        return self.d_out or self.hidden

    @property
    def normalized(self) -> bool:
        return self.norm_columns or self.norm_rows


class MlpConfig(BaseModel):
    hidden_layers: list[int] = Field(default_factory=lambda: [512, 128])
    nbits: int = Field(default=1024, ge=8)
    radius: int = Field(default=3, ge=0)
    seed: int = 0

    @field_validator("hidden_layers")
    @classmethod
    def _positive_layers(cls, v):
        if any(w < 1 for w in v):
            raise ValueError("hidden layer widths must be positive")
        return v


class TrainConfig(BaseModel):
    epochs: int = Field(default=300, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    patience: int = Field(default=50, ge=1)
    seed: int = 0
    precision: Literal["float64", "float32"] = "float64"
    threads: int = Field(default=1, ge=1)
    progress: bool = False


class OutlierConfig(BaseModel):
    k: float = Field(default=6.0, gt=0.0)
    max_iters: int = Field(default=3, ge=0)


class CliConfig(BaseModel):
    subcommand: str
    paths: dict[str, Optional[str]] = Field(default_factory=dict)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    mlp: MlpConfig = Field(default_factory=MlpConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    outliers: OutlierConfig = Field(default_factory=OutlierConfig)
