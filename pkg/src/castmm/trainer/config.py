"""Training configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from castmm.corpus.properties import TARGET_KINDS
from castmm.fusion.models import VARIANTS, ModelConfig

# desk-scale encoder sizes; the fusion stack keeps its 4 x 8 layout
DESK_MODEL = ModelConfig(
    node_dim=64,
    text_dim=32,
    text_layers=1,
    text_heads=4,
    mp_blocks=3,
    rbf_dim=16,
    fusion_layers=4,
    fusion_heads=8,
    attn_dim=64,
    ffn_dim=128,
    proj_dim=32,
)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class TrainConfig:
    task: str = "regression:E_tot"
    variant: str = "cast"
    mask_ratio: float = 0.5
    batch_size: int = 64
    warmup_steps: int = 1000
    peak_lr: float = 3e-4
    cosine_period: int | None = None
    total_steps: int = 20000
    eval_every: int = 500
    weight_decay: float = 0.01
    seed: int = 0
    freeze_text: bool = False
    precision: str = "float32"
    min_freq: int = 2
    transfer: tuple[str, ...] = ("structure.", "text.", "fusion.")
    model: ModelConfig = field(default_factory=lambda: DESK_MODEL)

    def __post_init__(self):
        kind, _, prop = self.task.partition(":")
        if kind == "regression":
            if prop not in TARGET_KINDS:
                raise ConfigError("task", f"unknown property {prop!r}; expected one of {TARGET_KINDS}")
        elif kind not in ("mnp", "contrastive") or prop:
            raise ConfigError("task", f"unknown task {self.task!r}")
        if kind == "regression" and self.variant not in VARIANTS:
            raise ConfigError("variant", f"unknown variant {self.variant!r}")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ConfigError("mask_ratio", "must be in (0, 1]")
        if self.batch_size < 1 or (kind == "contrastive" and self.batch_size < 2):
            raise ConfigError("batch_size", "too small for this task")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps", "must be nonnegative")
        if self.total_steps < 1:
            raise ConfigError("total_steps", "must be positive")
        if self.cosine_period is not None and self.cosine_period < 1:
            raise ConfigError("cosine_period", "must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every", "must be positive")
        if not self.peak_lr > 0:
            raise ConfigError("peak_lr", "must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision", "expected float32 or float64")

    @property
    def kind(self) -> str:
        return self.task.partition(":")[0]

    @property
    def prop(self) -> str | None:
        return self.task.partition(":")[2] or None

    @property
    def period(self) -> int:
        if self.cosine_period is not None:
            return self.cosine_period
        return max(self.total_steps - self.warmup_steps, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transfer"] = list(self.transfer)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown training key")
        d = dict(d)
        if "model" in d:
            mknown = {f.name for f in fields(ModelConfig)}
            for k in d["model"]:
                if k not in mknown:
                    raise ConfigError(f"model.{k}", "unknown model key")
            try:
                d["model"] = replace(DESK_MODEL, **d["model"])
            except TypeError as e:
                raise ConfigError("model", str(e)) from None
        if "transfer" in d:
            d["transfer"] = tuple(d["transfer"])
        return cls(**d)
