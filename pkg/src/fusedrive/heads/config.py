from __future__ import annotations

from dataclasses import asdict, dataclass, fields

COLLISION_CLAMPS = ("min", "max")
COLLISION_NORMS = ("n2", "n")
COLLISION_SOURCES = ("pred", "gt")


@dataclass(frozen=True)
class HeadConfig:
    """Dimensions and switches for the prediction and planning heads."""

    embed_dim: int = 32
    hidden: int = 64
    num_modes: int = 3
    num_heads: int = 4
    num_points: int = 4
    n_past: int = 4
    t_pred: int = 12
    t_plan: int = 6
    dt: float = 0.5
    mode_attention: bool = True
    refine: bool = True
    refine_hidden: int = 64
    position_scale: float = 10.0      # metres per unit in network inputs
    score_weight: float = 1.0
    lambda_imi: float = 1.0
    lambda_col: float = 2.5
    collision_clamp: str = "min"
    collision_norm: str = "n2"
    collision_agents: str = "pred"
    pe_temperature: float = 100.0

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValueError("need at least one mode")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.lambda_imi < 0 or self.lambda_col < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.collision_clamp not in COLLISION_CLAMPS:
            raise ValueError(f"collision_clamp must be one of {COLLISION_CLAMPS}")
        if self.collision_norm not in COLLISION_NORMS:
            raise ValueError(f"collision_norm must be one of {COLLISION_NORMS}")
        if self.collision_agents not in COLLISION_SOURCES:
            raise ValueError(f"collision_agents must be one of {COLLISION_SOURCES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown head config keys: {sorted(unknown)}")
        return cls(**d)
