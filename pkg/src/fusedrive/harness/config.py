"""Experiment configuration: YAML file, dataclass tree, environment overrides."""
from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..encoder.geometry import EncoderConfig
from ..heads.config import HeadConfig
from ..heads.newton import NewtonOptions
from ..scene.types import SceneConfig

ENV_PREFIX = "FUSEDRIVE_"
STAGE_GROUPS = ("encoder", "aux", "pred", "plan")


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _build(cls, d: dict | None, what: str):
    d = d or {}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**_tupled(d))


def _plain(obj) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(obj).items()}


@dataclass(frozen=True)
class StageConfig:
    stage: int
    steps: int = 2000
    lr: float = 2e-4
    lr_min: float = 1e-6
    warmup: int = 100
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    queue: int = 3
    trainable: tuple[str, ...] = ()

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.steps < 0 or self.warmup < 0:
            raise ValueError("steps and warmup must be nonnegative")
        if self.queue < 1:
            raise ValueError("queue length must be at least 1")
        bad = set(self.trainable) - set(STAGE_GROUPS)
        if bad:
            raise ValueError(f"stage {self.stage}: unknown parameter groups {sorted(bad)}")

    @property
    def frozen(self) -> tuple[str, ...]:
        return tuple(g for g in STAGE_GROUPS if g not in self.trainable)


DEFAULT_TRAINABLE = {1: ("encoder", "aux"), 2: ("pred", "plan"), 3: ("plan",)}
DEFAULT_QUEUE = {1: 5, 2: 3, 3: 3}


@dataclass(frozen=True)
class Variant:
    """A named head configuration trained on top of the shared stage-1 encoder."""

    name: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "desk"
    seed: int = 0
    train_seed: int = 1000
    train_count: int = 64
    heldout_seed: int = 900000
    heldout_count: int = 16
    scene: SceneConfig = SceneConfig()
    encoder: EncoderConfig = EncoderConfig()
    heads: HeadConfig = HeadConfig()
    stages: tuple[StageConfig, ...] = ()
    newton: NewtonOptions = NewtonOptions()
    variants: tuple[Variant, ...] = (Variant("full"),)
    aux_weight_pos: float = 1.0
    workers: int = 1
    output_dir: str = "runs/desk"

    def __post_init__(self):
        if len(self.stages) != 3:
            raise ValueError(f"exactly 3 stages are required, got {len(self.stages)}")
        if [s.stage for s in self.stages] != [1, 2, 3]:
            raise ValueError("stages must be listed in order 1, 2, 3")
        if not self.variants:
            raise ValueError("at least one variant is required")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError("variant names must be unique")
        for v in self.variants:
            self.head_config(v.name)  # validates overrides
        sc, ec = self.scene, self.encoder
        if tuple(sc.bev_size) != tuple(ec.bev_size) or tuple(sc.extent) != tuple(ec.extent):
            raise ValueError("scene and encoder BEV grids differ")
        if sc.lidar_channels != ec.lidar_channels or sc.camera_channels != ec.camera_channels:
            raise ValueError("scene and encoder channel counts differ")
        if self.heads.t_plan != sc.t_plan or self.heads.t_pred > sc.t_pred or self.heads.n_past > sc.n_past:
            raise ValueError("head horizons are not covered by the scene config")
        if max(s.queue for s in self.stages) > sc.n_past + 1:
            raise ValueError("queue longer than the observed history")

    def stage(self, k: int) -> StageConfig:
        return self.stages[k - 1]

    def head_config(self, variant: str) -> HeadConfig:
        for v in self.variants:
            if v.name == variant:
                return HeadConfig.from_dict({**self.heads.to_dict(), **v.overrides})
        raise KeyError(f"unknown variant {variant!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "seed": self.seed,
            "train_seed": self.train_seed, "train_count": self.train_count,
            "heldout_seed": self.heldout_seed, "heldout_count": self.heldout_count,
            "scene": self.scene.to_dict(), "encoder": _plain(self.encoder),
            "heads": _plain(self.heads), "newton": _plain(self.newton),
            "stages": [_plain(s) for s in self.stages],
            "variants": {v.name: dict(v.overrides) for v in self.variants},
            "aux_weight_pos": self.aux_weight_pos, "workers": self.workers,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        stages = []
        for i, s in enumerate(d.pop("stages", [{}, {}, {}]) or []):
            s = dict(s)
            k = s.setdefault("stage", i + 1)
            s.setdefault("trainable", list(DEFAULT_TRAINABLE.get(k, ())))
            s.setdefault("queue", DEFAULT_QUEUE.get(k, 3))
            stages.append(_build(StageConfig, s, f"stage {k}"))
        variants = d.pop("variants", None) or {"full": {}}
        return cls(
            scene=_build(SceneConfig, d.pop("scene", None), "scene"),
            encoder=_build(EncoderConfig, d.pop("encoder", None), "encoder"),
            heads=HeadConfig.from_dict(d.pop("heads", None) or {}),
            newton=_build(NewtonOptions, d.pop("newton", None), "newton"),
            stages=tuple(stages),
            variants=tuple(Variant(k, dict(v or {})) for k, v in variants.items()),
            **d,
        )


def apply_env_overrides(doc: dict, environ=None) -> dict:
    """Override nested keys from ``FUSEDRIVE_A__B__C=value``; list indices are integers.

    Values are parsed as YAML scalars, so ``0.5``, ``true`` and ``[1, 2]`` work.
    """
    environ = os.environ if environ is None else environ
    doc = copy.deepcopy(doc)
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        node = doc
        for part in path[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
        value = yaml.safe_load(environ[key])
        if isinstance(node, list):
            node[int(path[-1])] = value
        else:
            node[path[-1]] = value
    return doc


def load_config(path, environ=None) -> ExperimentConfig:
    text = Path(path).read_text()
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(apply_env_overrides(doc, environ))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
