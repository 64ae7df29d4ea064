"""Run configuration: a strict JSON schema with round-trip guarantees.

Unknown keys are hard errors naming the offending key; ``parse`` ->
``to_dict`` -> ``parse`` is the identity on every valid config.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


class ConfigError(ValueError):
    def __init__(self, message: str, key: str = ""):
        super().__init__(message)
        self.key = key


def _check_unknown(d: dict, allowed: set[str], section: str) -> None:
    for key in d:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key: {where}", key=where)


@dataclass
class DataConfig:
    kind: str = "synthetic_cifar"  # "cifar10" | "synthetic_cifar" | "synthetic_keypoint"
    path: str = ""
    lowres_factor: int = 2
    train_count: int = 5000
    test_count: int = 2000
    image_size: int = 32

    @classmethod
    def parse(cls, d: dict) -> "DataConfig":
        _check_unknown(d, set(cls.__dataclass_fields__), "data")
        cfg = cls(**d)
        if cfg.kind not in ("cifar10", "synthetic_cifar", "synthetic_keypoint"):
            raise ConfigError(f"unknown data.kind: {cfg.kind}", key="data.kind")
        return cfg


@dataclass
class NetConfig:
    base_width: int = 16
    stage_blocks: list[int] = field(default_factory=lambda: [2, 2, 2])
    num_classes: int = 10
    num_keypoints: int = 1

    @classmethod
    def parse(cls, d: dict) -> "NetConfig":
        _check_unknown(d, set(cls.__dataclass_fields__), "net")
        return cls(**d)


@dataclass
class MgilSection:
    lie_depth_flie: int = 3
    lie_depth_cii: int = 2
    dilation_rates: list[int] = field(default_factory=lambda: [2, 3])
    fusion: str = "adaptive"
    cii_enabled: bool = True
    cii_input: str = "raw"
    normalize: bool = True

    @classmethod
    def parse(cls, d: dict) -> "MgilSection":
        _check_unknown(d, set(cls.__dataclass_fields__), "mgil")
        return cls(**d)


@dataclass
class AblationConfig:
    grid: str = "components"  # "components" | "downsamplers"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    @classmethod
    def parse(cls, d: dict) -> "AblationConfig":
        _check_unknown(d, set(cls.__dataclass_fields__), "ablation")
        cfg = cls(**d)
        if cfg.grid not in ("components", "downsamplers"):
            raise ConfigError(f"unknown ablation.grid: {cfg.grid}", key="ablation.grid")
        return cfg


@dataclass
class OptimSection:
    kind: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    schedule: str = "cosine"

    @classmethod
    def parse(cls, d: dict) -> "OptimSection":
        _check_unknown(d, set(cls.__dataclass_fields__), "optim")
        return cls(**d)


@dataclass
class RunConfig:
    task: str = "classify"
    seed: int = 0
    epochs: int = 30
    output_dir: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    net: NetConfig = field(default_factory=NetConfig)
    downsampler: str = "mgil"
    mgil: MgilSection = field(default_factory=MgilSection)
    optim: OptimSection = field(default_factory=OptimSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @classmethod
    def parse(cls, d: dict) -> "RunConfig":
        _check_unknown(d, set(cls.__dataclass_fields__), "")
        d = dict(d)
        sections = {
            "data": DataConfig, "net": NetConfig, "mgil": MgilSection,
            "optim": OptimSection, "ablation": AblationConfig,
        }
        kwargs = {}
        for key, section_cls in sections.items():
            if key in d:
                raw = d.pop(key)
                if not isinstance(raw, dict):
                    raise ConfigError(f"section {key} must be an object", key=key)
                kwargs[key] = section_cls.parse(raw)
        cfg = cls(**d, **kwargs)
        if cfg.task not in ("classify", "keypoint"):
            raise ConfigError(f"unknown task: {cfg.task}", key="task")
        from .blocks import DOWNSAMPLER_KINDS
        if cfg.downsampler not in DOWNSAMPLER_KINDS:
            raise ConfigError(f"unknown downsampler: {cfg.downsampler}", key="downsampler")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return RunConfig.parse(raw)
