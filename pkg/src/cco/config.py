"""Experiment configuration, loadable from and dumpable to JSON."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .graphdistill import DEFAULT_CHANNELS, ChannelRegistry
from .neural import NetConfig
from .optimize import SAConfig, SelfPlayConfig
from .reward import RewardWeights
from .scenario import SuiteConfig


@dataclass(frozen=True)
class SLConfig:
    epochs: int = 6
    lr: float = 0.02
    batch_size: int = 32
    holdout_frac: float = 0.1


@dataclass(frozen=True)
class Config:
    k_fov: int = 32
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    width: int = 32
    blocks: int = 3
    l2: float = 1e-4
    reward: RewardWeights = field(default_factory=RewardWeights)
    sa: SAConfig = field(default_factory=SAConfig)
    selfplay: SelfPlayConfig = field(default_factory=SelfPlayConfig)
    sl: SLConfig = field(default_factory=SLConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    s2c_episodes: int = 3000

    @property
    def registry(self) -> ChannelRegistry:
        return ChannelRegistry(tuple(self.channels))

    @property
    def top_k(self) -> int:
        return self.selfplay.top_k

    def net_config(self) -> NetConfig:
        return NetConfig(self.k_fov, len(self.channels), self.width, self.blocks, self.l2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        doc = dict(doc)
        if "channels" in doc:
            doc["channels"] = tuple(doc["channels"])
        if "reward" in doc:
            doc["reward"] = RewardWeights(**doc["reward"])
        if "sa" in doc:
            doc["sa"] = SAConfig.from_dict(doc["sa"])
        if "selfplay" in doc:
            doc["selfplay"] = SelfPlayConfig.from_dict(doc["selfplay"])
        if "sl" in doc:
            doc["sl"] = SLConfig(**doc["sl"])
        if "suite" in doc:
            doc["suite"] = SuiteConfig.from_dict(doc["suite"])
        cfg = cls(**doc)
        cfg.registry  # validates channel names
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
