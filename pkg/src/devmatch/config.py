"""YAML run configuration.

Top-level keys: ``paths``, ``seed``, ``n_bags``, ``n_jobs``, ``world``,
``blocking``, ``boost``, ``self_training``, ``postprocess``, ``sweep``.
Every key is optional and falls back to the dataclass defaults.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .candidates import BlockingThresholds
from .learner import BoostParams
from .postprocess import PostProcessConfig
from .synthgen import WorldConfig


@dataclass(frozen=True)
class SelfTrainConfig:
    top_min: float = 0.4
    second_max: float = 0.05


@dataclass(frozen=True)
class PipelineConfig:
    world_dir: str = "world"
    work_dir: str = "work"
    seed: int = 0
    n_bags: int = 8
    n_jobs: int = 1
    world: WorldConfig = field(default_factory=WorldConfig)
    blocking: BlockingThresholds = field(default_factory=BlockingThresholds)
    boost: BoostParams = field(default_factory=BoostParams)
    self_training: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    postprocess: PostProcessConfig = field(default_factory=PostProcessConfig)
    sweep_thresholds: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 21))

    @property
    def work(self) -> Path:
        return Path(self.work_dir)


def _build(cls, values: Mapping[str, Any] | None):
    values = dict(values or {})
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def from_dict(raw: Mapping[str, Any]) -> PipelineConfig:
    raw = dict(raw or {})
    allowed = {"paths", "seed", "n_bags", "n_jobs", "world", "blocking", "boost",
               "self_training", "postprocess", "sweep"}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    paths = dict(raw.get("paths") or {})
    sweep = dict(raw.get("sweep") or {})
    kwargs: dict[str, Any] = {
        "world": _build(WorldConfig, raw.get("world")),
        "blocking": _build(BlockingThresholds, raw.get("blocking")),
        "boost": _build(BoostParams, raw.get("boost")),
        "self_training": _build(SelfTrainConfig, raw.get("self_training")),
        "postprocess": PostProcessConfig.from_dict(raw.get("postprocess") or {}),
    }
    for key in ("world_dir", "work_dir"):
        if key in paths:
            kwargs[key] = str(paths.pop(key))
    if paths:
        raise ValueError(f"unknown paths keys: {sorted(paths)}")
    for key in ("seed", "n_bags", "n_jobs"):
        if key in raw:
            kwargs[key] = int(raw[key])
    if "thresholds" in sweep:
        kwargs["sweep_thresholds"] = tuple(float(t) for t in sweep["thresholds"])
    return PipelineConfig(**kwargs)


def to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    return {
        "paths": {"world_dir": cfg.world_dir, "work_dir": cfg.work_dir},
        "seed": cfg.seed,
        "n_bags": cfg.n_bags,
        "n_jobs": cfg.n_jobs,
        "world": asdict(cfg.world),
        "blocking": asdict(cfg.blocking),
        "boost": asdict(cfg.boost),
        "self_training": asdict(cfg.self_training),
        "postprocess": cfg.postprocess.to_dict(),
        "sweep": {"thresholds": list(cfg.sweep_thresholds)},
    }


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Read a YAML file (or the defaults when ``path`` is None) and apply
    dotted overrides such as ``{"boost.rounds": 50}``."""
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return from_dict(raw)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
