"""Flat INI run configuration with documented defaults.

Every knob lives in one of six sections (dataset, network, head,
sampler, trainer, spc); anything omitted falls back to the desk-scale
default. The effective configuration is echoed into every output
directory so runs are reproducible from the config file and seed alone.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .dataset import Dataset, load_png_dataset, make_shapes_dataset
from .heads import HeadConfig, SegHead
from .network import FeatureNet, NetConfig
from .training import SamplerConfig, TrainConfig


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _opt_int(text: str) -> Optional[int]:
    text = text.strip().lower()
    return None if text in ("", "none") else int(text)


@dataclass
class RunConfig:
    # [dataset]
    source: str = "synthetic"            # synthetic | png
    root: str = ""                       # png source: directory with images/ and labels/
    class_count: int = 3
    ignore_label: Optional[int] = None
    height: int = 64
    width: int = 64
    train_images: int = 200
    eval_images: int = 50
    dataset_seed: int = 0
    noise: float = 14.0                  # synthetic texture amplitude
    # [network]
    stage_channels: tuple[int, ...] = (16, 32, 32, 64, 64)
    convs_per_stage: tuple[int, ...] = (2, 2, 2, 2, 2)
    branch_channels: int = 128
    net_seed: int = 0
    # [head]
    head: str = "fc"                     # fc | resblock
    width_factor: float = 0.125
    head_seed: int = 0
    # [sampler]
    budget: int = 48
    superpixels: int = 64
    compactness: float = 10.0
    partitioner: str = "slic"            # slic | grid
    pixel_sampling: str = "superpixel"   # superpixel | random
    # [trainer]
    base_lr: float = 3e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_epoch: int = 24
    total_epochs: int = 30
    batch_images: int = 1
    seed: int = 0
    keep_prob: float = 1.0
    monitor_start_epoch: Optional[int] = None
    # [spc]
    control_c: float = 6.0
    violation_threshold: float = 0.05
    consecutive_window: int = 3
    high_multiplier: float = 10.0
    hybrid1_multiplier: float = 5.0
    hybrid2_multiplier: float = 1.0


_SCHEMA: list[tuple[str, str, str, object]] = [
    ("dataset", "source", "source", str),
    ("dataset", "root", "root", str),
    ("dataset", "class_count", "class_count", int),
    ("dataset", "ignore_label", "ignore_label", _opt_int),
    ("dataset", "height", "height", int),
    ("dataset", "width", "width", int),
    ("dataset", "train_images", "train_images", int),
    ("dataset", "eval_images", "eval_images", int),
    ("dataset", "seed", "dataset_seed", int),
    ("dataset", "noise", "noise", float),
    ("network", "stage_channels", "stage_channels", _int_tuple),
    ("network", "convs_per_stage", "convs_per_stage", _int_tuple),
    ("network", "branch_channels", "branch_channels", int),
    ("network", "seed", "net_seed", int),
    ("head", "variant", "head", str),
    ("head", "width_factor", "width_factor", float),
    ("head", "seed", "head_seed", int),
    ("sampler", "budget", "budget", int),
    ("sampler", "superpixels", "superpixels", int),
    ("sampler", "compactness", "compactness", float),
    ("sampler", "partitioner", "partitioner", str),
    ("sampler", "pixel_sampling", "pixel_sampling", str),
    ("trainer", "base_lr", "base_lr", float),
    ("trainer", "momentum", "momentum", float),
    ("trainer", "weight_decay", "weight_decay", float),
    ("trainer", "lr_drop_epoch", "lr_drop_epoch", int),
    ("trainer", "total_epochs", "total_epochs", int),
    ("trainer", "batch_images", "batch_images", int),
    ("trainer", "seed", "seed", int),
    ("trainer", "keep_prob", "keep_prob", float),
    ("trainer", "monitor_start_epoch", "monitor_start_epoch", _opt_int),
    ("spc", "c", "control_c", float),
    ("spc", "violation_threshold", "violation_threshold", float),
    ("spc", "consecutive_window", "consecutive_window", int),
    ("spc", "high_multiplier", "high_multiplier", float),
    ("spc", "hybrid1_multiplier", "hybrid1_multiplier", float),
    ("spc", "hybrid2_multiplier", "hybrid2_multiplier", float),
]


def load_config(path: str | Path | None) -> RunConfig:
    """Parse an INI file onto the defaults; reject unknown keys loudly."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(Path(path))
    if not read:
        raise FileNotFoundError(f"config file {path} not found")
    known = {(s, k) for s, k, _, _ in _SCHEMA}
    for section in parser.sections():
        for key in parser[section]:
            if (section, key) not in known:
                raise ValueError(f"{path}: unknown config key [{section}] {key}")
    for section, key, attr, parse in _SCHEMA:
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                setattr(cfg, attr, parse(raw))
            except Exception as exc:
                raise ValueError(f"{path}: bad value for [{section}] {key} = {raw!r}: {exc}")
    return cfg


def config_to_ini(cfg: RunConfig) -> str:
    """Render the effective configuration back to INI text."""
    lines = []
    current = None
    for section, key, attr, _ in _SCHEMA:
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{section}]")
            current = section
        value = getattr(cfg, attr)
        if isinstance(value, tuple):
            value = " ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def describe_defaults() -> str:
    """Human-readable default listing for --help."""
    lines = ["configuration defaults (INI sections):"]
    current = None
    for section, key, attr, _ in _SCHEMA:
        if section != current:
            lines.append(f"  [{section}]")
            current = section
        lines.append(f"    {key} = {getattr(RunConfig(), attr)}")
    return "\n".join(lines)


def build_dataset(cfg: RunConfig, split: str) -> Dataset:
    """Materialize the train or eval split described by the config."""
    if split not in ("train", "eval"):
        raise ValueError("split must be 'train' or 'eval'")
    size = (cfg.height, cfg.width)
    if cfg.source == "synthetic":
        n = cfg.train_images if split == "train" else cfg.eval_images
        # disjoint seeds keep the splits independent
        seed = cfg.dataset_seed if split == "train" else cfg.dataset_seed + 1_000_000
        return make_shapes_dataset(n, size=size, n_classes=cfg.class_count, seed=seed, noise=cfg.noise)
    if cfg.source == "png":
        root = Path(cfg.root) / split
        return load_png_dataset(root, cfg.class_count, cfg.ignore_label, resize_to=size)
    raise ValueError(f"unknown dataset source {cfg.source!r}")


def build_net(cfg: RunConfig) -> FeatureNet:
    net_cfg = NetConfig(
        stage_channels=cfg.stage_channels,
        convs_per_stage=cfg.convs_per_stage,
        branch_channels=cfg.branch_channels,
    )
    return FeatureNet(net_cfg, (cfg.height, cfg.width), seed=cfg.net_seed)


def build_head(cfg: RunConfig, input_dim: int) -> SegHead:
    head_cfg = HeadConfig(
        variant=cfg.head,
        n_classes=cfg.class_count,
        input_dim=input_dim,
        width_factor=cfg.width_factor,
    )
    return SegHead(head_cfg, seed=cfg.head_seed)


def build_sampler_config(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(
        budget=cfg.budget,
        superpixels=cfg.superpixels,
        compactness=cfg.compactness,
        ignore_label=cfg.ignore_label,
        partitioner=cfg.partitioner,
        pixel_sampling=cfg.pixel_sampling,
    )


def build_train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        base_lr=cfg.base_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        lr_drop_epoch=cfg.lr_drop_epoch,
        total_epochs=cfg.total_epochs,
        batch_images=cfg.batch_images,
        seed=cfg.seed,
        keep_prob=cfg.keep_prob,
        monitor_start_epoch=cfg.monitor_start_epoch,
    )
