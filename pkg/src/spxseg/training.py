"""SGD training loop with per-layer learning rates and gradient snapshots.

One optimizer step per image batch: forward the feature network, draw
the sample budget from the image's superpixels, gather hypercolumns,
classify, and backpropagate the mean cross-entropy over the samples.
Per-layer learning rates come from a LearningRatePolicy; on monitored
epochs the head layers' output gradients are snapshotted for the
control-chart machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import spc
from . import tensor as T
from .dataset import Dataset, DatasetItem
from .heads import SegHead
from .metrics import confusion_matrix
from .network import FeatureNet, gather_hypercolumn_batch
from .sampling import SampleSet, draw_random_pixels, draw_samples, scatter_predictions
from .spc import GradientSnapshot, LearningRatePolicy, StabilityMonitor
from .superpixel import SuperpixelMap, grid_partition, slic
from .tensor import Tensor

IMAGE_SCALE = 255.0  # network inputs are scaled to [0, 1]; SLIC sees raw values


@dataclass
class SamplerConfig:
    budget: int = 48
    superpixels: int = 64
    compactness: float = 10.0
    ignore_label: int | None = None
    partitioner: str = "slic"  # "slic" | "grid" (ablation baseline)
    pixel_sampling: str = "superpixel"  # "superpixel" | "random" (ablation baseline)

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.partitioner not in ("slic", "grid"):
            raise ValueError(f"unknown partitioner {self.partitioner!r}")
        if self.pixel_sampling not in ("superpixel", "random"):
            raise ValueError(f"unknown pixel_sampling {self.pixel_sampling!r}")


@dataclass
class TrainConfig:
    base_lr: float = 3e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_epoch: int = 24
    total_epochs: int = 30
    batch_images: int = 1
    seed: int = 0
    keep_prob: float = 1.0  # dropout on the pyramid branch outputs
    monitor_start_epoch: int | None = None  # default: 60% of total_epochs

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if self.batch_images < 1:
            raise ValueError("batch_images must be >= 1")

    def resolved_monitor_start(self) -> int:
        if self.monitor_start_epoch is not None:
            return self.monitor_start_epoch
        return max(1, round(0.6 * self.total_epochs))

    def schedule_factor(self, epoch: int) -> float:
        """Learning-rate schedule: exactly 10x lower after the drop epoch."""
        return 0.1 if epoch > self.lr_drop_epoch else 1.0

    @staticmethod
    def paper_scale() -> "TrainConfig":
        return TrainConfig(base_lr=1e-6, lr_drop_epoch=16, total_epochs=20)


def sgd_step(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place momentum SGD update on one parameter array.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v
    """
    if not (param.shape == grad.shape == velocity.shape):
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, velocity {velocity.shape}"
        )
    velocity *= momentum
    velocity += grad + weight_decay * param
    param -= lr * velocity


def derive_seed(*parts: int) -> int:
    """Stable per-(run, epoch, item) integer seed."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    sample_confusion: np.ndarray
    snapshots: list[GradientSnapshot] = field(default_factory=list)


class Trainer:
    """Owns parameters, velocities, and the per-image step."""

    def __init__(
        self,
        net: FeatureNet,
        head: SegHead,
        train_config: TrainConfig,
        sampler_config: SamplerConfig,
        class_count: int,
        policy: Optional[LearningRatePolicy] = None,
    ):
        self.net = net
        self.head = head
        self.config = train_config
        self.sampler = sampler_config
        self.class_count = class_count
        self.policy = policy or LearningRatePolicy(multipliers={})
        self._layers = list(net.layers()) + [head.layer(n) for n in head.layer_order]
        self._velocities = {
            name: np.zeros_like(t.data) for name, t in self.parameters()
        }
        self._partition_cache: dict[str, SuperpixelMap] = {}

    def parameters(self) -> list[tuple[str, Tensor]]:
        return self.net.parameters() + self.head.parameters()

    def partition(self, item: DatasetItem) -> SuperpixelMap:
        cached = self._partition_cache.get(item.name)
        if cached is not None:
            return cached
        h, w = item.labels.shape
        if self.sampler.partitioner == "grid":
            spmap = grid_partition(h, w, self.sampler.superpixels)
        else:
            spmap = slic(item.image, self.sampler.superpixels, self.sampler.compactness)
        self._partition_cache[item.name] = spmap
        return spmap

    def _zero_grads(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def _draw(self, spmap: SuperpixelMap, labels: np.ndarray, seed: int) -> SampleSet:
        if self.sampler.pixel_sampling == "random":
            return draw_random_pixels(
                spmap, labels, self.sampler.budget, seed,
                ignore_label=self.sampler.ignore_label,
            )
        return draw_samples(
            spmap, labels, self.sampler.budget, seed,
            ignore_label=self.sampler.ignore_label,
        )

    def _forward_item(
        self, item: DatasetItem, samples: SampleSet, rng: Optional[np.random.Generator]
    ) -> tuple[Tensor, dict[str, Tensor]]:
        registry = self.net.forward(
            item.image / IMAGE_SCALE, rng=rng, keep_prob=self.config.keep_prob
        )
        feats, _ = gather_hypercolumn_batch(registry, samples.pixel_rows(), samples.pixel_cols())
        return self.head.forward(feats)

    def _apply_updates(self, epoch: int) -> None:
        factor = self.config.schedule_factor(epoch)
        for layer in self._layers:
            lr = self.config.base_lr * self.policy.multiplier(layer.layer_id) * factor
            for name, t in layer.parameters():
                if t.grad is None:
                    continue
                sgd_step(
                    t.data, t.grad, self._velocities[name],
                    lr, self.config.momentum, self.config.weight_decay,
                )

    def effective_rates(self, epoch: int) -> dict[str, float]:
        factor = self.config.schedule_factor(epoch)
        return {
            layer.layer_id: self.config.base_lr * self.policy.multiplier(layer.layer_id) * factor
            for layer in self._layers
        }

    def train_epoch(self, dataset: Dataset, epoch: int, monitor: bool = False) -> EpochStats:
        """One pass over the dataset; snapshots head gradients if asked.

        Monitored epochs end with a probe pass: the same image and the
        same sampled pixels every time (and across runs built on the
        same dataset), so chart points from different runs or epochs are
        directly comparable. The probe's gradients never reach the
        optimizer.
        """
        if not dataset.items:
            raise ValueError("dataset is empty")
        losses = []
        confusion = np.zeros((self.class_count, self.class_count), dtype=np.int64)
        pending = 0

        for idx, item in enumerate(dataset.items):
            if item.image.shape[1:] != item.labels.shape:
                raise ValueError(
                    f"{item.name}: image {item.image.shape[1:]} and labels "
                    f"{item.labels.shape} disagree"
                )
            spmap = self.partition(item)
            samples = self._draw(spmap, item.labels, derive_seed(self.config.seed, epoch, idx))
            rng = (
                np.random.default_rng([self.config.seed, epoch, idx, 7])
                if self.config.keep_prob < 1.0
                else None
            )
            if pending == 0:
                self._zero_grads()
            logits, _ = self._forward_item(item, samples, rng)
            labels = samples.labels()
            loss = T.cross_entropy(logits, labels)
            loss.backward()
            losses.append(float(loss.data))
            confusion += confusion_matrix(
                logits.data.argmax(axis=1), labels, self.class_count
            )

            pending += 1
            if pending >= self.config.batch_images or idx == len(dataset.items) - 1:
                self._apply_updates(epoch)
                pending = 0

        snapshots = self.probe_snapshots(dataset, epoch) if monitor else []
        return EpochStats(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            sample_confusion=confusion,
            snapshots=snapshots,
        )

    PROBE_SEED = 0x5EED

    def probe_snapshots(self, dataset: Dataset, epoch: int) -> list[GradientSnapshot]:
        """Head-layer gradient snapshots on the fixed probe input."""
        item = dataset.items[0]
        spmap = self.partition(item)
        samples = self._draw(spmap, item.labels, derive_seed(self.PROBE_SEED))
        self._zero_grads()
        logits, head_registry = self._forward_item(item, samples, None)
        T.cross_entropy(logits, samples.labels()).backward()
        snapshots = spc.snapshot_gradients(head_registry, epoch, epoch)
        self._zero_grads()
        return snapshots

    def predict_dense(self, item: DatasetItem, seed: int = 0) -> np.ndarray:
        """Dense class map: classify one pixel per region, scatter the classes."""
        spmap = self.partition(item)
        samples = draw_samples(
            spmap, item.labels, spmap.n_regions, derive_seed(seed, 0xE0A1),
            ignore_label=None,
        )
        registry = self.net.forward(item.image / IMAGE_SCALE)
        feats, _ = gather_hypercolumn_batch(
            registry, samples.pixel_rows(), samples.pixel_cols()
        )
        logits, _ = self.head.forward(feats)
        probs = T.softmax_probs(logits.data)
        classes = probs.argmax(axis=1)
        per_sample = [
            (s.superpixel_id, int(classes[i]), float(probs[i, classes[i]]))
            for i, s in enumerate(samples.samples)
        ]
        return scatter_predictions(spmap, per_sample)


@dataclass
class TrainResult:
    losses: list[float]
    snapshots: list[GradientSnapshot]
    trainer: Trainer


def run_training(
    dataset: Dataset,
    net: FeatureNet,
    head: SegHead,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    policy: Optional[LearningRatePolicy] = None,
    monitor_epochs: bool = True,
    log_path: Optional[Path] = None,
    epoch_callback: Optional[Callable[[EpochStats], None]] = None,
) -> TrainResult:
    """Drive train_epoch over the configured number of epochs."""
    trainer = Trainer(net, head, train_config, sampler_config, dataset.class_count, policy)
    monitor_start = train_config.resolved_monitor_start()
    losses = []
    snapshots: list[GradientSnapshot] = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, train_config.total_epochs + 1):
            monitor = monitor_epochs and epoch >= monitor_start
            stats = trainer.train_epoch(dataset, epoch, monitor=monitor)
            losses.append(stats.mean_loss)
            snapshots.extend(stats.snapshots)
            if log_fh:
                record = {
                    "epoch": epoch,
                    "iterations": len(dataset.items),
                    "loss": stats.mean_loss,
                    "effective_lr": trainer.effective_rates(epoch),
                }
                log_fh.write(json.dumps(record) + "\n")
            if epoch_callback:
                epoch_callback(stats)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(losses=losses, snapshots=snapshots, trainer=trainer)


@dataclass
class DiagnosisResult:
    baseline: spc.ChartBaseline
    baseline_flags: set[str]
    high_flags: set[str]
    policy: LearningRatePolicy
    baseline_losses: list[float]
    high_losses: list[float]
    monitor: StabilityMonitor
    baseline_monitor: StabilityMonitor


def run_spc_diagnosis(
    dataset: Dataset,
    make_net_head: Callable[[], tuple[FeatureNet, SegHead]],
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    high_multiplier: float = spc.DEFAULT_HIGH_MULTIPLIER,
    reduced_multiplier: float = 1.0,
    c: float = spc.DEFAULT_C,
    threshold: float = spc.DEFAULT_VIOLATION_THRESHOLD,
    window: int = spc.DEFAULT_CONSECUTIVE_WINDOW,
) -> DiagnosisResult:
    """Baseline + high-rate diagnostic pair, then the hybrid policy.

    The all-low run provides the per-layer center line and sigma_low
    (and is charted against itself as a sanity check); the all-high run
    is charted against that baseline, and layers that keep violating the
    UCL are flagged. The returned policy keeps the high multiplier
    everywhere except from the flagged layer nearest the loss onward.
    """
    net, head = make_net_head()
    low_policy = spc.all_low_policy(head.layer_order)
    low = run_training(dataset, net, head, train_config, sampler_config, low_policy)
    if not low.snapshots:
        raise ValueError(
            "baseline run produced no snapshots; increase total_epochs past the monitor start"
        )
    baseline = spc.fit_chart_baseline(low.snapshots)

    baseline_monitor = StabilityMonitor(baseline, c=c, threshold=threshold, window=window)
    for epoch in sorted({s.epoch for s in low.snapshots}):
        baseline_monitor.observe([s for s in low.snapshots if s.epoch == epoch])

    net, head = make_net_head()
    high_policy = spc.all_high_policy(head.layer_order, high_multiplier)
    high = run_training(dataset, net, head, train_config, sampler_config, high_policy)

    monitor = StabilityMonitor(baseline, c=c, threshold=threshold, window=window)
    for epoch in sorted({s.epoch for s in high.snapshots}):
        monitor.observe([s for s in high.snapshots if s.epoch == epoch])

    policy = spc.derive_policy(
        head.layer_order, monitor.flagged, high_multiplier, reduced_multiplier
    )
    return DiagnosisResult(
        baseline=baseline,
        baseline_flags=set(baseline_monitor.flagged),
        high_flags=set(monitor.flagged),
        policy=policy,
        baseline_losses=low.losses,
        high_losses=high.losses,
        monitor=monitor,
        baseline_monitor=baseline_monitor,
    )
