"""Control-chart monitoring of per-layer gradients and learning-rate policy.

Each monitored layer yields one gradient data point per slice (channel):
the absolute-sum of the loss gradient over that slice's features. A
layer's chart compares those points against an upper control limit
UCL = mu + C * sigma_low, where mu is the current snapshot's own mean
and sigma_low is the layer's slice standard deviation recorded from a
baseline run at low learning rate. Layers whose points keep escaping the
limit get their learning-rate multiplier reduced, together with every
layer between them and the loss.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

DEFAULT_C = 6.0
DEFAULT_VIOLATION_THRESHOLD = 0.05
DEFAULT_CONSECUTIVE_WINDOW = 3
DEFAULT_HIGH_MULTIPLIER = 10.0


@dataclass
class GradientSnapshot:
    """Per-slice gradient magnitudes of one layer at one evaluation."""

    layer_id: str
    g: np.ndarray  # (N_j,) nonnegative slice sums
    epoch: int
    iteration: int

    @property
    def mu(self) -> float:
        return float(self.g.mean())

    @property
    def sigma(self) -> float:
        return float(self.g.std())  # population std


@dataclass
class ControlChart:
    layer_id: str
    mu: float
    sigma: float
    sigma_low: float
    c: float
    ucl: float
    violation_fraction: float


@dataclass
class LearningRatePolicy:
    """Per-layer learning-rate multipliers relative to the base rate."""

    multipliers: dict[str, float]
    flagged_layers: set[str] = field(default_factory=set)

    def multiplier(self, layer_id: str) -> float:
        return self.multipliers.get(layer_id, 1.0)

    def save(self, path: str | Path) -> None:
        payload = {
            "multipliers": self.multipliers,
            "flagged_layers": sorted(self.flagged_layers),
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @staticmethod
    def load(path: str | Path) -> "LearningRatePolicy":
        payload = json.loads(Path(path).read_text())
        return LearningRatePolicy(
            multipliers={k: float(v) for k, v in payload["multipliers"].items()},
            flagged_layers=set(payload.get("flagged_layers", [])),
        )


def slice_gradient_sums(grad: np.ndarray) -> np.ndarray:
    """Absolute-sum of gradients per slice.

    2-d arrays are (samples, channels) layer outputs; 3-d arrays are
    (channels, H, W) feature maps. Either way one number per channel.
    """
    grad = np.asarray(grad)
    if grad.ndim == 2:
        return np.abs(grad).sum(axis=0)
    if grad.ndim == 3:
        return np.abs(grad).reshape(grad.shape[0], -1).sum(axis=1)
    raise ValueError(f"cannot interpret gradient of ndim {grad.ndim} as slices")


def snapshot_gradients(
    layer_outputs: dict[str, Tensor], epoch: int, iteration: int
) -> list[GradientSnapshot]:
    """One snapshot per monitored layer, taken after a backward pass."""
    snapshots = []
    for layer_id, out in layer_outputs.items():
        if out.grad is None:
            raise ValueError(f"layer {layer_id!r} has no gradient; run backward first")
        snapshots.append(
            GradientSnapshot(layer_id, slice_gradient_sums(out.grad), epoch, iteration)
        )
    return snapshots


@dataclass
class ChartBaseline:
    """Per-layer center line and dispersion recorded from an all-low run."""

    mu_low: dict[str, float]
    sigma_low: dict[str, float]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"mu_low": self.mu_low, "sigma_low": self.sigma_low}, indent=2)
        )

    @staticmethod
    def load(path: str | Path) -> "ChartBaseline":
        payload = json.loads(Path(path).read_text())
        return ChartBaseline(
            mu_low={k: float(v) for k, v in payload["mu_low"].items()},
            sigma_low={k: float(v) for k, v in payload["sigma_low"].items()},
        )


def fit_baseline(snapshots: list[GradientSnapshot]) -> dict[str, float]:
    """Per-layer sigma_low: slice std per snapshot, averaged over snapshots."""
    if not snapshots:
        raise ValueError("no snapshots to fit a baseline from")
    by_layer: dict[str, list[float]] = {}
    for s in snapshots:
        by_layer.setdefault(s.layer_id, []).append(s.sigma)
    return {layer: float(np.mean(sigmas)) for layer, sigmas in by_layer.items()}


def fit_chart_baseline(snapshots: list[GradientSnapshot]) -> ChartBaseline:
    """sigma_low plus the baseline center line (mean of snapshot means)."""
    sigma_low = fit_baseline(snapshots)
    by_layer: dict[str, list[float]] = {}
    for s in snapshots:
        by_layer.setdefault(s.layer_id, []).append(s.mu)
    mu_low = {layer: float(np.mean(mus)) for layer, mus in by_layer.items()}
    return ChartBaseline(mu_low=mu_low, sigma_low=sigma_low)


def evaluate_chart(
    snapshot: GradientSnapshot,
    sigma_low: float,
    c: float = DEFAULT_C,
    center: float | None = None,
) -> ControlChart:
    """Chart for one snapshot: UCL = center + c * sigma_low.

    The center defaults to the snapshot's own mean; the monitoring
    protocol passes the baseline run's center line instead, so that a
    wholesale level shift is visible (a chart centered on itself can
    only see dispersion). Non-finite slice sums (a diverged run) count
    as violations too.
    """
    mu = snapshot.mu if center is None else center
    ucl = mu + c * sigma_low
    finite = np.isfinite(snapshot.g)
    violations = (snapshot.g > ucl) | ~finite
    if not np.isfinite(ucl):
        violations = ~finite
    return ControlChart(
        layer_id=snapshot.layer_id,
        mu=mu,
        sigma=snapshot.sigma,
        sigma_low=sigma_low,
        c=c,
        ucl=ucl,
        violation_fraction=float(violations.mean()),
    )


class StabilityMonitor:
    """Flags layers whose charts stay in violation over consecutive runs.

    Charts are anchored on the baseline center line. A layer is unstable
    once its violation fraction exceeds ``threshold`` in ``window``
    consecutive evaluations; the flag is sticky.
    """

    def __init__(
        self,
        baseline: ChartBaseline,
        c: float = DEFAULT_C,
        threshold: float = DEFAULT_VIOLATION_THRESHOLD,
        window: int = DEFAULT_CONSECUTIVE_WINDOW,
    ):
        self.baseline = baseline
        self.c = c
        self.threshold = threshold
        self.window = window
        self.flagged: set[str] = set()
        self._streak: dict[str, int] = {}
        self.history: list[tuple[GradientSnapshot, ControlChart]] = []

    def observe(self, snapshots: list[GradientSnapshot]) -> list[ControlChart]:
        charts = []
        for snap in snapshots:
            if snap.layer_id not in self.baseline.sigma_low:
                raise KeyError(f"no baseline sigma_low for layer {snap.layer_id!r}")
            chart = evaluate_chart(
                snap,
                self.baseline.sigma_low[snap.layer_id],
                self.c,
                center=self.baseline.mu_low[snap.layer_id],
            )
            charts.append(chart)
            self.history.append((snap, chart))
            if chart.violation_fraction > self.threshold:
                self._streak[snap.layer_id] = self._streak.get(snap.layer_id, 0) + 1
                if self._streak[snap.layer_id] >= self.window:
                    self.flagged.add(snap.layer_id)
            else:
                self._streak[snap.layer_id] = 0
        return charts


def derive_policy(
    layer_order: list[str],
    flagged: set[str],
    high_multiplier: float = DEFAULT_HIGH_MULTIPLIER,
    reduced_multiplier: float = 1.0,
) -> LearningRatePolicy:
    """Hybrid learning-rate policy from the flagged layer set.

    All post-sampling layers default to the high multiplier. From the
    flagged layer nearest the loss onward (toward the loss), the
    multiplier drops to the reduced value; layers on the input side of
    that pivot are left alone since taming the later layer already calms
    their gradients. An empty flag set leaves the all-high policy
    unchanged.
    """
    unknown = flagged - set(layer_order)
    if unknown:
        raise ValueError(f"flagged layers not in layer order: {sorted(unknown)}")
    if high_multiplier <= 0 or reduced_multiplier <= 0:
        raise ValueError("multipliers must be positive")
    multipliers = {layer: high_multiplier for layer in layer_order}
    if flagged:
        pivot = max(layer_order.index(l) for l in flagged)
        for layer in layer_order[pivot:]:
            multipliers[layer] = reduced_multiplier
    return LearningRatePolicy(multipliers=multipliers, flagged_layers=set(flagged))


def all_low_policy(layer_order: list[str]) -> LearningRatePolicy:
    return LearningRatePolicy(multipliers={layer: 1.0 for layer in layer_order})


def all_high_policy(
    layer_order: list[str], high_multiplier: float = DEFAULT_HIGH_MULTIPLIER
) -> LearningRatePolicy:
    return LearningRatePolicy(multipliers={layer: high_multiplier for layer in layer_order})


def save_chart_csvs(
    history: list[tuple[GradientSnapshot, ControlChart]], out_dir: str | Path
) -> list[Path]:
    """One CSV per layer with (iteration, slice_index, g, mu, ucl) rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_layer: dict[str, list[tuple[GradientSnapshot, ControlChart]]] = {}
    for snap, chart in history:
        by_layer.setdefault(snap.layer_id, []).append((snap, chart))
    written = []
    for layer_id, rows in by_layer.items():
        path = out_dir / f"chart_{layer_id.replace('.', '_')}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "slice_index", "g", "mu", "ucl"])
            for snap, chart in rows:
                for i, g in enumerate(snap.g):
                    writer.writerow([snap.iteration, i, repr(float(g)), repr(chart.mu), repr(chart.ucl)])
        written.append(path)
    return written
