"""Backbone + pyramid feature network and per-pixel hypercolumn gathering.

The backbone is five conv stages separated by four stride-2 max-pools
(total stride 16). Four parallel pooling branches with distinct windows
expand the receptive field on top of the fifth stage; each branch runs a
non-overlapping conv (kernel size = stride) over its pooled map. A
pixel's hypercolumn concatenates the l2-normalized channel slices at the
pixel's tracked location in the three deepest stages and all four branch
outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ConvLayer, Tensor

BRANCH_KERNEL = 3  # clamped to the pooled extent when the map is smaller
HYPERCOLUMN_LAYERS = ("conv3", "conv4", "conv5", "conv6_1", "conv6_2", "conv6_3", "conv6_4")

# fractions of the fifth-stage extent that reproduce pool windows
# 2/4/7/14 on a 28-wide map
_WINDOW_FRACTIONS = (1 / 14, 1 / 7, 1 / 4, 1 / 2)


@dataclass
class NetConfig:
    """Channel plan for the feature network.

    The desk-scale default is a miniature of the usual 16x-stride five
    stage layout; ``paper_scale()`` restores the full channel widths for
    shape-contract checks.
    """

    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32, 32, 64, 64)
    convs_per_stage: tuple[int, ...] = (2, 2, 2, 2, 2)
    branch_channels: int = 128

    def __post_init__(self):
        if len(self.stage_channels) != 5 or len(self.convs_per_stage) != 5:
            raise ValueError("the backbone has exactly five stages")

    @staticmethod
    def paper_scale() -> "NetConfig":
        return NetConfig(
            stage_channels=(64, 128, 256, 512, 512),
            convs_per_stage=(2, 2, 3, 3, 3),
            branch_channels=1024,
        )

    @property
    def total_stride(self) -> int:
        return 16

    def hypercolumn_length(self) -> int:
        c3, c4, c5 = self.stage_channels[2:]
        return c3 + c4 + c5 + 4 * self.branch_channels


def pyramid_windows(side: int) -> tuple[int, int, int, int]:
    """Four distinct pool windows for a fifth-stage map of extent ``side``.

    Each reference fraction picks the nearest unused divisor of the side;
    when the divisors run out (small maps), the nearest unused integer
    fills in so the four windows stay distinct.
    """
    if side < 4:
        raise ValueError(f"need extent >= 4 for four distinct pool windows, got {side}")
    divisors = [d for d in range(1, side + 1) if side % d == 0]
    chosen: list[int] = []
    for frac in _WINDOW_FRACTIONS:
        target = side * frac
        pool = [d for d in divisors if d not in chosen]
        if not pool:
            pool = [d for d in range(1, side + 1) if d not in chosen]
        chosen.append(min(pool, key=lambda d: (abs(d - target), d)))
    return tuple(sorted(chosen))


def _pooled_extent(side: int, window: int) -> int:
    return (side - window) // window + 1


def _branch_geometry(pooled: int) -> tuple[int, int, int]:
    """(kernel, padded extent, output extent) of a branch conv."""
    k = min(BRANCH_KERNEL, pooled)
    out = -(-pooled // k)  # ceil: right/bottom padding gives full coverage
    return k, out * k, out


@dataclass
class LayerPlan:
    channels: int
    extent: tuple[int, int]
    stride: int


def plan_shapes(config: NetConfig, input_hw: tuple[int, int]) -> dict[str, LayerPlan]:
    """Pure shape arithmetic for a given input size; no weights involved."""
    h, w = input_hw
    stride = config.total_stride
    if h % stride or w % stride:
        raise ValueError(f"input {h}x{w} must be a multiple of the total stride {stride}")
    plans: dict[str, LayerPlan] = {}
    cur_h, cur_w, cur_stride = h, w, 1
    for i, ch in enumerate(config.stage_channels, start=1):
        plans[f"conv{i}"] = LayerPlan(ch, (cur_h, cur_w), cur_stride)
        if i < 5:
            cur_h //= 2
            cur_w //= 2
            cur_stride *= 2

    side_h, side_w = plans["conv5"].extent
    if side_h != side_w:
        raise ValueError("fifth-stage map must be square for the pyramid windows")
    for b, window in enumerate(pyramid_windows(side_h), start=1):
        pooled = _pooled_extent(side_h, window)
        k, _, out = _branch_geometry(pooled)
        plans[f"conv6_{b}"] = LayerPlan(
            config.branch_channels, (out, out), plans["conv5"].stride * window * k
        )
    return plans


@dataclass
class RegistryEntry:
    tensor: Tensor
    stride: int


@dataclass
class Hypercolumn:
    """One sampled pixel's concatenated, per-layer normalized feature vector."""

    vector: np.ndarray
    segment_offsets: list[tuple[str, int, int]]  # (layer_id, start, length)
    pixel: tuple[int, int]
    tensor: Tensor = field(repr=False, default=None)

    def segment(self, layer_id: str) -> np.ndarray:
        for name, start, length in self.segment_offsets:
            if name == layer_id:
                return self.vector[start : start + length]
        raise KeyError(layer_id)


class FeatureNet:
    """Backbone plus pyramid branches, built for one input extent."""

    def __init__(self, config: NetConfig, input_hw: tuple[int, int], seed: int = 0):
        self.config = config
        self.input_hw = tuple(input_hw)
        self.plans = plan_shapes(config, self.input_hw)
        side = self.plans["conv5"].extent[0]
        self.windows = pyramid_windows(side)

        self.stages: list[list[ConvLayer]] = []
        in_ch = config.in_channels
        layer_seed = 0
        for i, (ch, n_convs) in enumerate(
            zip(config.stage_channels, config.convs_per_stage), start=1
        ):
            stage = []
            for j in range(1, n_convs + 1):
                rng = np.random.default_rng([seed, layer_seed])
                stage.append(T.make_conv_layer(in_ch, ch, 3, 3, 1, 1, f"conv{i}_{j}", rng))
                in_ch = ch
                layer_seed += 1
            self.stages.append(stage)

        self.branches: list[tuple[int, ConvLayer]] = []
        c5 = config.stage_channels[4]
        for b, window in enumerate(self.windows, start=1):
            pooled = _pooled_extent(side, window)
            k, _, _ = _branch_geometry(pooled)
            rng = np.random.default_rng([seed, layer_seed])
            conv = T.make_conv_layer(c5, config.branch_channels, k, k, k, 0, f"conv6_{b}", rng)
            self.branches.append((window, conv))
            layer_seed += 1

    def layers(self) -> list[ConvLayer]:
        out = [layer for stage in self.stages for layer in stage]
        out.extend(conv for _, conv in self.branches)
        return out

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = []
        for layer in self.layers():
            params.extend(layer.parameters())
        return params

    def forward(
        self,
        image: Tensor | np.ndarray,
        rng: Optional[np.random.Generator] = None,
        keep_prob: float = 1.0,
    ) -> dict[str, RegistryEntry]:
        """Run the network; returns the layer registry keyed by layer id.

        Optional inverted dropout (``keep_prob`` < 1) applies to the
        pyramid branch outputs during training.
        """
        x = image if isinstance(image, Tensor) else Tensor(image)
        if x.data.ndim != 3 or x.data.shape[0] != self.config.in_channels:
            raise ValueError(
                f"expected ({self.config.in_channels}, H, W) input, got {x.data.shape}"
            )
        h, w = x.data.shape[1:]
        stride = self.config.total_stride
        if h % stride or w % stride:
            raise ValueError(
                f"input {h}x{w} not divisible by the total stride; "
                f"both extents must be a multiple of {stride}"
            )
        if (h, w) != self.input_hw:
            raise ValueError(
                f"network was built for {self.input_hw}, got {h}x{w}"
            )
        if keep_prob < 1.0 and rng is None:
            raise ValueError("dropout needs an RNG")

        registry: dict[str, RegistryEntry] = {}
        cur = x
        cur_stride = 1
        for i, stage in enumerate(self.stages, start=1):
            for layer in stage:
                cur = T.relu(T.conv2d(cur, layer))
            registry[f"conv{i}"] = RegistryEntry(cur, cur_stride)
            if i < 5:
                cur, _ = T.maxpool(cur, 2, 2)
                cur_stride *= 2

        conv5 = registry["conv5"]
        for b, (window, conv) in enumerate(self.branches, start=1):
            pooled, _ = T.maxpool(conv5.tensor, window, window)
            k, padded, _ = _branch_geometry(pooled.data.shape[1])
            pad = padded - pooled.data.shape[1]
            if pad:
                pooled = T.pad2d(pooled, 0, pad, 0, pad)
            out = T.relu(T.conv2d(pooled, conv))
            if keep_prob < 1.0:
                out = T.dropout(out, keep_prob, rng)
            registry[f"conv6_{b}"] = RegistryEntry(out, conv5.stride * window * k)
        return registry


def track_location(
    registry: dict[str, RegistryEntry], pixel: tuple[int, int], layer_id: str
) -> tuple[int, int]:
    """Feature-map cell whose receptive field contains the input pixel.

    Floor division by the layer's cumulative stride, clamped to the
    layer's spatial extent.
    """
    if layer_id not in registry:
        raise KeyError(f"unknown layer id {layer_id!r}")
    entry = registry[layer_id]
    _, fh, fw = entry.tensor.data.shape
    r, c = pixel
    if r < 0 or c < 0:
        raise ValueError(f"pixel {pixel} out of bounds")
    return min(r // entry.stride, fh - 1), min(c // entry.stride, fw - 1)


def hypercolumn_segments(registry: dict[str, RegistryEntry]) -> list[tuple[str, int, int]]:
    """(layer_id, start, length) records for the concatenated vector."""
    segments = []
    start = 0
    for layer_id in HYPERCOLUMN_LAYERS:
        length = registry[layer_id].tensor.data.shape[0]
        segments.append((layer_id, start, length))
        start += length
    return segments


def gather_hypercolumn_batch(
    registry: dict[str, RegistryEntry],
    rows: np.ndarray,
    cols: np.ndarray,
    epsilon: float = T.L2_EPSILON,
) -> tuple[Tensor, list[tuple[str, int, int]]]:
    """Hypercolumns for a batch of pixels as an (n, D) tensor.

    Each layer contributes its channel slice at the pixels' tracked
    locations, normalized to unit l2 norm per pixel per layer so no
    single layer's scale dominates. Backward scatters gradient only into
    the gathered cells.
    """
    missing = [l for l in HYPERCOLUMN_LAYERS if l not in registry]
    if missing:
        raise KeyError(f"registry is missing layers: {missing}")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    parts = []
    for layer_id in HYPERCOLUMN_LAYERS:
        entry = registry[layer_id]
        _, fh, fw = entry.tensor.data.shape
        rr = np.minimum(rows // entry.stride, fh - 1)
        cc = np.minimum(cols // entry.stride, fw - 1)
        parts.append(T.l2_normalize(T.gather_cells(entry.tensor, rr, cc), epsilon))
    return T.concat(parts, axis=1), hypercolumn_segments(registry)


def gather_hypercolumn(
    registry: dict[str, RegistryEntry], pixel: tuple[int, int]
) -> Hypercolumn:
    """Hypercolumn record for a single pixel (batch of one underneath)."""
    batch, segments = gather_hypercolumn_batch(
        registry, np.asarray([pixel[0]]), np.asarray([pixel[1]])
    )
    return Hypercolumn(
        vector=batch.data[0].copy(),
        segment_offsets=segments,
        pixel=(int(pixel[0]), int(pixel[1])),
        tensor=batch,
    )


def describe_registry(registry: dict[str, RegistryEntry]) -> str:
    """JSON report of per-layer shapes and norms, for debugging."""
    info = {}
    for layer_id, entry in registry.items():
        info[layer_id] = {
            "shape": list(entry.tensor.data.shape),
            "stride": entry.stride,
            "l2_norm": float(np.linalg.norm(entry.tensor.data)),
        }
    return json.dumps(info, indent=2)
