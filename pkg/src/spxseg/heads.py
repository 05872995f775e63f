"""Post-sampling classification heads operating on hypercolumn vectors.

Two variants: a three-block residual head (projection shortcut on the
first block, identity shortcuts after) and a two-layer fully-convolutional
head. Every layer is a 1x1 convolution over per-pixel features, which on
a batch of sampled hypercolumns is exactly a dense matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import DenseLayer, Tensor

PAPER_RESBLOCK_WIDTHS = ((1024, 1024, 2048), (512, 512, 2048), (1024, 1024, 2048))
PAPER_FC_WIDTHS = (4096, 4096)
DESK_WIDTH_FACTOR = 0.125


@dataclass
class HeadConfig:
    variant: str  # "resblock" | "fc"
    n_classes: int
    input_dim: int
    width_factor: float = DESK_WIDTH_FACTOR
    fc_widths: Optional[tuple[int, int]] = None
    resblock_widths: Optional[tuple[tuple[int, int, int], ...]] = None

    def __post_init__(self):
        if self.variant not in ("resblock", "fc"):
            raise ValueError(f"unknown head variant {self.variant!r}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")

    def scaled_fc_widths(self) -> tuple[int, int]:
        if self.fc_widths is not None:
            return self.fc_widths
        return tuple(max(1, round(w * self.width_factor)) for w in PAPER_FC_WIDTHS)

    def scaled_resblock_widths(self) -> tuple[tuple[int, int, int], ...]:
        if self.resblock_widths is not None:
            widths = self.resblock_widths
        else:
            widths = tuple(
                tuple(max(1, round(w * self.width_factor)) for w in block)
                for block in PAPER_RESBLOCK_WIDTHS
            )
        if len(widths) != 3:
            raise ValueError("the residual head has exactly three blocks")
        if len({block[-1] for block in widths}) != 1:
            raise ValueError("identity shortcuts need equal block output widths")
        return widths


class SegHead:
    """Classifier over hypercolumn features; exposes per-layer outputs.

    ``forward`` returns the logits and a registry of each layer's
    pre-activation output tensor. The registry is what the gradient
    monitor reads after a backward pass; ``layer_order`` lists the same
    ids from the input side toward the loss.
    """

    def __init__(self, config: HeadConfig, seed: int = 0):
        self.config = config
        self.layer_order: list[str] = []
        self._layers: dict[str, DenseLayer] = {}
        din = config.input_dim
        idx = 0

        def add(name: str, dout: int) -> None:
            nonlocal din, idx
            rng = np.random.default_rng([seed, 101, idx])
            self._layers[name] = T.make_dense_layer(din, dout, name, rng)
            self.layer_order.append(name)
            din = dout
            idx += 1

        if config.variant == "fc":
            w6, w7 = config.scaled_fc_widths()
            add("head.fc6", w6)
            add("head.fc7", w7)
        else:
            widths = config.scaled_resblock_widths()
            out_w = widths[0][-1]
            for b, (wa, wb, wc) in enumerate(widths, start=1):
                block_in = din
                add(f"head.block{b}.conv_a", wa)
                add(f"head.block{b}.conv_b", wb)
                add(f"head.block{b}.conv_c", wc)
                if b == 1:
                    # Block 1 projects its input onto the shortcut so the
                    # elementwise sum is dimensionally valid.
                    rng = np.random.default_rng([seed, 101, idx])
                    self._layers["head.block1.proj"] = T.make_dense_layer(
                        block_in, out_w, "head.block1.proj", rng
                    )
                    self.layer_order.append("head.block1.proj")
                    idx += 1
                din = wc
        add("head.classifier", config.n_classes)

    def layer(self, name: str) -> DenseLayer:
        return self._layers[name]

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = []
        for name in self.layer_order:
            params.extend(self._layers[name].parameters())
        return params

    def parameter_count(self) -> int:
        return sum(int(np.prod(t.data.shape)) for _, t in self.parameters())

    def forward(self, features: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        """Logits for an (n, input_dim) feature batch, plus layer outputs."""
        if features.data.ndim != 2 or features.data.shape[1] != self.config.input_dim:
            raise ValueError(
                f"head expects (n, {self.config.input_dim}) features, got {features.data.shape}"
            )
        registry: dict[str, Tensor] = {}

        def run(name: str, x: Tensor) -> Tensor:
            out = T.dense(x, self._layers[name])
            registry[name] = out
            return out

        x = features
        if self.config.variant == "fc":
            x = T.relu(run("head.fc6", x))
            x = T.relu(run("head.fc7", x))
        else:
            for b in range(1, 4):
                branch = T.relu(run(f"head.block{b}.conv_a", x))
                branch = T.relu(run(f"head.block{b}.conv_b", branch))
                branch = run(f"head.block{b}.conv_c", branch)
                shortcut = run("head.block1.proj", x) if b == 1 else x
                x = T.relu(T.eltwise_sum(branch, shortcut))
        logits = run("head.classifier", x)
        return logits, registry
