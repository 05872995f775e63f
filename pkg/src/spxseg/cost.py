"""Operation-count comparison of dense versus sampled inference."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .heads import HeadConfig, SegHead
from .superpixel import DEFAULT_MAX_ITERS

# distance evaluations per pixel per iteration: ~4 overlapping search
# windows, each over 3 color + 2 spatial dimensions
_SLIC_OPS_PER_PIXEL_ITER = 4 * 5


@dataclass
class CostReport:
    pixels: int
    budget: int
    sample_fraction: Fraction  # exact budget / pixel-count ratio
    head_macs_per_position: int
    dense_head_macs: int
    sampled_head_macs: int
    slic_ops: int
    sampled_total_ops: int

    @property
    def head_ratio(self) -> Fraction:
        return Fraction(self.sampled_head_macs, self.dense_head_macs)

    @property
    def total_ratio(self) -> float:
        return self.sampled_total_ops / self.dense_head_macs

    def fraction_percent(self) -> str:
        return f"{float(self.sample_fraction) * 100:.3f}%"

    def to_json(self) -> str:
        return json.dumps(
            {
                "pixels": self.pixels,
                "budget": self.budget,
                "sample_fraction": f"{self.sample_fraction.numerator}/{self.sample_fraction.denominator}",
                "sample_fraction_percent": self.fraction_percent(),
                "head_macs_per_position": self.head_macs_per_position,
                "dense_head_macs": self.dense_head_macs,
                "sampled_head_macs": self.sampled_head_macs,
                "slic_ops_estimate": self.slic_ops,
                "sampled_total_ops": self.sampled_total_ops,
                "sampled_vs_dense_percent": f"{self.total_ratio * 100:.4f}%",
            },
            indent=2,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def head_macs_per_position(head: SegHead | HeadConfig) -> int:
    """Multiply-accumulates of one head application (1x1 convs only)."""
    if isinstance(head, HeadConfig):
        # width arithmetic; no need to allocate the parameters
        cfg = head
        if cfg.variant == "fc":
            w6, w7 = cfg.scaled_fc_widths()
            return cfg.input_dim * w6 + w6 * w7 + w7 * cfg.n_classes
        macs = 0
        din = cfg.input_dim
        for b, (wa, wb, wc) in enumerate(cfg.scaled_resblock_widths(), start=1):
            macs += din * wa + wa * wb + wb * wc
            if b == 1:
                macs += din * wc  # projection shortcut
            din = wc
        return macs + din * cfg.n_classes
    return sum(
        int(np.prod(head.layer(name).weight.data.shape)) for name in head.layer_order
    )


def cost_report(
    image_hw: tuple[int, int],
    budget: int,
    head: SegHead | HeadConfig,
    slic_iters: int = DEFAULT_MAX_ITERS,
) -> CostReport:
    """Compare the head applied at every pixel against the sampled path.

    Dense inference evaluates the head once per pixel of a full
    resolution hypercolumn map; sampled inference evaluates it once per
    budgeted sample plus the superpixel clustering cost estimate.
    """
    h, w = image_hw
    pixels = h * w
    if budget < 1 or budget > pixels:
        raise ValueError("budget must be in [1, H*W]")
    macs = head_macs_per_position(head)
    slic_ops = slic_iters * pixels * _SLIC_OPS_PER_PIXEL_ITER
    return CostReport(
        pixels=pixels,
        budget=budget,
        sample_fraction=Fraction(budget, pixels),
        head_macs_per_position=macs,
        dense_head_macs=macs * pixels,
        sampled_head_macs=macs * budget,
        slic_ops=slic_ops,
        sampled_total_ops=macs * budget + slic_ops,
    )
