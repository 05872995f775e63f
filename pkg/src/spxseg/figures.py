"""Matplotlib renders written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport
from .spc import ControlChart, GradientSnapshot


def save_loss_curves(losses_by_run: dict[str, list[float]], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, losses in losses_by_run.items():
        ax.plot(range(1, len(losses) + 1), losses, marker="o", markersize=3, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean sample loss")
    if len(losses_by_run) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_control_chart_figure(
    layer_id: str,
    history: list[tuple[GradientSnapshot, ControlChart]],
    path: str | Path,
) -> None:
    """Slice gradient sums per evaluation with the UCL as a red line."""
    rows = [(s, c) for s, c in history if s.layer_id == layer_id]
    if not rows:
        raise ValueError(f"no chart history for layer {layer_id!r}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for snap, _ in rows:
        ax.plot(np.arange(len(snap.g)), snap.g, alpha=0.6, label=f"epoch {snap.epoch}")
    ucl = rows[-1][1].ucl
    if np.isfinite(ucl):
        ax.axhline(ucl, color="red", linewidth=1.5, label="UCL")
    ax.set_xlabel("slice index")
    ax.set_ylabel("|gradient| sum")
    ax.set_title(layer_id)
    if len(rows) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_iu_bars(report: EvalReport, path: str | Path) -> None:
    iu = np.asarray(report.per_class_iu, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(iu)), np.nan_to_num(iu), color="steelblue")
    ax.axhline(report.mean_iu, color="red", linewidth=1.0, label=f"mean IU {report.mean_iu:.3f}")
    ax.set_xlabel("class")
    ax.set_ylabel("IU")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_superpixel_overlay(
    image: np.ndarray, labels: np.ndarray, path: str | Path
) -> None:
    """Image with region boundaries marked, for visual inspection."""
    rgb = np.clip(np.asarray(image), 0, 255).transpose(1, 2, 0) / 255.0
    boundary = np.zeros(labels.shape, dtype=bool)
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    overlay = rgb.copy()
    overlay[boundary] = (1.0, 1.0, 0.0)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(overlay)
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
