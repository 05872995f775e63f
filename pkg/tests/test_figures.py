import numpy as np

from spxseg.figures import (
    save_control_chart_figure,
    save_iu_bars,
    save_loss_curves,
    save_superpixel_overlay,
)
from spxseg.metrics import evaluate
from spxseg.spc import GradientSnapshot, evaluate_chart


def test_loss_curve_file(tmp_path):
    path = tmp_path / "loss.png"
    save_loss_curves({"a": [1.0, 0.5, 0.3], "b": [1.1, 0.9, 0.8]}, path)
    assert path.stat().st_size > 0


def test_control_chart_figure(tmp_path):
    history = []
    for epoch in (1, 2):
        snap = GradientSnapshot("head.fc6", np.abs(np.random.default_rng(epoch).normal(size=32)), epoch, epoch)
        history.append((snap, evaluate_chart(snap, 0.1)))
    path = tmp_path / "chart.png"
    save_control_chart_figure("head.fc6", history, path)
    assert path.stat().st_size > 0


def test_iu_bars(tmp_path):
    gt = np.random.default_rng(0).integers(0, 3, size=(16, 16))
    report = evaluate(gt, gt, 3)
    path = tmp_path / "iu.png"
    save_iu_bars(report, path)
    assert path.stat().st_size > 0


def test_superpixel_overlay(tmp_path):
    image = np.random.default_rng(1).uniform(0, 255, (3, 16, 16))
    labels = np.repeat(np.arange(4).reshape(2, 2), 8, axis=0).repeat(8, axis=1)[:16, :16]
    path = tmp_path / "overlay.png"
    save_superpixel_overlay(image, labels, path)
    assert path.stat().st_size > 0
