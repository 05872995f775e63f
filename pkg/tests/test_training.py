import numpy as np
import pytest

from spxseg import spc
from spxseg.dataset import make_shapes_dataset
from spxseg.heads import HeadConfig, SegHead
from spxseg.network import FeatureNet, NetConfig
from spxseg.training import (
    SamplerConfig,
    TrainConfig,
    Trainer,
    derive_seed,
    run_training,
    sgd_step,
)

TINY_NET = NetConfig(stage_channels=(4, 4, 4, 8, 8), convs_per_stage=(1, 1, 1, 1, 1), branch_channels=8)


def tiny_setup(n_images=3, head_variant="fc", seed=0, **tc_kwargs):
    dataset = make_shapes_dataset(n_images, size=(64, 64), n_classes=3, seed=seed)
    net = FeatureNet(TINY_NET, (64, 64), seed=seed)
    head = SegHead(
        HeadConfig(head_variant, n_classes=3, input_dim=TINY_NET.hypercolumn_length(), width_factor=1 / 64),
        seed=seed,
    )
    tc = TrainConfig(total_epochs=tc_kwargs.pop("total_epochs", 2), seed=seed, **tc_kwargs)
    sc = SamplerConfig(budget=12, superpixels=16)
    return dataset, net, head, tc, sc


def test_sgd_step_zero_grad_zero_decay_keeps_params():
    p = np.array([1.0, -2.0])
    v = np.zeros(2)
    sgd_step(p, np.zeros(2), v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert np.array_equal(p, [1.0, -2.0])


def test_sgd_step_plain_descent():
    p = np.array([1.0])
    v = np.zeros(1)
    sgd_step(p, np.array([1.0]), v, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert np.allclose(p, [0.9])


def test_sgd_step_momentum_and_decay_formula():
    p = np.array([2.0])
    g = np.array([0.5])
    v = np.array([0.25])
    momentum, wd, lr = 0.9, 0.01, 0.1
    expected_v = momentum * 0.25 + 0.5 + wd * 2.0
    expected_p = 2.0 - lr * expected_v
    sgd_step(p, g, v, lr, momentum, wd)
    assert np.allclose(v, [expected_v])
    assert np.allclose(p, [expected_p])


def test_sgd_step_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        sgd_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, 0.9, 0.0)


def test_policy_multiplier_scales_first_step_exactly():
    # two identical dense layers, one at 10x: its first update is 10x bigger
    from spxseg import tensor as T

    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 3))
    a = T.DenseLayer(T.Tensor(w.copy()), T.Tensor(np.zeros(3)), "layer_a")
    b = T.DenseLayer(T.Tensor(w.copy()), T.Tensor(np.zeros(3)), "layer_b")
    grad = rng.normal(size=(4, 3))
    a.weight.grad = grad.copy()
    b.weight.grad = grad.copy()
    lr, mult = 0.01, 10.0
    va, vb = np.zeros_like(w), np.zeros_like(w)
    sgd_step(a.weight.data, a.weight.grad, va, lr, 0.9, 0.0)
    sgd_step(b.weight.data, b.weight.grad, vb, lr * mult, 0.9, 0.0)
    delta_a = a.weight.data - w
    delta_b = b.weight.data - w
    assert np.allclose(delta_b, mult * delta_a)


def test_schedule_drops_exactly_ten_fold():
    tc = TrainConfig(lr_drop_epoch=16, total_epochs=20)
    assert tc.schedule_factor(16) == 1.0
    assert tc.schedule_factor(17) == 0.1
    assert tc.schedule_factor(16) / tc.schedule_factor(17) == 10.0


def test_trainer_effective_rates_follow_policy_and_schedule():
    dataset, net, head, tc, sc = tiny_setup(total_epochs=4, lr_drop_epoch=2, base_lr=0.01)
    policy = spc.derive_policy(head.layer_order, {head.layer_order[-1]}, 10.0, 1.0)
    trainer = Trainer(net, head, tc, sc, 3, policy)
    before = trainer.effective_rates(1)
    after = trainer.effective_rates(3)
    assert before["head.fc6"] == 0.1
    assert before["head.classifier"] == 0.01
    assert before["conv1_1"] == 0.01
    for k in before:
        assert after[k] == pytest.approx(before[k] * 0.1)


def test_training_is_deterministic_bit_exact():
    results = []
    for _ in range(2):
        dataset, net, head, tc, sc = tiny_setup(total_epochs=2)
        out = run_training(dataset, net, head, tc, sc, monitor_epochs=False)
        results.append((out.losses, {n: t.data.copy() for n, t in out.trainer.parameters()}))
    assert results[0][0] == results[1][0]
    for name in results[0][1]:
        assert np.array_equal(results[0][1][name], results[1][1][name])


def test_snapshots_replay_bit_identically():
    runs = []
    for _ in range(2):
        dataset, net, head, tc, sc = tiny_setup(total_epochs=3)
        tc.monitor_start_epoch = 1
        out = run_training(dataset, net, head, tc, sc, monitor_epochs=True)
        runs.append(out.snapshots)
    assert len(runs[0]) == len(runs[1]) > 0
    for a, b in zip(runs[0], runs[1]):
        assert a.layer_id == b.layer_id and a.epoch == b.epoch
        assert np.array_equal(a.g, b.g)


def test_different_seed_changes_trajectory():
    dataset, net, head, tc, sc = tiny_setup(total_epochs=1, seed=0)
    out0 = run_training(dataset, net, head, tc, sc, monitor_epochs=False)
    dataset, net, head, tc, sc = tiny_setup(total_epochs=1, seed=1)
    out1 = run_training(dataset, net, head, tc, sc, monitor_epochs=False)
    assert out0.losses != out1.losses


def test_single_region_single_class_loss_decreases():
    # uniform image: one superpixel, one class; the head should fit it fast
    from spxseg.dataset import Dataset, DatasetItem

    img = np.full((3, 64, 64), 120.0)
    item = DatasetItem(image=img, labels=np.zeros((64, 64), dtype=np.int32), name="flat")
    dataset = Dataset(items=[item], class_count=2)
    net = FeatureNet(TINY_NET, (64, 64), seed=0)
    head = SegHead(HeadConfig("fc", 2, TINY_NET.hypercolumn_length(), width_factor=1 / 64), seed=0)
    tc = TrainConfig(total_epochs=10, base_lr=0.05, seed=0)
    sc = SamplerConfig(budget=1, superpixels=1)
    trainer = Trainer(net, head, tc, sc, 2)
    losses = [trainer.train_epoch(dataset, e).mean_loss for e in range(1, 11)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_batch_images_accumulates_gradients_into_one_step():
    # momentum 0, decay 0: the single batched update must equal
    # -lr * (sum of per-image gradients at the initial parameters)
    from spxseg import tensor as T
    from spxseg.sampling import draw_samples
    from spxseg.training import derive_seed

    dataset, net, head, tc, sc = tiny_setup(n_images=2, total_epochs=1,
                                            momentum=0.0, weight_decay=0.0, base_lr=0.01)
    tc.batch_images = 2
    trainer = Trainer(net, head, tc, sc, 3)
    probe = head.layer("head.classifier").weight
    before = probe.data.copy()

    expected_grad = np.zeros_like(before)
    for idx, item in enumerate(dataset.items):
        spmap = trainer.partition(item)
        samples = draw_samples(spmap, item.labels, sc.budget,
                               derive_seed(tc.seed, 1, idx))
        trainer._zero_grads()
        logits, _ = trainer._forward_item(item, samples, None)
        T.cross_entropy(logits, samples.labels()).backward()
        expected_grad += probe.grad
    trainer._zero_grads()

    trainer.train_epoch(dataset, 1)
    assert np.allclose(probe.data, before - 0.01 * expected_grad)


def test_monitored_epoch_produces_probe_snapshots():
    dataset, net, head, tc, sc = tiny_setup(total_epochs=2)
    trainer = Trainer(net, head, tc, sc, 3, spc.all_low_policy(head.layer_order))
    stats = trainer.train_epoch(dataset, 1, monitor=True)
    assert {s.layer_id for s in stats.snapshots} == set(head.layer_order)
    for s in stats.snapshots:
        assert (s.g >= 0).all()
    # probe gradients never leak into the optimizer state
    for _, t in trainer.parameters():
        assert t.grad is None


def test_probe_is_fixed_across_epochs_before_updates():
    # identical parameters -> identical probe regardless of epoch number
    dataset, net, head, tc, sc = tiny_setup(total_epochs=2)
    trainer = Trainer(net, head, tc, sc, 3)
    a = trainer.probe_snapshots(dataset, epoch=1)
    b = trainer.probe_snapshots(dataset, epoch=5)
    for x, y in zip(a, b):
        assert x.layer_id == y.layer_id
        assert np.array_equal(x.g, y.g)


def test_monitor_start_default_is_sixty_percent():
    assert TrainConfig(total_epochs=20).resolved_monitor_start() == 12
    assert TrainConfig(total_epochs=10).resolved_monitor_start() == 6
    assert TrainConfig(total_epochs=30, monitor_start_epoch=3).resolved_monitor_start() == 3


def test_paper_scale_preset_hyperparameters():
    tc = TrainConfig.paper_scale()
    assert tc.base_lr == 1e-6
    assert tc.momentum == 0.9
    assert tc.weight_decay == 5e-4
    assert tc.lr_drop_epoch == 16


def test_run_training_writes_log(tmp_path):
    dataset, net, head, tc, sc = tiny_setup(total_epochs=2)
    log = tmp_path / "log.jsonl"
    run_training(dataset, net, head, tc, sc, monitor_epochs=False, log_path=log)
    import json

    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(lines) == 2
    assert lines[0]["epoch"] == 1
    assert "loss" in lines[0] and "effective_lr" in lines[0]
    assert lines[0]["effective_lr"]["conv1_1"] == tc.base_lr


def test_budget_sampled_exactly_per_image():
    dataset, net, head, tc, sc = tiny_setup(n_images=2, total_epochs=1)
    trainer = Trainer(net, head, tc, sc, 3)
    stats = trainer.train_epoch(dataset, 1)
    # every image contributes exactly `budget` samples to the confusion
    assert stats.sample_confusion.sum() == sc.budget * len(dataset.items)


def test_paper_budget_750_gathers_per_image():
    # full-size item with a skeleton-width backbone: one epoch performs
    # exactly 750 hypercolumn gathers
    from spxseg.dataset import Dataset, DatasetItem

    rng = np.random.default_rng(4)
    img = rng.uniform(0, 255, (3, 448, 448))
    labels = rng.integers(0, 2, size=(448, 448)).astype(np.int32)
    dataset = Dataset(items=[DatasetItem(img, labels, "big")], class_count=2)
    cfg = NetConfig(stage_channels=(2, 2, 2, 2, 2), convs_per_stage=(1, 1, 1, 1, 1), branch_channels=2)
    net = FeatureNet(cfg, (448, 448), seed=0)
    head = SegHead(HeadConfig("fc", 2, cfg.hypercolumn_length(), fc_widths=(4, 4)), seed=0)
    tc = TrainConfig(total_epochs=1, seed=0)
    sc = SamplerConfig(budget=750, superpixels=800)
    trainer = Trainer(net, head, tc, sc, 2)
    stats = trainer.train_epoch(dataset, 1)
    assert stats.sample_confusion.sum() == 750


def test_random_sampling_mode_trains():
    dataset, net, head, tc, sc = tiny_setup(total_epochs=1)
    sc = SamplerConfig(budget=12, superpixels=16, pixel_sampling="random")
    trainer = Trainer(net, head, tc, sc, 3)
    stats = trainer.train_epoch(dataset, 1)
    assert np.isfinite(stats.mean_loss)
    assert stats.sample_confusion.sum() == 12 * len(dataset.items)


def test_grid_partitioner_mode():
    dataset, net, head, tc, sc = tiny_setup(total_epochs=1)
    sc = SamplerConfig(budget=12, superpixels=16, partitioner="grid")
    trainer = Trainer(net, head, tc, sc, 3)
    spmap = trainer.partition(dataset.items[0])
    assert spmap.n_regions == 16
    sizes = set(np.bincount(spmap.labels.ravel()).tolist())
    assert sizes == {256}  # exact 16x16 grid cells


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(base_lr=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(budget=0)
    with pytest.raises(ValueError):
        SamplerConfig(partitioner="voronoi")
