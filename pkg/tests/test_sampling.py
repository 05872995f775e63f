import numpy as np
import pytest

from spxseg.sampling import draw_samples, save_samples_csv, scatter_predictions
from spxseg.superpixel import SuperpixelMap, grid_partition, slic


def _checker_map(h=8, w=8, n=4):
    return grid_partition(h, w, n)


def test_budget_below_regions_one_pixel_each():
    spmap = grid_partition(16, 16, 16)
    labels = np.zeros((16, 16), dtype=np.int32)
    ss = draw_samples(spmap, labels, 10, seed=0)
    assert len(ss.samples) == 10
    regions = [s.superpixel_id for s in ss.samples]
    assert len(set(regions)) == 10  # all distinct


def test_budget_above_regions_adds_second_distinct_pixels():
    spmap = grid_partition(8, 8, 4)
    labels = np.zeros((8, 8), dtype=np.int32)
    ss = draw_samples(spmap, labels, 7, seed=1)
    assert len(ss.samples) == 7
    counts = {}
    for s in ss.samples:
        counts[s.superpixel_id] = counts.get(s.superpixel_id, 0) + 1
    assert set(counts) == {0, 1, 2, 3}  # every region appears
    assert sorted(counts.values()) == [1, 2, 2, 2]
    # second pixels are distinct from the first ones
    seen = {}
    for s in ss.samples:
        assert s.pixel not in seen.get(s.superpixel_id, set())
        seen.setdefault(s.superpixel_id, set()).add(s.pixel)


def test_budget_over_double_regions_rejected():
    spmap = grid_partition(8, 8, 4)
    with pytest.raises(ValueError, match="budget"):
        draw_samples(spmap, np.zeros((8, 8), dtype=np.int32), 9, seed=0)


def test_single_pixel_image():
    spmap = SuperpixelMap(np.zeros((1, 1), dtype=np.int32), 1, (1, 1))
    ss = draw_samples(spmap, np.asarray([[2]], dtype=np.int32), 1, seed=0)
    assert ss.samples[0].pixel == (0, 0)
    assert ss.samples[0].label == 2


def test_samples_lie_inside_their_superpixel():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, (3, 32, 32))
    spmap = slic(img, 24)
    labels = rng.integers(0, 3, size=(32, 32)).astype(np.int32)
    for seed in range(5):
        budget = int(rng.integers(1, 2 * spmap.n_regions))
        ss = draw_samples(spmap, labels, budget, seed=seed)
        assert len(ss.samples) == budget
        for s in ss.samples:
            assert spmap.labels[s.pixel] == s.superpixel_id
            assert labels[s.pixel] == s.label
        per_region = {}
        for s in ss.samples:
            per_region[s.superpixel_id] = per_region.get(s.superpixel_id, 0) + 1
        assert max(per_region.values()) <= 2


def test_determinism_given_seed():
    spmap = grid_partition(16, 16, 9)
    labels = np.arange(256).reshape(16, 16).astype(np.int32) % 5
    a = draw_samples(spmap, labels, 12, seed=42)
    b = draw_samples(spmap, labels, 12, seed=42)
    assert a.samples == b.samples
    c = draw_samples(spmap, labels, 12, seed=43)
    assert a.samples != c.samples


def test_label_read_at_sampled_pixel():
    spmap = grid_partition(4, 4, 2)
    labels = np.zeros((4, 4), dtype=np.int32)
    labels[1, 1] = 7
    found = False
    for seed in range(40):
        ss = draw_samples(spmap, labels, 2, seed=seed)
        for s in ss.samples:
            if s.pixel == (1, 1):
                assert s.label == 7
                found = True
    assert found


def test_ignore_label_redraw_and_skip():
    # region 0 fully ignore-labeled: budget must be filled from elsewhere
    spmap = grid_partition(4, 8, 2)
    labels = np.zeros((4, 8), dtype=np.int32)
    labels[:, :4] = 9  # region 0 is all ignore
    ss = draw_samples(spmap, labels, 2, seed=0, ignore_label=9)
    assert len(ss.samples) == 2
    assert all(s.superpixel_id == 1 for s in ss.samples)
    assert all(s.label == 0 for s in ss.samples)


def test_ignore_label_everywhere_rejected():
    spmap = grid_partition(4, 4, 4)
    labels = np.full((4, 4), 9, dtype=np.int32)
    with pytest.raises(ValueError, match="budget"):
        draw_samples(spmap, labels, 2, seed=0, ignore_label=9)


def test_scatter_basic_two_regions():
    spmap = grid_partition(4, 8, 2)
    dense = scatter_predictions(spmap, [(0, 1, 0.9), (1, 2, 0.8)])
    assert (dense[:, :4] == 1).all()
    assert (dense[:, 4:] == 2).all()


def test_scatter_duplicates_agreeing():
    spmap = grid_partition(4, 4, 1)
    dense = scatter_predictions(spmap, [(0, 2, 0.5), (0, 2, 0.4)])
    assert (dense == 2).all()


def test_scatter_duplicates_disagreeing_higher_probability_wins():
    spmap = grid_partition(4, 4, 1)
    dense = scatter_predictions(spmap, [(0, 1, 0.7), (0, 2, 0.6)])
    assert (dense == 1).all()
    dense = scatter_predictions(spmap, [(0, 1, 0.6), (0, 2, 0.7)])
    assert (dense == 2).all()


def test_scatter_probability_tie_lower_class_wins():
    spmap = grid_partition(4, 4, 1)
    dense = scatter_predictions(spmap, [(0, 3, 0.5), (0, 1, 0.5)])
    assert (dense == 1).all()


def test_scatter_missing_region_rejected_with_ids():
    spmap = grid_partition(4, 8, 2)
    with pytest.raises(ValueError, match=r"\[1\]"):
        scatter_predictions(spmap, [(0, 1, 0.9)])


def test_scatter_total_assignment():
    rng = np.random.default_rng(11)
    spmap = slic(rng.uniform(0, 255, (3, 24, 24)), 12)
    per_sample = [(r, int(rng.integers(0, 3)), float(rng.random())) for r in range(spmap.n_regions)]
    dense = scatter_predictions(spmap, per_sample)
    assert dense.shape == spmap.image_shape
    lookup = {r: c for r, c, _ in per_sample}
    for r in range(spmap.n_regions):
        assert (dense[spmap.labels == r] == lookup[r]).all()


def test_random_pixel_baseline():
    from spxseg.sampling import draw_random_pixels

    spmap = grid_partition(16, 16, 4)
    labels = np.arange(256).reshape(16, 16).astype(np.int32) % 3
    ss = draw_random_pixels(spmap, labels, 20, seed=5)
    assert len(ss.samples) == 20
    pixels = {s.pixel for s in ss.samples}
    assert len(pixels) == 20  # drawn without replacement
    for s in ss.samples:
        assert spmap.labels[s.pixel] == s.superpixel_id
        assert labels[s.pixel] == s.label
    again = draw_random_pixels(spmap, labels, 20, seed=5)
    assert again.samples == ss.samples


def test_random_pixel_baseline_skips_ignore():
    from spxseg.sampling import draw_random_pixels

    spmap = grid_partition(4, 4, 2)
    labels = np.zeros((4, 4), dtype=np.int32)
    labels[:2] = 9
    ss = draw_random_pixels(spmap, labels, 8, seed=0, ignore_label=9)
    assert all(s.label == 0 for s in ss.samples)
    with pytest.raises(ValueError, match="usable"):
        draw_random_pixels(spmap, labels, 9, seed=0, ignore_label=9)


def test_paper_scale_budget_750_one_pixel_per_region():
    # ~800 regions at 448x448: the 750-sample draw touches 750 distinct regions
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, (3, 448, 448))
    spmap = slic(img, 800, max_iters=3)
    assert spmap.n_regions >= 750
    labels = np.zeros((448, 448), dtype=np.int32)
    ss = draw_samples(spmap, labels, 750, seed=1)
    assert len(ss.samples) == 750
    assert len({s.superpixel_id for s in ss.samples}) == 750


def test_samples_csv(tmp_path):
    spmap = grid_partition(4, 4, 2)
    labels = np.ones((4, 4), dtype=np.int32)
    ss = draw_samples(spmap, labels, 3, seed=0)
    path = tmp_path / "samples.csv"
    save_samples_csv(ss, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "row,col,superpixel_id,label"
    assert len(lines) == 4
