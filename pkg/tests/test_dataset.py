import numpy as np
import pytest

from spxseg.dataset import (
    Dataset,
    DatasetItem,
    export_png_dataset,
    load_label_png,
    load_png_dataset,
    make_shapes_dataset,
    save_label_png,
)


def test_shapes_dataset_basic():
    ds = make_shapes_dataset(5, size=(64, 64), n_classes=3, seed=0)
    assert len(ds) == 5
    assert ds.class_count == 3
    for item in ds.items:
        assert item.image.shape == (3, 64, 64)
        assert item.labels.shape == (64, 64)
        assert item.image.min() >= 0 and item.image.max() <= 255
        assert set(np.unique(item.labels)) <= {0, 1, 2}


def test_shapes_dataset_contains_all_classes():
    ds = make_shapes_dataset(4, n_classes=5, seed=1)
    seen = set()
    for item in ds.items:
        seen |= set(np.unique(item.labels).tolist())
    assert seen == {0, 1, 2, 3, 4}


def test_shapes_dataset_deterministic():
    a = make_shapes_dataset(3, seed=7)
    b = make_shapes_dataset(3, seed=7)
    for x, y in zip(a.items, b.items):
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.labels, y.labels)
    c = make_shapes_dataset(3, seed=8)
    assert not np.array_equal(a.items[0].labels, c.items[0].labels)


def test_shapes_class_count_bounds():
    with pytest.raises(ValueError):
        make_shapes_dataset(1, n_classes=1)
    with pytest.raises(ValueError):
        make_shapes_dataset(1, n_classes=6)


def test_label_colors_match_masks():
    # every labeled pixel should sit near its class color (modulo texture)
    from spxseg.dataset import _CLASS_COLORS

    ds = make_shapes_dataset(3, n_classes=3, seed=3)
    for item in ds.items:
        for cls in np.unique(item.labels):
            mask = item.labels == cls
            mean_color = item.image[:, mask].mean(axis=1)
            assert np.abs(mean_color - np.asarray(_CLASS_COLORS[cls])).max() < 20


def test_png_roundtrip(tmp_path):
    ds = make_shapes_dataset(3, size=(32, 32), n_classes=3, seed=5)
    export_png_dataset(ds, tmp_path)
    loaded = load_png_dataset(tmp_path, class_count=3)
    assert len(loaded) == 3
    for orig, back in zip(ds.items, loaded.items):
        assert np.array_equal(back.labels, orig.labels)  # labels exact
        assert np.abs(back.image - orig.image).max() <= 1.0  # 8-bit quantization


def test_label_png_16bit(tmp_path):
    labels = np.arange(300, dtype=np.int32).reshape(15, 20) * 2
    path = tmp_path / "wide.png"
    save_label_png(labels, path)
    assert np.array_equal(load_label_png(path), labels)


def test_missing_label_file_rejected(tmp_path):
    ds = make_shapes_dataset(2, size=(16, 16), seed=0)
    export_png_dataset(ds, tmp_path)
    (tmp_path / "labels" / "shapes_0001.png").unlink()
    with pytest.raises(FileNotFoundError, match="no label map"):
        load_png_dataset(tmp_path, class_count=3)


def test_validate_rejects_size_mismatch():
    item = DatasetItem(np.zeros((3, 8, 8)), np.zeros((4, 4), dtype=np.int32), "bad")
    ds = Dataset(items=[item], class_count=2)
    with pytest.raises(ValueError, match="differ in size"):
        ds.validate()


def test_validate_rejects_out_of_range_labels():
    item = DatasetItem(np.zeros((3, 4, 4)), np.full((4, 4), 7, dtype=np.int32), "bad")
    ds = Dataset(items=[item], class_count=3)
    with pytest.raises(ValueError, match="label values"):
        ds.validate()
    # the same value is fine when declared as the ignore label
    Dataset(items=[item], class_count=3, ignore_label=7).validate()


def test_resize_on_load(tmp_path):
    ds = make_shapes_dataset(1, size=(64, 64), seed=2)
    export_png_dataset(ds, tmp_path)
    loaded = load_png_dataset(tmp_path, class_count=3, resize_to=(32, 32))
    assert loaded.items[0].image.shape == (3, 32, 32)
    assert loaded.items[0].labels.shape == (32, 32)
    assert set(np.unique(loaded.items[0].labels)) <= {0, 1, 2}
