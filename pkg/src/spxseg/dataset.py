"""Dataset ingestion: PNG image/label folders and the synthetic benchmark.

Images are 8-bit RGB PNGs, label maps 8- or 16-bit grayscale PNGs whose
pixel values are class indices. The synthetic generator draws colored
geometric shapes over a textured background with exact label maps, which
gives a ground-truth-perfect desk-scale benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass
class DatasetItem:
    image: np.ndarray  # (3, H, W) float64 in [0, 255]
    labels: np.ndarray  # (H, W) int32 class indices
    name: str


@dataclass
class Dataset:
    items: list[DatasetItem]
    class_count: int
    ignore_label: int | None = None
    resize_to: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self.items)

    def validate(self) -> None:
        for item in self.items:
            if item.image.shape[1:] != item.labels.shape:
                raise ValueError(
                    f"{item.name}: image {item.image.shape[1:]} and label map "
                    f"{item.labels.shape} differ in size"
                )
            bad = (item.labels < 0) | (item.labels >= self.class_count)
            if self.ignore_label is not None:
                bad &= item.labels != self.ignore_label
            if bad.any():
                raise ValueError(f"{item.name}: label values outside [0, {self.class_count})")


def load_image_png(path: str | Path, resize_to: tuple[int, int] | None = None) -> np.ndarray:
    img = Image.open(Path(path)).convert("RGB")
    if resize_to is not None:
        img = img.resize((resize_to[1], resize_to[0]), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1)


def load_label_png(path: str | Path, resize_to: tuple[int, int] | None = None) -> np.ndarray:
    img = Image.open(Path(path))
    if img.mode not in ("L", "I", "I;16", "P"):
        raise ValueError(f"{path}: label maps must be grayscale PNGs, got mode {img.mode}")
    if img.mode == "P":
        img = img.convert("L")
    if resize_to is not None:
        img = img.resize((resize_to[1], resize_to[0]), Image.NEAREST)
    return np.asarray(img, dtype=np.int32)


def save_image_png(image: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.asarray(image), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(Path(path))


def save_label_png(labels: np.ndarray, path: str | Path) -> None:
    labels = np.asarray(labels)
    if labels.max(initial=0) > 65535:
        raise ValueError("label values exceed 16-bit range")
    if labels.max(initial=0) > 255:
        Image.fromarray(labels.astype(np.uint16)).save(Path(path))
    else:
        Image.fromarray(labels.astype(np.uint8)).save(Path(path))


def load_png_dataset(
    root: str | Path,
    class_count: int,
    ignore_label: int | None = None,
    resize_to: tuple[int, int] | None = None,
) -> Dataset:
    """Load paired PNGs from <root>/images and <root>/labels by stem."""
    root = Path(root)
    image_dir, label_dir = root / "images", root / "labels"
    if not image_dir.is_dir() or not label_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain images/ and labels/ subdirectories")
    items = []
    for img_path in sorted(image_dir.glob("*.png")):
        lbl_path = label_dir / img_path.name
        if not lbl_path.exists():
            raise FileNotFoundError(f"no label map for {img_path.name}")
        items.append(
            DatasetItem(
                image=load_image_png(img_path, resize_to),
                labels=load_label_png(lbl_path, resize_to),
                name=img_path.stem,
            )
        )
    if not items:
        raise ValueError(f"no PNG images found under {image_dir}")
    ds = Dataset(items=items, class_count=class_count, ignore_label=ignore_label, resize_to=resize_to)
    ds.validate()
    return ds


def export_png_dataset(dataset: Dataset, root: str | Path) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for item in dataset.items:
        save_image_png(item.image, root / "images" / f"{item.name}.png")
        save_label_png(item.labels, root / "labels" / f"{item.name}.png")


# ---------------------------------------------------------------------------
# synthetic shapes benchmark

# class index -> base RGB color; class 0 is the textured background.
# Colors differ in overall brightness as well as hue so that even
# near-random features keep the classes apart.
_CLASS_COLORS = (
    (70.0, 90.0, 120.0),   # background, mid gray-blue
    (225.0, 60.0, 45.0),   # circles, bright red
    (35.0, 150.0, 55.0),   # rectangles, dark green
    (235.0, 215.0, 70.0),  # triangles, bright yellow
    (110.0, 40.0, 150.0),  # rings, dark purple
)
MAX_SYNTHETIC_CLASSES = len(_CLASS_COLORS)


def _paint_circle(mask: np.ndarray, rng: np.random.Generator) -> None:
    h, w = mask.shape
    r = rng.integers(h // 6, h // 3)
    cy = rng.integers(r, h - r)
    cx = rng.integers(r, w - r)
    yy, xx = np.ogrid[:h, :w]
    mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _paint_rectangle(mask: np.ndarray, rng: np.random.Generator) -> None:
    h, w = mask.shape
    rh = rng.integers(h // 5, h // 2)
    rw = rng.integers(w // 5, w // 2)
    y0 = rng.integers(0, h - rh)
    x0 = rng.integers(0, w - rw)
    mask[y0 : y0 + rh, x0 : x0 + rw] = True


def _paint_triangle(mask: np.ndarray, rng: np.random.Generator) -> None:
    h, w = mask.shape
    size = rng.integers(h // 3, 2 * h // 3)
    y0 = rng.integers(0, h - size)
    x0 = rng.integers(0, w - size)
    yy, xx = np.ogrid[:h, :w]
    inside = (yy >= y0) & (yy < y0 + size) & (xx >= x0) & (xx - x0 <= yy - y0)
    mask |= inside


def _paint_ring(mask: np.ndarray, rng: np.random.Generator) -> None:
    h, w = mask.shape
    r = rng.integers(h // 5, h // 3)
    cy = rng.integers(r, h - r)
    cx = rng.integers(r, w - r)
    yy, xx = np.ogrid[:h, :w]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    mask |= (d2 <= r * r) & (d2 >= (r // 2) ** 2)


_PAINTERS = (_paint_circle, _paint_rectangle, _paint_triangle, _paint_ring)


def make_shapes_dataset(
    n_images: int,
    size: tuple[int, int] = (64, 64),
    n_classes: int = 3,
    seed: int = 0,
    noise: float = 14.0,
) -> Dataset:
    """Colored shapes on a textured background with exact label maps.

    Each image contains one shape per non-background class. The texture
    is spatially smoothed noise (neighboring pixels stay similar, as in
    natural textures); colors stay well separated so the benchmark is
    learnable at desk scale.
    """
    if not 2 <= n_classes <= MAX_SYNTHETIC_CLASSES:
        raise ValueError(f"n_classes must be in [2, {MAX_SYNTHETIC_CLASSES}]")
    h, w = size
    items = []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        labels = np.zeros((h, w), dtype=np.int32)
        for cls in range(1, n_classes):
            mask = np.zeros((h, w), dtype=bool)
            _PAINTERS[cls - 1](mask, rng)
            labels[mask] = cls  # later shapes overdraw earlier ones
        image = np.empty((3, h, w))
        for c in range(3):
            base = np.asarray(_CLASS_COLORS)[labels, c]
            texture = ndimage.uniform_filter(rng.uniform(-noise, noise, size=(h, w)), size=5)
            image[c] = base + 3.0 * texture  # the filter shrinks the amplitude ~3x
        items.append(DatasetItem(image=np.clip(image, 0, 255), labels=labels, name=f"shapes_{i:04d}"))
    return Dataset(items=items, class_count=n_classes)
