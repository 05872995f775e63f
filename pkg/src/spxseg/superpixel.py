"""SLIC superpixel over-segmentation with enforced 4-connectivity.

The clustering runs in joint color+position space on the image values
as given (no color-space conversion), with the usual compactness knob
trading color fidelity against spatial regularity. Everything is a pure
function of the inputs: seeds come from a fixed grid, ties resolve to
first index, and no RNG is involved, so repeated calls are bit-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .tensor import Tensor

DEFAULT_COMPACTNESS = 10.0
DEFAULT_MAX_ITERS = 10


@dataclass
class SuperpixelMap:
    """Total partition of an image into connected regions 0..n_regions-1."""

    labels: np.ndarray  # (H, W) int32
    n_regions: int
    image_shape: tuple[int, int]

    def validate(self) -> None:
        h, w = self.image_shape
        if self.labels.shape != (h, w):
            raise ValueError("label map shape does not match image_shape")
        if self.labels.min() < 0 or self.labels.max() >= self.n_regions:
            raise ValueError("region ids outside [0, n_regions)")
        used = np.bincount(self.labels.ravel(), minlength=self.n_regions)
        if (used == 0).any():
            raise ValueError("some region ids are unused")


def _as_image_array(image) -> np.ndarray:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected (C, H, W) image with 1 or 3 channels, got shape {arr.shape}")
    return arr.astype(np.float64)


def _grid_dims(h: int, w: int, k: int) -> tuple[int, int]:
    """Pick a seed grid (ny, nx) whose count stays close to k.

    Prefers counts within 15% of k (leaving slack for merges) and, among
    those, the squarest cells; falls back to the closest achievable count.
    """
    best_score = None
    best = (1, 1)
    for ny in range(1, min(h, k) + 1):
        for nx in {max(1, k // ny), k // ny + 1, max(1, round(k / ny))}:
            if nx > w:
                continue
            count = ny * nx
            err = abs(count - k)
            in_tol = 0 if err <= 0.15 * k else 1
            step_y, step_x = h / ny, w / nx
            score = (in_tol, abs(step_y - step_x) if in_tol == 0 else err, err, ny)
            if best_score is None or score < best_score:
                best_score = score
                best = (ny, nx)
    return best


def _gradient_magnitude(img: np.ndarray) -> np.ndarray:
    gy = np.zeros(img.shape[1:])
    gx = np.zeros(img.shape[1:])
    for c in range(img.shape[0]):
        dy, dx = np.gradient(img[c])
        gy += dy * dy
        gx += dx * dx
    return gy + gx


def _place_seeds(img: np.ndarray, ny: int, nx: int) -> np.ndarray:
    """Regular-grid seeds, each nudged to the lowest-gradient pixel nearby."""
    _, h, w = img.shape
    step_y, step_x = h / ny, w / nx
    grad = _gradient_magnitude(img)
    seeds = []
    taken = set()
    perturb = min(step_y, step_x) >= 3  # dense grids must keep seeds distinct
    for gy in range(ny):
        for gx in range(nx):
            cy = int((gy + 0.5) * step_y)
            cx = int((gx + 0.5) * step_x)
            cy = min(cy, h - 1)
            cx = min(cx, w - 1)
            if perturb:
                y0, y1 = max(0, cy - 1), min(h, cy + 2)
                x0, x1 = max(0, cx - 1), min(w, cx + 2)
                win = grad[y0:y1, x0:x1]
                dy, dx = np.unravel_index(int(win.argmin()), win.shape)
                cand = (y0 + int(dy), x0 + int(dx))
                if cand not in taken:
                    cy, cx = cand
            taken.add((cy, cx))
            seeds.append((cy, cx))
    return np.asarray(seeds, dtype=np.float64)


def slic(
    image,
    target_regions: int,
    compactness: float = DEFAULT_COMPACTNESS,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> SuperpixelMap:
    """Cluster an image into roughly ``target_regions`` connected superpixels.

    The distance between a pixel and a cluster center is
    d_color^2 + (compactness / S)^2 * d_space^2 with S = sqrt(H*W/K),
    evaluated inside a window around each center. After the iterations,
    stray components below a quarter of the mean region size are merged
    into their largest adjacent region so every region is 4-connected.
    """
    img = _as_image_array(image)
    _, h, w = img.shape
    if target_regions < 1:
        raise ValueError("target_regions must be >= 1")
    if target_regions > h * w:
        raise ValueError(f"target_regions {target_regions} exceeds pixel count {h * w}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    ny, nx = _grid_dims(h, w, target_regions)
    centers_pos = _place_seeds(img, ny, nx)  # (K, 2) float
    k = len(centers_pos)
    centers_color = img[:, centers_pos[:, 0].astype(int), centers_pos[:, 1].astype(int)].T.copy()

    spacing = np.sqrt(h * w / target_regions)
    ratio = (compactness / spacing) ** 2
    radius = int(np.ceil(max(h / ny, w / nx)))

    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)

    labels = np.full((h, w), -1, dtype=np.int32)
    for _ in range(max_iters):
        dist = np.full((h, w), np.inf)
        new_labels = np.full((h, w), -1, dtype=np.int32)
        for ci in range(k):
            cy, cx = centers_pos[ci]
            y0, y1 = max(0, int(cy) - radius), min(h, int(cy) + radius + 1)
            x0, x1 = max(0, int(cx) - radius), min(w, int(cx) + radius + 1)
            diff = img[:, y0:y1, x0:x1] - centers_color[ci][:, None, None]
            d2 = np.square(diff).sum(axis=0)
            d2 += ratio * (
                np.square(ys[y0:y1] - cy)[:, None] + np.square(xs[x0:x1] - cx)[None, :]
            )
            window = dist[y0:y1, x0:x1]
            better = d2 < window
            window[better] = d2[better]
            new_labels[y0:y1, x0:x1][better] = ci

        unassigned = new_labels < 0
        if unassigned.any():
            # centers drifted away from a pixel: fall back to nearest center
            uy, ux = np.nonzero(unassigned)
            d = np.square(uy[:, None] - centers_pos[None, :, 0]) + np.square(
                ux[:, None] - centers_pos[None, :, 1]
            )
            new_labels[uy, ux] = d.argmin(axis=1)

        if (new_labels == labels).all():
            break
        labels = new_labels

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        occupied = counts > 0
        sum_y = np.bincount(flat, weights=np.repeat(ys, w), minlength=k)
        sum_x = np.bincount(flat, weights=np.tile(xs, h), minlength=k)
        centers_pos[occupied, 0] = sum_y[occupied] / counts[occupied]
        centers_pos[occupied, 1] = sum_x[occupied] / counts[occupied]
        for c in range(img.shape[0]):
            sum_c = np.bincount(flat, weights=img[c].ravel(), minlength=k)
            centers_color[occupied, c] = sum_c[occupied] / counts[occupied]

    labels = _enforce_connectivity(labels, target_regions)
    n_regions = int(labels.max()) + 1
    return SuperpixelMap(labels=labels, n_regions=n_regions, image_shape=(h, w))


def _enforce_connectivity(labels: np.ndarray, target_regions: int) -> np.ndarray:
    """Split clusters into 4-connected components and absorb the orphans.

    Each cluster's largest component is its principal body and always
    survives as a region. The remaining components are orphans: those
    below a quarter of the mean region size merge into their largest
    adjacent component (smallest-first, deterministic), bigger ones
    survive on their own. If the survivors still exceed the +20% count
    contract, the smallest keep merging until the count fits.
    """
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    principal: set[int] = set()
    n_comp = 0
    for ci in range(int(labels.max()) + 1):
        mask = labels == ci
        if not mask.any():
            continue
        lab, n = ndimage.label(mask)
        sizes = np.bincount(lab[mask])[1:]
        principal.add(n_comp + int(sizes.argmax()))
        comp[mask] = lab[mask] - 1 + n_comp
        n_comp += n

    size = np.bincount(comp.ravel(), minlength=n_comp).astype(np.int64).tolist()

    adjacency: list[set[int]] = [set() for _ in range(n_comp)]
    horiz = comp[:, :-1] != comp[:, 1:]
    vert = comp[:-1, :] != comp[1:, :]
    for a, b in zip(comp[:, :-1][horiz], comp[:, 1:][horiz]):
        adjacency[a].add(int(b))
        adjacency[b].add(int(a))
    for a, b in zip(comp[:-1, :][vert], comp[1:, :][vert]):
        adjacency[a].add(int(b))
        adjacency[b].add(int(a))

    parent = list(range(n_comp))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def merge(a: int, b: int) -> None:  # absorb a into b
        parent[a] = b
        size[b] += size[a]
        adjacency[b] |= adjacency[a]

    def pick_neighbor(r: int) -> int | None:
        nb = {find(x) for x in adjacency[r]} - {r}
        if not nb:
            return None
        return max(sorted(nb), key=lambda n: (size[n], -n))

    threshold = (h * w / target_regions) / 4.0
    while True:
        roots = sorted({find(i) for i in range(n_comp)})
        small = sorted(
            (r for r in roots if r not in principal and size[r] < threshold),
            key=lambda r: (size[r], r),
        )
        merged = False
        for r in small:
            if find(r) != r:
                continue
            tgt = pick_neighbor(r)
            if tgt is None:
                continue
            merge(r, tgt)
            merged = True
        if not merged:
            break

    cap = max(1, int(np.floor(1.2 * target_regions)))
    while True:
        roots = sorted({find(i) for i in range(n_comp)})
        if len(roots) <= cap:
            break
        r = min(roots, key=lambda x: (x in principal, size[x], x))
        tgt = pick_neighbor(r)
        if tgt is None:
            break
        merge(r, tgt)

    lut = np.asarray([find(i) for i in range(n_comp)], dtype=np.int64)
    root_map = lut[comp]
    uniq, first = np.unique(root_map, return_index=True)
    order = np.argsort(first)  # rank regions by first row-major appearance
    remap = np.empty(n_comp, dtype=np.int32)
    remap[uniq[order]] = np.arange(len(uniq), dtype=np.int32)
    return remap[root_map]


def grid_partition(h: int, w: int, target_regions: int) -> SuperpixelMap:
    """Plain rectangular grid partition, the trivial sampling baseline."""
    if target_regions < 1 or target_regions > h * w:
        raise ValueError("target_regions must be in [1, H*W]")
    ny, nx = _grid_dims(h, w, target_regions)
    gy = np.minimum(np.arange(h) * ny // h, ny - 1)
    gx = np.minimum(np.arange(w) * nx // w, nx - 1)
    labels = (gy[:, None] * nx + gx[None, :]).astype(np.int32)
    return SuperpixelMap(labels=labels, n_regions=ny * nx, image_shape=(h, w))


def region_sizes(spmap: SuperpixelMap) -> list[int]:
    """Pixel count per region; sums to H*W and every count is >= 1."""
    return np.bincount(spmap.labels.ravel(), minlength=spmap.n_regions).tolist()


def save_superpixel_png(spmap: SuperpixelMap, path: str | Path) -> None:
    """Write the label map as an indexed 16-bit grayscale PNG."""
    if spmap.n_regions > 65536:
        raise ValueError("too many regions for a 16-bit export")
    Image.fromarray(spmap.labels.astype(np.uint16)).save(Path(path))


def load_superpixel_png(path: str | Path) -> SuperpixelMap:
    arr = np.asarray(Image.open(Path(path)), dtype=np.int32)
    if arr.ndim != 2:
        raise ValueError(f"{path}: superpixel map must be single-channel")
    return SuperpixelMap(labels=arr, n_regions=int(arr.max()) + 1, image_shape=arr.shape)


def save_superpixel_csv(spmap: SuperpixelMap, path: str | Path) -> None:
    """Write (row, col, region) triples for inspection."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "region"])
        h, w = spmap.image_shape
        for r in range(h):
            row = spmap.labels[r]
            for c in range(w):
                writer.writerow([r, c, int(row[c])])
