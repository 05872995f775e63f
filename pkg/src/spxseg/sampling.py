"""Budgeted pixel sampling over superpixels, and dense scatter of results.

Training picks one pixel per randomly chosen region (or two once the
budget exceeds the region count) and records the ground-truth label at
the pixel itself. Inference runs the classifier on one pixel per region
and paints the predicted class over the whole region.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .superpixel import SuperpixelMap


@dataclass(frozen=True)
class Sample:
    pixel: tuple[int, int]
    superpixel_id: int
    label: int


@dataclass
class SampleSet:
    samples: list[Sample]
    budget: int
    rng_seed: int

    def pixel_rows(self) -> np.ndarray:
        return np.asarray([s.pixel[0] for s in self.samples], dtype=np.intp)

    def pixel_cols(self) -> np.ndarray:
        return np.asarray([s.pixel[1] for s in self.samples], dtype=np.intp)

    def labels(self) -> np.ndarray:
        return np.asarray([s.label for s in self.samples], dtype=np.intp)

    def superpixel_ids(self) -> np.ndarray:
        return np.asarray([s.superpixel_id for s in self.samples], dtype=np.intp)


MAX_IGNORE_REDRAWS = 8


def _region_pixel_lists(spmap: SuperpixelMap) -> list[np.ndarray]:
    h, w = spmap.image_shape
    flat = spmap.labels.ravel()
    order = np.argsort(flat, kind="stable")  # row-major within each region
    bounds = np.searchsorted(flat[order], np.arange(spmap.n_regions + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(spmap.n_regions)]


def draw_samples(
    spmap: SuperpixelMap,
    label_map: np.ndarray,
    budget: int,
    seed: int,
    ignore_label: int | None = None,
) -> SampleSet:
    """Draw exactly ``budget`` sample pixels, at most two per superpixel.

    With budget <= n_regions the samples come from that many distinct
    regions, one pixel each; beyond that every region contributes one
    pixel and randomly chosen regions a second, distinct one. Pixels on
    the ignore label are redrawn within their region a few times, then
    the region is skipped and the budget filled from another.
    """
    label_map = np.asarray(label_map)
    if label_map.shape != spmap.image_shape:
        raise ValueError("label map shape does not match superpixel map")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if budget > 2 * spmap.n_regions:
        raise ValueError(
            f"budget {budget} exceeds 2 x n_regions = {2 * spmap.n_regions}"
        )

    rng = np.random.default_rng(seed)
    h, w = spmap.image_shape
    pixels = _region_pixel_lists(spmap)
    flat_labels = label_map.ravel()

    def draw_one(region: int, exclude: int | None) -> int | None:
        """Pick a usable flat pixel index from a region, or None to skip it."""
        pool = pixels[region]
        if exclude is not None:
            pool = pool[pool != exclude]
        if len(pool) == 0:
            return None
        for _ in range(MAX_IGNORE_REDRAWS + 1):
            idx = int(pool[rng.integers(len(pool))])
            if ignore_label is None or flat_labels[idx] != ignore_label:
                return idx
        return None

    n = spmap.n_regions
    region_order = rng.permutation(n)
    samples: list[Sample] = []
    taken_first: dict[int, int] = {}

    for region in region_order:
        if len(samples) >= min(budget, n):
            break
        idx = draw_one(int(region), None)
        if idx is None:
            continue
        taken_first[int(region)] = idx
        samples.append(Sample((idx // w, idx % w), int(region), int(flat_labels[idx])))

    remaining = budget - len(samples)
    if remaining > 0:
        second_order = rng.permutation(n)
        for region in second_order:
            if remaining == 0:
                break
            region = int(region)
            if region not in taken_first:
                continue
            idx = draw_one(region, exclude=taken_first[region])
            if idx is None:
                continue
            samples.append(Sample((idx // w, idx % w), region, int(flat_labels[idx])))
            remaining -= 1

    if len(samples) != budget:
        raise ValueError(
            f"could not fill budget {budget}: only {len(samples)} usable samples "
            "(regions exhausted by ignore labels or single-pixel regions)"
        )
    return SampleSet(samples=samples, budget=budget, rng_seed=seed)


def draw_random_pixels(
    spmap: SuperpixelMap,
    label_map: np.ndarray,
    budget: int,
    seed: int,
    ignore_label: int | None = None,
) -> SampleSet:
    """Ablation baseline: budget pixels drawn uniformly, no region logic.

    Superpixel ids are still recorded per pixel, but nothing caps how
    many samples share a region.
    """
    label_map = np.asarray(label_map)
    if label_map.shape != spmap.image_shape:
        raise ValueError("label map shape does not match superpixel map")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    h, w = spmap.image_shape
    rng = np.random.default_rng(seed)
    flat_labels = label_map.ravel()
    pool = np.arange(h * w)
    if ignore_label is not None:
        pool = pool[flat_labels != ignore_label]
    if budget > len(pool):
        raise ValueError(f"budget {budget} exceeds {len(pool)} usable pixels")
    chosen = rng.choice(pool, size=budget, replace=False)
    samples = [
        Sample((int(i) // w, int(i) % w), int(spmap.labels.flat[i]), int(flat_labels[i]))
        for i in chosen
    ]
    return SampleSet(samples=samples, budget=budget, rng_seed=seed)


def scatter_predictions(
    spmap: SuperpixelMap,
    per_sample: list[tuple[int, int, float]],
) -> np.ndarray:
    """Paint per-region predictions back to a dense (H, W) class map.

    ``per_sample`` holds (superpixel_id, class, probability) records;
    every region must appear at least once. When a region carries two
    predictions, the class with the higher summed probability wins and
    exact ties go to the lower class index.
    """
    votes: dict[int, dict[int, float]] = {}
    for sp_id, cls, prob in per_sample:
        votes.setdefault(int(sp_id), {})
        votes[int(sp_id)][int(cls)] = votes[int(sp_id)].get(int(cls), 0.0) + float(prob)

    missing = [r for r in range(spmap.n_regions) if r not in votes]
    if missing:
        raise ValueError(f"missing predictions for superpixel ids: {missing}")

    region_class = np.empty(spmap.n_regions, dtype=np.int32)
    for sp_id, tally in votes.items():
        best = min(tally.items(), key=lambda kv: (-kv[1], kv[0]))
        region_class[sp_id] = best[0]
    return region_class[spmap.labels]


def save_samples_csv(sample_set: SampleSet, path: str | Path) -> None:
    """Write (row, col, superpixel_id, label) rows for audit."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "superpixel_id", "label"])
        for s in sample_set.samples:
            writer.writerow([s.pixel[0], s.pixel[1], s.superpixel_id, s.label])
