"""Synthetic witness-instance datasets.

Negative bags (class 0) are i.i.d. standard normal in R^d.  A bag of
positive class c >= 1 additionally carries ceil(witness_rate * K)
witness instances drawn from N(mu * e_c, I), where e_c is the 0-based
axis-c unit vector, so each positive class separates from background
along its own axis and classes separate from each other.

Every bag is generated from its own Philox stream keyed by the root
seed and a global bag counter, so any bag is reproducible in isolation
and the dataset is identical however the loops are reorganized.
Features are quantized through float32 (the storage precision) before
use, so an in-memory dataset equals its saved-and-reloaded twin bit for
bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .bags import SPLITS, Bag, Dataset, ManifestRow, save_bag, write_manifest


@dataclass(frozen=True)
class SynthConfig:
    feature_dim: int = 16
    num_classes: int = 2
    witness_rate: float = 0.1
    witness_mean: float = 6.0
    k_min: int = 32
    k_max: int = 64
    train_per_class: int = 100
    val_per_class: int = 25
    test_per_class: int = 50
    seed: int = 0
    with_coords: bool = True
    name: str = "synth"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.feature_dim < self.num_classes:
            raise ValueError(
                f"feature_dim must be >= num_classes so every positive class has a "
                f"witness axis, got d={self.feature_dim}, C={self.num_classes}"
            )
        if not 0.0 < self.witness_rate <= 1.0:
            raise ValueError(f"witness_rate must be in (0, 1], got {self.witness_rate}")
        if not math.isfinite(self.witness_mean):
            raise ValueError("witness_mean must be finite")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError(f"need 1 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        for label, count in (
            ("train_per_class", self.train_per_class),
            ("val_per_class", self.val_per_class),
            ("test_per_class", self.test_per_class),
        ):
            if count < 1:
                raise ValueError(f"{label} must be >= 1, got {count}")

    @property
    def per_class(self) -> dict[str, int]:
        return {
            "train": self.train_per_class,
            "val": self.val_per_class,
            "test": self.test_per_class,
        }


@dataclass
class SyntheticData:
    """A generated dataset plus its witness ground truth.

    ``witnesses`` maps slide id to the sorted instance indices that
    carry the class signal (empty for class-0 bags).  It exists only in
    memory; bag files do not record it.
    """

    dataset: Dataset
    witnesses: dict[str, np.ndarray] = field(default_factory=dict)


def grid_coords(k: int) -> np.ndarray:
    """Row-major (row, col) coordinates on a near-square grid."""
    ncols = math.ceil(math.sqrt(k))
    idx = np.arange(k)
    return np.stack([idx // ncols, idx % ncols], axis=1)


def _make_bag(cfg: SynthConfig, split: str, label: int, index: int, counter: int) -> tuple[Bag, np.ndarray]:
    gen = rng.stream(cfg.seed, rng.PURPOSE_BAG, counter)
    k = int(gen.integers(cfg.k_min, cfg.k_max + 1))
    features = rng.standard_normals(gen, k * cfg.feature_dim).reshape(k, cfg.feature_dim)
    if label > 0:
        n_wit = math.ceil(cfg.witness_rate * k)
        witnesses = np.sort(gen.choice(k, size=n_wit, replace=False))
        features[witnesses, label] += cfg.witness_mean
    else:
        witnesses = np.zeros(0, dtype=np.int64)
    features = features.astype(np.float32).astype(np.float64)
    coords = grid_coords(k) if cfg.with_coords else None
    slide_id = f"{cfg.name}-{split}-c{label}-{index:04d}"
    return Bag(slide_id, label, features, coords), witnesses.astype(np.int64)


def generate_dataset(cfg: SynthConfig) -> SyntheticData:
    """Generate all splits deterministically from cfg.seed."""
    splits: dict[str, list[Bag]] = {s: [] for s in SPLITS}
    witnesses: dict[str, np.ndarray] = {}
    counter = 0
    for split in SPLITS:
        for label in range(cfg.num_classes):
            for index in range(cfg.per_class[split]):
                bag, wit = _make_bag(cfg, split, label, index, counter)
                splits[split].append(bag)
                witnesses[bag.slide_id] = wit
                counter += 1
    dataset = Dataset(
        name=cfg.name,
        num_classes=cfg.num_classes,
        feature_dim=cfg.feature_dim,
        splits=splits,
    )
    return SyntheticData(dataset=dataset, witnesses=witnesses)


def write_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write bag files under out_dir/bags plus out_dir/manifest.csv."""
    out_dir = Path(out_dir)
    bag_dir = out_dir / "bags"
    bag_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for split in SPLITS:
        for bag in dataset.splits.get(split, []):
            rel = f"bags/{bag.slide_id}.milb"
            save_bag(bag, out_dir / rel)
            rows.append(ManifestRow(rel, bag.slide_id, bag.label, split))
    return write_manifest(rows, out_dir / "manifest.csv")
