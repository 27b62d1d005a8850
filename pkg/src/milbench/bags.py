"""Bag container, on-disk format, and manifest-driven dataset loading.

A bag file holds one bag of instance features:

    offset  size  field
    0       4     magic "MILB"
    4       4     format version, u32 little-endian (currently 1)
    8       4     label, u32 (0-based class id)
    12      4     K, number of instances, u32
    16      4     d, feature dimension, u32
    20      1     coords flag, u8 (1 = coordinate block present)
    21      3     zero padding
    24      K*d   features, IEEE-754 float32 little-endian, row-major
    ...     K*8   (row, col) pairs, u32 each, only when the flag is 1

Features are promoted to float64 on load.  The slide id is not stored
in the file; it lives in the manifest, a UTF-8 CSV with the exact
header ``path,slide_id,label,split`` whose paths are relative to the
manifest's directory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MILB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")
SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ["path", "slide_id", "label", "split"]


class DataError(Exception):
    """Malformed bag file, manifest, or dataset."""


class BagFormatError(DataError):
    pass


class ManifestError(DataError):
    pass


@dataclass
class Bag:
    """One bag: K x d float64 features, a 0-based label, optional
    per-instance (row, col) grid coordinates."""

    slide_id: str
    label: int
    features: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise DataError(f"features must be K x d with K, d >= 1, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"bag {self.slide_id!r} has non-finite features")
        if int(self.label) < 0:
            raise DataError(f"bag {self.slide_id!r} has negative label {self.label}")
        self.label = int(self.label)
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.int64)
            if self.coords.shape != (self.features.shape[0], 2):
                raise DataError(
                    f"coords must be K x 2, got {self.coords.shape} for K={self.features.shape[0]}"
                )
            if np.any(self.coords < 0):
                raise DataError(f"bag {self.slide_id!r} has negative coordinates")
            if len({(int(r), int(c)) for r, c in self.coords}) != len(self.coords):
                raise DataError(f"bag {self.slide_id!r} has duplicate coordinates")

    @property
    def num_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def save_bag(bag: Bag, path: str | Path) -> Path:
    """Write one bag file.  Features are stored as float32."""
    path = Path(path)
    k, d = bag.features.shape
    flag = 1 if bag.coords is not None else 0
    blob = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, bag.label, k, d, flag))
    blob += np.ascontiguousarray(bag.features, dtype="<f4").tobytes()
    if bag.coords is not None:
        blob += np.ascontiguousarray(bag.coords, dtype="<u4").tobytes()
    path.write_bytes(bytes(blob))
    return path


def load_bag(path: str | Path, slide_id: str | None = None) -> Bag:
    """Read one bag file, validating structure and finiteness."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise BagFormatError(
            f"{path}: expected at least {_HEADER.size} header bytes, got {len(data)}"
        )
    magic, version, label, k, d, flag = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BagFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise BagFormatError(f"{path}: unsupported format version {version}")
    if k < 1 or d < 1:
        raise BagFormatError(f"{path}: K and d must be >= 1, got K={k}, d={d}")
    if flag not in (0, 1):
        raise BagFormatError(f"{path}: coords flag must be 0 or 1, got {flag}")
    expected = _HEADER.size + k * d * 4 + (k * 8 if flag else 0)
    if len(data) != expected:
        raise BagFormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    features = (
        np.frombuffer(data, dtype="<f4", count=k * d, offset=_HEADER.size)
        .reshape(k, d)
        .astype(np.float64)
    )
    if not np.all(np.isfinite(features)):
        raise BagFormatError(f"{path}: non-finite feature values")
    coords = None
    if flag:
        coords = (
            np.frombuffer(data, dtype="<u4", count=k * 2, offset=_HEADER.size + k * d * 4)
            .reshape(k, 2)
            .astype(np.int64)
        )
    try:
        return Bag(slide_id or path.stem, label, features, coords)
    except DataError as exc:
        raise BagFormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestRow:
    path: str
    slide_id: str
    label: int
    split: str


def write_manifest(rows: list[ManifestRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow([row.path, row.slide_id, row.label, row.split])
    return path


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    try:
        with path.open("r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ManifestError(f"{path}: empty manifest") from None
            if header != MANIFEST_HEADER:
                raise ManifestError(
                    f"{path}: bad header {header!r}, expected {MANIFEST_HEADER!r}"
                )
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != 4:
                    raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
                rel, slide_id, label_s, split = rec
                if Path(rel).is_absolute():
                    raise ManifestError(f"{path}:{lineno}: path must be relative: {rel!r}")
                try:
                    label = int(label_s)
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: bad label {label_s!r}") from None
                if label < 0:
                    raise ManifestError(f"{path}:{lineno}: negative label {label}")
                if split not in SPLITS:
                    raise ManifestError(
                        f"{path}:{lineno}: bad split {split!r}, expected one of {SPLITS}"
                    )
                rows.append(ManifestRow(rel, slide_id, label, split))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not rows:
        raise ManifestError(f"{path}: manifest lists no bags")
    ids = [r.slide_id for r in rows]
    if len(set(ids)) != len(ids):
        dupes = sorted({s for s in ids if ids.count(s) > 1})
        raise ManifestError(f"{path}: duplicate slide ids: {', '.join(dupes)}")
    return rows


@dataclass
class Dataset:
    """Bags grouped by split, with inferred class count and feature dim."""

    name: str
    num_classes: int
    feature_dim: int
    splits: dict[str, list[Bag]] = field(default_factory=dict)

    def split(self, name: str) -> list[Bag]:
        return self.splits.get(name, [])

    @property
    def all_bags(self) -> list[Bag]:
        return [bag for split in SPLITS for bag in self.splits.get(split, [])]


def load_dataset(manifest_path: str | Path, name: str | None = None) -> Dataset:
    """Load every bag a manifest lists and cross-check labels and dims.

    ``num_classes`` is inferred as max label + 1 (minimum 2); a bag
    file whose stored label disagrees with the manifest is an error, as
    are mixed feature dimensions.
    """
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    root = manifest_path.parent
    splits: dict[str, list[Bag]] = {s: [] for s in SPLITS}
    feature_dim = None
    for row in rows:
        bag = load_bag(root / row.path, slide_id=row.slide_id)
        if bag.label != row.label:
            raise ManifestError(
                f"{manifest_path}: label mismatch for {row.slide_id!r}: "
                f"file says {bag.label}, manifest says {row.label}"
            )
        if feature_dim is None:
            feature_dim = bag.feature_dim
        elif bag.feature_dim != feature_dim:
            raise ManifestError(
                f"{manifest_path}: mixed feature dims: {feature_dim} vs "
                f"{bag.feature_dim} in {row.slide_id!r}"
            )
        splits[row.split].append(bag)
    num_classes = max(2, max(b.label for bags in splits.values() for b in bags) + 1)
    return Dataset(
        name=name or manifest_path.parent.name,
        num_classes=num_classes,
        feature_dim=int(feature_dim),
        splits=splits,
    )
