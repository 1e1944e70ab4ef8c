"""Dataset discovery, example preparation and a procedural panorama generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import CameraPose, canvas_lonlat, embed_snapshot, extract_snapshot, read_png, roll_canvas


@dataclass
class DatasetEntry:
    path: Path
    label: int
    image: np.ndarray | None = field(default=None, repr=False)

    def load(self, height: int) -> np.ndarray:
        """Decode once and cache ``[3, H, 2H]`` in [-1, 1]."""
        if self.image is None or self.image.shape[1] != height:
            img = read_png(self.path)
            _, h, w = img.shape
            if w != 2 * h:
                raise DataError(f"{self.path}: equirectangular image must be 2:1, got {w}x{h}")
            if h != height:
                img = read_png(self.path, size=(height, 2 * height))
            self.image = img
        return self.image


def scan_dataset(root: str | Path, class_names: list[str] | None = None
                 ) -> tuple[list[DatasetEntry], list[str]]:
    """Find PNG panoramas under ``root``.

    Either ``root/manifest.csv`` with ``path,label`` rows (label as id or class
    name, path relative to root), or one subdirectory per class.  Class ids
    follow ``class_names`` when given, sorted directory names otherwise.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    manifest = root / "manifest.csv"
    if manifest.exists():
        rows = list(csv.DictReader(manifest.open()))
        if class_names is None:
            named = sorted({r["label"] for r in rows if not r["label"].isdigit()})
            class_names = named
        entries = []
        for r in rows:
            lab = r["label"]
            label = int(lab) if lab.isdigit() else class_names.index(lab)
            entries.append(DatasetEntry(root / r["path"], label))
    else:
        dirs = sorted(p.name for p in root.iterdir() if p.is_dir())
        class_names = list(class_names) if class_names is not None else dirs
        entries = []
        for d in dirs:
            if d not in class_names:
                raise DataError(f"directory {d!r} is not a known class")
            for png in sorted((root / d).glob("*.png")):
                entries.append(DatasetEntry(png, class_names.index(d)))
    if not entries:
        raise DataError(f"no images found under {root}")
    return entries, class_names


def snapshot_pose(fov: float) -> CameraPose:
    return CameraPose(yaw=0.0, pitch=0.0, fov_h=fov, fov_v=fov)


def prepare_example(entry: DatasetEntry, rng: np.random.Generator, height: int,
                    fov: float = 90.0, snapshot_size: int = 64, shift: int | None = None):
    """Roll the panorama, cut the frontal snapshot, and embed it into an empty canvas.

    Returns ``(x, y, mask, label)``: condition canvas, rolled target, mask
    ``[1, H, W]``, scene label.
    """
    y = entry.load(height)
    if shift is None:
        shift = int(rng.integers(y.shape[-1]))
    y = roll_canvas(y, shift)
    pose = snapshot_pose(fov)
    snap = extract_snapshot(y, pose, snapshot_size, snapshot_size)
    x, mask = embed_snapshot(snap, pose, height)
    return x, y, mask, entry.label


def synthetic_panorama(rng: np.random.Generator, label: int, height: int = 64) -> np.ndarray:
    """Smooth procedural 2:1 panorama in [-1, 1]; the label picks a palette.

    Longitude enters only through periodic functions, so the seam is continuous.
    """
    lon, lat = canvas_lonlat(height)
    palettes = np.array([[0.2, 0.5, 0.9], [0.3, 0.8, 0.2], [0.9, 0.6, 0.2], [0.6, 0.3, 0.7]])
    base = palettes[label % len(palettes)]
    img = np.empty((3, height, 2 * height))
    horizon = 0.15 * np.sin(lon * rng.integers(1, 4) + rng.uniform(0, 2 * np.pi))
    sky = np.tanh(6.0 * (lat - horizon))
    for c in range(3):
        k = rng.integers(1, 4)
        wave = 0.25 * np.sin(k * lon + rng.uniform(0, 2 * np.pi)) * np.cos(2 * lat)
        img[c] = 0.55 * sky * base[c] + (1 - base[c]) * 0.3 * (1 - sky) + wave
    return np.clip(img, -1.0, 1.0)


def write_synthetic_dataset(root: str | Path, images_per_class: int, num_classes: int,
                            height: int = 64, seed: int = 0) -> list[str]:
    """Write ``class_k/img_i.png`` panoramas; returns the class names."""
    from .geometry import write_png

    rng = np.random.default_rng(seed)
    root = Path(root)
    names = [f"class_{k}" for k in range(num_classes)]
    for k, name in enumerate(names):
        for i in range(images_per_class):
            write_png(root / name / f"img_{i:03d}.png", synthetic_panorama(rng, k, height))
    return names
