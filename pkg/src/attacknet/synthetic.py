"""Synthetic two-class liveness data for tests, demos and protocol checks.

Bonafide images carry a warm colour blob on a smooth background; attack
images carry a cool blob plus a faint stripe pattern (a stand-in for replay
moire).  Blob position, size and pixel noise are random.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import ATTACK, BONAFIDE, CLASS_NAMES, ArrayData, write_image
from .tensor import Prng

_BLOB = {BONAFIDE: (0.85, 0.35, 0.2), ATTACK: (0.2, 0.4, 0.85)}


def make_image(label: int, size: int, p: Prng) -> np.ndarray:
    u = p.uniform((4,), 0.0, 1.0, dtype=np.float64)
    cy, cx = (0.3 + 0.4 * u[0]) * size, (0.3 + 0.4 * u[1]) * size
    radius = (0.15 + 0.1 * u[2]) * size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
    img = np.empty((3, size, size))
    for c, color in enumerate(_BLOB[label]):
        img[c] = 0.45 * (1 - blob) + color * blob
    if label == ATTACK:
        img += 0.08 * np.sin(2 * np.pi * (xx + yy) / 4 + 2 * np.pi * u[3])
    img += 0.04 * p.normal((3, size, size), dtype=np.float64)
    return np.clip(img, 0, 1).astype(np.float32)


def make_arrays(n_per_class: int, size: int, seed: int, shuffle_labels: bool = False, source: str = "synthetic") -> ArrayData:
    """Balanced set in alternating class order; ``shuffle_labels`` permutes labels independently of content."""
    p = Prng(seed)
    labels = np.tile([BONAFIDE, ATTACK], n_per_class).astype(np.int64)
    images = np.stack([make_image(int(y), size, p) for y in labels])
    if shuffle_labels:
        labels = labels[p.permutation(len(labels))]
    return ArrayData(images, labels, [source] * len(labels))


def write_dataset(root, n_per_class: int, size: int = 32, seed: int = 0,
                  shuffle_labels: bool = False, splits: dict[str, str] | None = None) -> Path:
    """Write a dataset directory in the ingest layout and return its root."""
    root = Path(root)
    data = make_arrays(n_per_class, size, seed, shuffle_labels)
    for cls in CLASS_NAMES:
        (root / cls).mkdir(parents=True, exist_ok=True)
    for i, (img, y) in enumerate(zip(data.images, data.labels)):
        write_image(root / CLASS_NAMES[y] / f"img{i:05d}.ppm", img)
    if splits:
        lines = ["filename,split"] + [f"{k},{v}" for k, v in sorted(splits.items())]
        (root / "split.csv").write_text("\n".join(lines) + "\n")
    return root
