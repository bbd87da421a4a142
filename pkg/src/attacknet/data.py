"""Image ingest (binary PPM), bilinear resampling, dataset manifests and fusion.

Dataset directory layout::

    <root>/bonafide/*.ppm
    <root>/attack/*.ppm
    <root>/split.csv        optional, header ``filename,split``; split in {train,val,test}

``filename`` in split.csv is the path relative to ``<root>`` (``bonafide/x.ppm``)
or the bare file name when it is unambiguous.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Prng, derive_seed

BONAFIDE, ATTACK = 0, 1
CLASS_NAMES = ("bonafide", "attack")
SPLITS = ("train", "val", "test")
DEFAULT_TRAIN_RATIO = 0.48


class DecodeError(ValueError):
    pass


class UnsupportedFormatError(DecodeError):
    pass


class TruncatedImageError(DecodeError):
    pass


class MaxvalError(DecodeError):
    pass


class DatasetError(ValueError):
    pass


@dataclass
class ImageRecord:
    pixels: np.ndarray  # [3,H,W] float32 in [0,1], R,G,B
    original_size: tuple[int, int]


# ------------------------------------------------------------------ PPM codec

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_ppm_bytes(data: bytes) -> np.ndarray:
    """Binary P6 with maxval 255 -> uint8 array [H,W,3]."""
    if len(data) < 2 or data[:1] != b"P":
        raise UnsupportedFormatError("not a PNM file")
    if data[:2] != b"P6":
        raise UnsupportedFormatError(f"unsupported PNM variant {data[:2].decode('ascii', 'replace')}; only P6")
    pos = 2
    header = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise TruncatedImageError("PPM header ended early")
        try:
            header.append(int(m.group(1)))
        except ValueError:
            raise DecodeError(f"bad PPM header token {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = header
    if maxval != 255:
        raise MaxvalError(f"maxval {maxval} not supported (need 255)")
    if width < 1 or height < 1:
        raise DecodeError(f"bad PPM size {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise TruncatedImageError("missing whitespace after PPM header")
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise TruncatedImageError(f"PPM payload has {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def encode_ppm_bytes(rgb: np.ndarray) -> bytes:
    """uint8 [H,W,3] -> P6 bytes."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[3,H,W] floats in [0,1] -> [H,W,3] uint8, rounded to nearest."""
    return np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def decode_image(path) -> ImageRecord:
    rgb = decode_ppm_bytes(Path(path).read_bytes())
    pixels = (rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))
    return ImageRecord(np.ascontiguousarray(pixels), (rgb.shape[0], rgb.shape[1]))


def write_image(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm_bytes(to_uint8(pixels)))


# ------------------------------------------------------------------ resampling

def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, border: str = "zero") -> np.ndarray:
    """Sample ``img`` [C,H,W] at fractional pixel coordinates ``ys``/``xs``.

    ``border="zero"`` treats taps outside the image as 0; ``"clamp"`` clamps
    coordinates to the image.
    """
    c, h, w = img.shape
    if border == "clamp":
        ys = np.clip(ys, 0, h - 1)
        xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0).astype(img.dtype)
    fx = (xs - x0).astype(img.dtype)
    out = np.zeros((c,) + np.shape(ys), dtype=img.dtype)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += vals * (wy * wx * inside)
    return out


def resize_array(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [C,H,W] with half-pixel centre alignment."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.clip(sample_bilinear(img, yy, xx, border="clamp"), 0, 1).astype(img.dtype)


def resize_bilinear(img: ImageRecord, out_h: int, out_w: int) -> ImageRecord:
    return ImageRecord(resize_array(img.pixels, out_h, out_w), img.original_size)


# ------------------------------------------------------------------ manifests

@dataclass(frozen=True)
class Sample:
    path: Path
    label: int
    source: str
    split: str


@dataclass
class DatasetManifest:
    name: str
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, split: str) -> list[Sample]:
        return [s for s in self.samples if s.split == split]

    def has_split(self, split: str) -> bool:
        return any(s.split == split for s in self.samples)

    @property
    def sources(self) -> list[str]:
        return list(dict.fromkeys(s.source for s in self.samples))


@dataclass
class ArrayData:
    """Decoded samples ready for the model."""

    images: np.ndarray  # [N,3,H,W] float32
    labels: np.ndarray  # [N] int64
    sources: list[str]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ArrayData":
        idx = np.asarray(idx, dtype=np.int64)
        return ArrayData(self.images[idx], self.labels[idx], [self.sources[i] for i in idx])


def _read_split_csv(path: Path) -> dict[str, str]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["filename", "split"]:
            raise DatasetError(f"{path}: header must be 'filename,split'")
        out = {}
        for row in reader:
            split = row["split"].strip()
            if split not in SPLITS:
                raise DatasetError(f"{path}: unknown split {split!r}")
            out[row["filename"].strip()] = split
    return out


def load_dataset(root, name: str | None = None, seed: int = 0, train_ratio: float = DEFAULT_TRAIN_RATIO) -> DatasetManifest:
    """Enumerate ``root`` in sorted order and assign splits.

    Without split.csv each class is shuffled with a seeded generator and the
    first ``round(train_ratio * n)`` samples go to train, the rest to val.
    """
    root = Path(root)
    name = name or root.name
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    per_class: list[list[Path]] = []
    for cls in CLASS_NAMES:
        d = root / cls
        if not d.is_dir():
            raise DatasetError(f"{root}: missing class directory {cls}/")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".ppm" and p.is_file())
        if not files:
            raise DatasetError(f"{root}: class directory {cls}/ has no .ppm images")
        per_class.append(files)

    split_csv = root / "split.csv"
    samples: list[Sample] = []
    if split_csv.exists():
        assign = _read_split_csv(split_csv)
        for label, files in enumerate(per_class):
            for p in files:
                rel = p.relative_to(root).as_posix()
                split = assign.get(rel, assign.get(p.name))
                if split is None:
                    raise DatasetError(f"{split_csv}: no split for {rel}")
                samples.append(Sample(p, label, name, split))
    else:
        if not 0.0 < train_ratio < 1.0:
            raise DatasetError("train_ratio must lie in (0, 1)")
        for label, files in enumerate(per_class):
            order = Prng(derive_seed(seed, label)).permutation(len(files))
            n_train = int(round(train_ratio * len(files)))
            train_idx = set(order[:n_train].tolist())
            samples.extend(
                Sample(p, label, name, "train" if i in train_idx else "val") for i, p in enumerate(files)
            )
    return DatasetManifest(name, samples)


def fuse(datasets: list[DatasetManifest], seed: int, name: str = "fused") -> DatasetManifest:
    """Concatenate manifests keeping source tags and splits; the train split is shuffled."""
    if len(datasets) < 2:
        raise DatasetError("fusion needs at least two datasets")
    seen: set[Path] = set()
    combined: list[Sample] = []
    for ds in datasets:
        for s in ds.samples:
            key = Path(s.path).resolve()
            if key in seen:
                raise DatasetError(f"duplicate sample {s.path} across fused datasets")
            seen.add(key)
            combined.append(s)
    train = [s for s in combined if s.split == "train"]
    rest = [s for s in combined if s.split != "train"]
    order = Prng(seed).permutation(len(train))
    return DatasetManifest(name, [train[i] for i in order] + rest)


def materialize(samples: list[Sample], height: int, width: int) -> ArrayData:
    """Decode and resize samples to the model input size."""
    if not samples:
        raise DatasetError("no samples to load")
    images = np.empty((len(samples), 3, height, width), dtype=np.float32)
    for i, s in enumerate(samples):
        rec = decode_image(s.path)
        images[i] = resize_array(rec.pixels, height, width)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return ArrayData(images, labels, [s.source for s in samples])

