"""Toy image corpora, binary PGM I/O, and measurement simulation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .operators import LinearOperator
from .tensor import Tensor

__all__ = [
    "Dataset",
    "simulate_measurements",
    "generate_toy_corpus",
    "piecewise_images",
    "load_corpus_dir",
    "read_pgm",
    "write_pgm",
]


@dataclass
class Dataset:
    """Aligned clean signals, measurements, and the noise that was added."""

    samples: list  # (x, y, eps) Tensors
    split: str = "train"
    provenance: str = ""
    sigma: float = 0.0

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    def max_regeneration_error(self, op: LinearOperator) -> float:
        """max over samples of ||y - H(x) - eps||_inf; ~1e-16 by construction."""
        worst = 0.0
        for x, y, eps in self.samples:
            resid = y.data - op.apply_raw(x.data) - eps.data
            worst = max(worst, float(np.abs(resid).max()) if resid.size else 0.0)
        return worst


def simulate_measurements(
    op: LinearOperator,
    xs,
    sigma: float,
    seed,
    split: str = "train",
    provenance: str = "",
) -> Dataset:
    """y = H(x) + eps with eps ~ N(0, sigma^2) drawn from one seeded stream."""
    if sigma < 0:
        raise ValueError(f"noise level must be >= 0, got {sigma}")
    rng = np.random.Generator(np.random.PCG64(seed))
    samples = []
    for x in xs:
        x_arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        clean = op.apply_raw(x_arr)
        eps = sigma * rng.standard_normal(op.codomain_dim)
        samples.append((Tensor(x_arr), Tensor(clean + eps), Tensor(eps)))
    return Dataset(samples, split=split, provenance=provenance, sigma=float(sigma))


def piecewise_images(count: int, size: int, seed) -> list[np.ndarray]:
    """Synthetic (1, size, size) images: a linear ramp overlaid with a few
    axis-aligned constant rectangles, values in [0, 1]."""
    if size < 8:
        raise ValueError(f"image size must be >= 8, got {size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = []
    for _ in range(count):
        base = rng.uniform(0.1, 0.9)
        gx, gy = rng.uniform(-0.6, 0.6, size=2)
        img = base + gx * ii / (size - 1) + gy * jj / (size - 1)
        for _ in range(rng.integers(2, 5)):
            h = int(rng.integers(size // 8, size // 2 + 1))
            w = int(rng.integers(size // 8, size // 2 + 1))
            r = int(rng.integers(0, size - h + 1))
            c = int(rng.integers(0, size - w + 1))
            img[r:r + h, c:c + w] = rng.uniform(0.0, 1.0)
        images.append(np.clip(img, 0.0, 1.0)[None, :, :])
    return images


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255; returns uint8 (H, W)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise ValueError(f"{path}: malformed PGM header")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pixels = raw[pos:pos + width * height]
    if len(pixels) != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image) -> None:
    """Write (H, W) data as binary PGM; floats are taken as [0, 1] scale."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())


def load_corpus_dir(path, count: int, size: int) -> list[np.ndarray]:
    """Load up to `count` grayscale PGMs, rescale to [0, 1], center-crop."""
    if size < 8:
        raise ValueError(f"image size must be >= 8, got {size}")
    try:
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".pgm"))
    except OSError as exc:
        raise ValueError(f"cannot read corpus directory {path}: {exc}") from exc
    offenders = []
    images = []
    for name in names[:count] if count else names:
        full = os.path.join(path, name)
        try:
            img = read_pgm(full).astype(np.float64) / 255.0
            h, w = img.shape
            if h < size or w < size:
                raise ValueError(f"{full}: image {h}x{w} smaller than crop {size}")
            top, left = (h - size) // 2, (w - size) // 2
            images.append(img[top:top + size, left:left + size][None, :, :])
        except (OSError, ValueError) as exc:
            offenders.append(str(exc))
    if offenders:
        raise ValueError("corpus contains unreadable files:\n" + "\n".join(offenders))
    if count and len(images) < count:
        raise ValueError(
            f"corpus {path} holds {len(images)} usable PGMs, {count} requested"
        )
    return images


def generate_toy_corpus(kind: str, count: int, size: int, seed=0) -> list[np.ndarray]:
    """`kind` is either "piecewise" or a directory of 8-bit PGMs."""
    if kind == "piecewise":
        return piecewise_images(count, size, seed)
    return load_corpus_dir(kind, count, size)
