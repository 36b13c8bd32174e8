"""Synthetic coloured-texture image datasets, augmentation, and the ICG1 file format.

Each cluster is a flat colour plus a fixed texture (a horizontal, vertical or
diagonal ramp, cycling with the cluster index) plus Gaussian pixel noise.

File layout (little-endian)::

    b"ICG1" | u32 N | u32 C | u32 H | u32 W | u32 K | f32[N*C*H*W] | u32[N]
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"ICG1"
_HEADER = struct.Struct("<4s5I")
TEXTURE_AMPLITUDE = 0.2


def default_palette(k: int) -> np.ndarray:
    """K colours evenly spaced in hue."""
    return np.array([colorsys.hsv_to_rgb(i / k, 0.75, 0.8) for i in range(k)])


@dataclass(frozen=True)
class SyntheticSpec:
    num_clusters: int = 3
    images_per_cluster: int = 100
    image_size: int = 16
    noise_sigma: float = 0.05
    seed: int = 42
    color_centers: tuple[tuple[float, float, float], ...] | None = None
    channels: int = field(default=3, init=False)

    def centers(self) -> np.ndarray:
        if self.color_centers is None:
            return default_palette(self.num_clusters)
        return np.asarray(self.color_centers, dtype=np.float64)

    def validate(self) -> None:
        if self.num_clusters < 2:
            raise ValidationError(f"num_clusters must be >= 2, got {self.num_clusters}")
        if self.images_per_cluster < 1:
            raise ValidationError("images_per_cluster must be positive")
        if self.image_size < 1:
            raise ValidationError("image_size must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be nonnegative")
        centers = self.centers()
        if centers.shape != (self.num_clusters, 3):
            raise ValidationError(f"color_centers must be {self.num_clusters} RGB triples, got shape {centers.shape}")
        if centers.min() < 0 or centers.max() > 1:
            raise ValidationError("color_centers must lie in [0, 1]")
        gap = 4.0 * self.noise_sigma
        for i in range(self.num_clusters):
            for j in range(i + 1, self.num_clusters):
                dist = float(np.linalg.norm(centers[i] - centers[j]))
                if dist == 0.0 or dist < gap:
                    raise ValidationError(
                        f"color centers {i} and {j} are {dist:.4f} apart; separation requires >= 4*noise_sigma = {gap:.4f}"
                    )


@dataclass
class ImageDataset:
    images: np.ndarray  # N×C×H×W float64, values in [0, 1]
    labels: np.ndarray  # N ints in [0, K)
    num_clusters: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.labels) != len(self.images):
            raise ValidationError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_clusters):
            raise ValidationError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageDataset):
            return NotImplemented
        return (
            self.num_clusters == other.num_clusters
            and self.images.shape == other.images.shape
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass
class AugmentedPair:
    view_a: np.ndarray
    view_b: np.ndarray
    indices: np.ndarray


def texture(kind: int, size: int) -> np.ndarray:
    """Zero-mean ramp of peak-to-peak amplitude TEXTURE_AMPLITUDE."""
    ramp = np.linspace(-0.5, 0.5, size)
    if kind % 3 == 0:
        pattern = np.broadcast_to(ramp[None, :], (size, size))
    elif kind % 3 == 1:
        pattern = np.broadcast_to(ramp[:, None], (size, size))
    else:
        pattern = (ramp[:, None] + ramp[None, :]) / 2.0
    return TEXTURE_AMPLITUDE * pattern


def _f32(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def cluster_template(spec: SyntheticSpec, cluster: int) -> np.ndarray:
    """Clean C×H×W image of one cluster, at float32 precision like stored pixels."""
    color = spec.centers()[cluster]
    tex = texture(cluster, spec.image_size)
    return _f32(np.clip(color[:, None, None] + tex[None, :, :], 0.0, 1.0))


def generate_dataset(spec: SyntheticSpec) -> ImageDataset:
    """Draw ``images_per_cluster`` noisy copies of each cluster template.

    Pixels are rounded to float32 precision so the dataset survives a
    write/read round trip bit for bit.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k, m, s = spec.num_clusters, spec.images_per_cluster, spec.image_size
    templates = np.stack([cluster_template(spec, c) for c in range(k)])
    labels = np.repeat(np.arange(k), m)
    noise = rng.normal(0.0, spec.noise_sigma, size=(k * m, 3, s, s)) if spec.noise_sigma > 0 else 0.0
    images = _f32(np.clip(templates[labels] + noise, 0.0, 1.0))
    return ImageDataset(images=images, labels=labels, num_clusters=k)


# augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    crop_min_area: float = 0.6
    flip: bool = True
    noise_sigma: float = 0.02
    jitter: float = 0.2

    @classmethod
    def identity(cls) -> AugmentParams:
        return cls(crop_min_area=1.0, flip=False, noise_sigma=0.0, jitter=0.0)


_OPS = ("crop", "flip", "noise", "jitter")


def _crop_resize(img: np.ndarray, rng: np.random.Generator, min_area: float) -> np.ndarray:
    _, h, w = img.shape
    area = rng.uniform(min_area, 1.0)
    side_h = max(1, min(h, int(round(np.sqrt(area) * h))))
    side_w = max(1, min(w, int(round(np.sqrt(area) * w))))
    top = int(rng.integers(0, h - side_h + 1))
    left = int(rng.integers(0, w - side_w + 1))
    rows = top + (np.arange(h) * side_h) // h
    cols = left + (np.arange(w) * side_w) // w
    return img[:, rows][:, :, cols]


def _apply(op: str, img: np.ndarray, rng: np.random.Generator, p: AugmentParams) -> np.ndarray:
    if op == "crop":
        return _crop_resize(img, rng, p.crop_min_area)
    if op == "flip":
        return img[:, :, ::-1] if p.flip else img
    if op == "noise":
        return img + rng.normal(0.0, p.noise_sigma, size=img.shape) if p.noise_sigma > 0 else img
    shift = rng.uniform(-p.jitter, p.jitter, size=(img.shape[0], 1, 1)) if p.jitter > 0 else 0.0
    return img + shift


def augment_images(
    images: np.ndarray, rng: np.random.Generator, params: AugmentParams = AugmentParams()
) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of every image in ``images``.

    Each view applies one operation drawn uniformly from crop-and-resize,
    horizontal flip, additive noise and per-channel brightness jitter.
    """
    va = np.empty_like(images)
    vb = np.empty_like(images)
    for i, img in enumerate(images):
        for out in (va, vb):
            op = _OPS[int(rng.integers(len(_OPS)))]
            out[i] = np.clip(_apply(op, img, rng, params), 0.0, 1.0)
    return va, vb


def augment(dataset: ImageDataset, seed: int, params: AugmentParams = AugmentParams()) -> AugmentedPair:
    rng = np.random.default_rng(seed)
    va, vb = augment_images(dataset.images, rng, params)
    return AugmentedPair(view_a=va, view_b=vb, indices=np.arange(len(dataset)))


# persistence ------------------------------------------------------------------


def write_dataset(dataset: ImageDataset, path: str | Path) -> None:
    n, c, h, w = dataset.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, c, h, w, dataset.num_clusters))
        fh.write(dataset.images.astype("<f4").tobytes())
        fh.write(dataset.labels.astype("<u4").tobytes())


def read_header(buf: bytes) -> tuple[int, int, int, int, int]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic", offset=0)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", offset=len(buf))
    _, n, c, h, w, k = _HEADER.unpack_from(buf, 0)
    return n, c, h, w, k


def read_dataset(path: str | Path) -> ImageDataset:
    buf = Path(path).read_bytes()
    n, c, h, w, k = read_header(buf)
    pix_end = _HEADER.size + 4 * n * c * h * w
    end = pix_end + 4 * n
    if len(buf) < end:
        raise FormatError(f"truncated file: expected {end} bytes, found {len(buf)}", offset=len(buf))
    if len(buf) > end:
        raise FormatError(f"trailing bytes after labels ({len(buf) - end})", offset=end)
    images = np.frombuffer(buf, dtype="<f4", count=n * c * h * w, offset=_HEADER.size)
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=pix_end).astype(np.int64)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        raise FormatError(f"label out of range: {labels[bad[0]]} >= K={k}", offset=pix_end + 4 * int(bad[0]))
    if not np.isfinite(images).all():
        raise FormatError("non-finite pixel value", offset=_HEADER.size + 4 * int(np.argmin(np.isfinite(images))))
    return ImageDataset(
        images=images.astype(np.float64).reshape(n, c, h, w), labels=labels, num_clusters=k
    )
