"""Datasets: CIFAR-10 binary ingestion, low-resolution simulation, and
synthetic generators for desk-scale experiments.

The synthetic CIFAR-style generator writes files in the exact CIFAR-10
binary batch layout (3073 bytes per record: 1 label byte + 3072 pixel bytes
in C,H,W order), so the loader and everything downstream run the same code
path whether the data is real or generated.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .rng import derived_generator

CIFAR_RECORD_BYTES = 3073
CIFAR_IMAGE_SHAPE = (3, 32, 32)


class DataFormatError(ValueError):
    """Raised when a dataset file does not match the expected binary layout."""


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    label: int | None = None
    keypoint: tuple[float, float] | None = None  # (x, y) in image pixels
    heatmap: np.ndarray | None = None  # (K, h, w) target at the net's output stride


def _read_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES:
        expected = (raw.size // CIFAR_RECORD_BYTES + 1) * CIFAR_RECORD_BYTES
        raise DataFormatError(
            f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD_BYTES} "
            f"(nearest valid sizes: {expected - CIFAR_RECORD_BYTES} or {expected})"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, *CIFAR_IMAGE_SHAPE).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(path: str, split: str) -> list[Sample]:
    """Load CIFAR-10 binary batches from a directory.

    ``split="train"`` reads every ``data_batch_*.bin`` (sorted); ``"test"``
    reads ``test_batch.bin``.  Pixel bytes are scaled to [0, 1].
    """
    if split == "train":
        names = sorted(f for f in os.listdir(path)
                       if f.startswith("data_batch_") and f.endswith(".bin"))
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ValueError(f"unknown split {split!r}")
    if not names:
        raise DataFormatError(f"no CIFAR batch files for split {split!r} in {path}")
    samples: list[Sample] = []
    for name in names:
        images, labels = _read_cifar_file(os.path.join(path, name))
        samples.extend(Sample(image=img, label=int(lab))
                       for img, lab in zip(images, labels))
    return samples


def avg_pool_image(image: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = image.shape
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} not divisible by factor {factor}")
    return image.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def render_heatmap(size: tuple[int, int], center: tuple[float, float],
                   sigma: float = 1.5) -> np.ndarray:
    """2D Gaussian bump, peak 1.0, on an (h, w) grid; center is (x, y)."""
    h, w = size
    ys = np.arange(h, dtype=np.float32)[:, None]
    xs = np.arange(w, dtype=np.float32)[None, :]
    cx, cy = center
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    return np.exp(-d2 / (2.0 * sigma ** 2)).astype(np.float32)


def lowres_transform(sample: Sample, factor: int) -> Sample:
    """Simulate a degraded capture by average-pooling the image by ``factor``.

    Labels are unchanged; keypoints are divided by the factor and the target
    heatmap, when present, is re-rendered at the reduced size.
    """
    if factor == 1:
        return sample
    image = avg_pool_image(sample.image, factor).astype(np.float32)
    keypoint = sample.keypoint
    heatmap = sample.heatmap
    if keypoint is not None:
        keypoint = (keypoint[0] / factor, keypoint[1] / factor)
        if heatmap is not None:
            stride = sample.image.shape[1] // heatmap.shape[1]
            hm_size = (image.shape[1] // stride, image.shape[2] // stride)
            heatmap = render_heatmap(
                hm_size, (keypoint[0] / stride, keypoint[1] / stride)
            )[None]
    return Sample(image=image, label=sample.label, keypoint=keypoint, heatmap=heatmap)


def synth_keypoint_dataset(n: int, size: int, seed: int, *,
                           output_stride: int = 4,
                           sigma: float = 1.5) -> list[Sample]:
    """Bright blob on textured noise; target is a Gaussian heatmap at the
    given output stride.  Fully determined by the seed."""
    if size % 2:
        raise ValueError("size must be even")
    rng = derived_generator(seed, "synth-keypoint")
    hm = size // output_stride
    samples = []
    margin = 3
    for _ in range(n):
        kx = float(rng.uniform(margin, size - 1 - margin))
        ky = float(rng.uniform(margin, size - 1 - margin))
        texture = rng.uniform(0.0, 0.35, size=(3, size, size)).astype(np.float32)
        blob = render_heatmap((size, size), (kx, ky), sigma=2.0)
        image = np.clip(texture + 0.65 * blob[None], 0.0, 1.0).astype(np.float32)
        heatmap = render_heatmap((hm, hm), (kx / output_stride, ky / output_stride),
                                 sigma=sigma)[None]
        samples.append(Sample(image=image, keypoint=(kx, ky), heatmap=heatmap))
    return samples


# 10 distinct 4x4 binary motifs.  Every motif has a bright cell in its first
# and last row and column, so no two are translates of one another and the
# class label stays unambiguous wherever the patch lands.  Upscaled x2 the
# cells survive one round of 2x2 average pooling intact.
_CLASS_MOTIFS = np.array([
    [[1, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 1]],  # corners
    [[1, 1, 1, 1], [1, 0, 0, 1], [1, 0, 0, 1], [1, 1, 1, 1]],  # ring
    [[1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 1, 0], [1, 0, 0, 1]],  # X
    [[0, 1, 1, 0], [1, 1, 1, 1], [1, 1, 1, 1], [0, 1, 1, 0]],  # plus
    [[1, 1, 1, 1], [0, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1]],  # h-bars
    [[1, 0, 0, 1], [1, 0, 0, 1], [1, 0, 0, 1], [1, 0, 0, 1]],  # v-bars
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],  # diagonal
    [[0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],  # anti-diagonal
    [[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1]],  # checker
    [[1, 1, 1, 1], [0, 1, 1, 0], [0, 1, 1, 0], [0, 1, 1, 0]],  # T
], dtype=np.float32)


def synth_class_image(label: int, rng: np.random.Generator, *,
                      size: int = 32, amplitude: float = 0.35,
                      noise: float = 0.5) -> np.ndarray:
    """One synthetic classification image: a small class-specific
    fine-grained patch at a random even-aligned location over a smooth
    background, plus pixel noise.

    The patch renders the class motif at the finest scale that survives one
    2x2 average pool, so after low-res simulation the class evidence sits
    exactly at the resolution limit -- the regime where the choice of
    downsampler matters.
    """
    patch = np.kron(_CLASS_MOTIFS[label], np.ones((2, 2), dtype=np.float32))
    ph = patch.shape[0]
    background = rng.uniform(0.15, 0.55, size=(3, 4, 4)).astype(np.float32)
    background = np.kron(background, np.ones((size // 4, size // 4), dtype=np.float32))
    image = background.copy()
    oy = 2 * int(rng.integers(0, (size - ph) // 2 + 1))
    ox = 2 * int(rng.integers(0, (size - ph) // 2 + 1))
    image[:, oy:oy + ph, ox:ox + ph] += amplitude * patch[None]
    image += rng.uniform(-noise, noise, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def write_synthetic_cifar(path: str, n_train: int, n_test: int, seed: int,
                          **image_kwargs) -> None:
    """Write a class-separable synthetic dataset in CIFAR-10 binary layout."""
    os.makedirs(path, exist_ok=True)

    def write_split(filename: str, n: int, stream: str) -> None:
        rng = derived_generator(seed, "synth-cifar", stream)
        records = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
        for i in range(n):
            label = int(rng.integers(0, 10))
            image = synth_class_image(label, rng, **image_kwargs)
            records[i, 0] = label
            records[i, 1:] = np.round(image * 255.0).astype(np.uint8).reshape(-1)
        records.tofile(os.path.join(path, filename))

    write_split("data_batch_1.bin", n_train, "train")
    write_split("test_batch.bin", n_test, "test")
