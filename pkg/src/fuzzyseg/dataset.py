"""Dataset assembly: phantom generation, per-image clustering, disk layout.

A dataset directory holds, for each image index i:

    img_%04d.pgm   8-bit intensity image
    lbl_%04d.pgm   8-bit label map (pixel value = class index)
    mem_%04d.bin   optional cached membership map, shape (c, H, W)

plus ``manifest.txt`` with one ``index seed blur noise`` line per image and
``#`` comment lines carrying the generation settings.  Intensities are
quantized to 8 bits before clustering so an in-memory dataset and its
round-trip through disk agree exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fcm, tensor_io
from .errors import DegenerateClusterError, InvalidInputError
from .pgm import load_labels_pgm, load_pgm, save_labels_pgm, save_pgm
from .phantoms import PhantomConfig, generate_batch


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N, H, W) int64
    memberships: Optional[np.ndarray]  # (N, c, H, W) float64 or None
    seeds: list
    num_classes: int

    def __len__(self):
        return self.images.shape[0]


def quantize(image: np.ndarray) -> np.ndarray:
    """[0, 1] float image to uint8 pixels."""
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(..., H, W) int labels to (..., c, H, W) float32 indicators."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise InvalidInputError(
            f"labels must be in [0, {num_classes - 1}], got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    eye = np.eye(num_classes, dtype=np.float32)
    encoded = eye[labels]  # (..., H, W, c)
    return np.moveaxis(encoded, -1, -3)


def cluster_image(image: np.ndarray, config: fcm.FcmConfig) -> np.ndarray:
    """Membership map (c, H, W) for one image, clusters sorted by centroid.

    Because phantom class means increase with class index and the clustering
    sorts its rows by ascending centroid, row k of the result lines up with
    class k.
    """
    result = fcm.run(np.asarray(image, dtype=np.float64).ravel(), config)
    return result.memberships.reshape(config.num_clusters, *image.shape)


def build_dataset(config: PhantomConfig, count: int, seed: int,
                  fcm_config: Optional[fcm.FcmConfig] = None,
                  with_memberships: bool = True) -> Dataset:
    """Generate ``count`` phantoms and optionally cluster each one."""
    config.validate()
    phantoms = generate_batch(config, count, seed)
    images = np.stack([quantize(p.image).astype(np.float64) / 255.0 for p in phantoms])
    labels = np.stack([p.labels for p in phantoms])
    memberships = None
    if with_memberships:
        if fcm_config is None:
            fcm_config = fcm.FcmConfig(num_clusters=config.num_classes)
        if fcm_config.num_clusters != config.num_classes:
            raise InvalidInputError(
                f"clustering uses {fcm_config.num_clusters} clusters but the "
                f"dataset has {config.num_classes} classes"
            )
        maps = []
        for i, image in enumerate(images):
            try:
                maps.append(cluster_image(image, fcm_config))
            except DegenerateClusterError as exc:
                raise DegenerateClusterError(f"image {i}: {exc}") from exc
        memberships = np.stack(maps)
    return Dataset(images=images, labels=labels, memberships=memberships,
                   seeds=[p.seed for p in phantoms], num_classes=config.num_classes)


def save_dataset(root, dataset: Dataset, config: PhantomConfig) -> None:
    os.makedirs(root, exist_ok=True)
    lines = [
        "# phantom dataset",
        f"# size={config.size} num_classes={config.num_classes} count={len(dataset)}",
        "# columns: index seed blur noise",
    ]
    for i in range(len(dataset)):
        save_pgm(os.path.join(root, f"img_{i:04d}.pgm"), dataset.images[i])
        save_labels_pgm(os.path.join(root, f"lbl_{i:04d}.pgm"), dataset.labels[i])
        if dataset.memberships is not None:
            tensor_io.save_array(os.path.join(root, f"mem_{i:04d}.bin"),
                                 dataset.memberships[i])
        lines.append(
            f"{i} {dataset.seeds[i]} {config.blur_sigma!r} {config.noise_sigma!r}"
        )
    with open(os.path.join(root, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(root) -> Dataset:
    manifest = os.path.join(root, "manifest.txt")
    if not os.path.isfile(manifest):
        raise InvalidInputError(f"{root}: missing manifest.txt")
    rows = []
    num_classes = None
    with open(manifest, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("num_classes="):
                        num_classes = int(token.split("=", 1)[1])
                continue
            if line:
                rows.append(line.split())
    if not rows:
        raise InvalidInputError(f"{manifest}: no image entries")
    if num_classes is None:
        raise InvalidInputError(f"{manifest}: missing num_classes setting")
    images, labels, maps, seeds = [], [], [], []
    for row in rows:
        index = int(row[0])
        seeds.append(int(row[1]))
        images.append(load_pgm(os.path.join(root, f"img_{index:04d}.pgm")))
        labels.append(load_labels_pgm(os.path.join(root, f"lbl_{index:04d}.pgm")))
        mem_path = os.path.join(root, f"mem_{index:04d}.bin")
        if os.path.isfile(mem_path):
            maps.append(tensor_io.load_array(mem_path))
    if maps and len(maps) != len(rows):
        raise InvalidInputError(
            f"{root}: {len(maps)} membership files for {len(rows)} images"
        )
    return Dataset(
        images=np.stack(images),
        labels=np.stack(labels),
        memberships=np.stack(maps) if maps else None,
        seeds=seeds,
        num_classes=num_classes,
    )


def split_dataset(dataset: Dataset, fraction: float, seed: int):
    """Shuffled (train, val) split; ``fraction`` is the training share.

    ``fraction=1.0`` is the explicit way to request an empty validation side;
    any other fraction whose rounding would empty a side is an error.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError(f"split fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * fraction))
    if cut == 0 or (cut == n and fraction != 1.0):
        raise InvalidInputError(
            f"split fraction {fraction} leaves an empty side for {n} images"
        )
    def take(idx):
        return Dataset(
            images=dataset.images[idx],
            labels=dataset.labels[idx],
            memberships=None if dataset.memberships is None else dataset.memberships[idx],
            seeds=[dataset.seeds[i] for i in idx],
            num_classes=dataset.num_classes,
        )
    return take(order[:cut]), take(order[cut:])
