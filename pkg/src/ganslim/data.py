"""Synthetic unpaired image-translation tasks plus image-folder ingestion.

Each task draws two disjoint sets of procedural content images and applies a
fixed, deterministic style transform to the second set, so a small generator
can genuinely learn the X -> Y translation. Everything is bit-reproducible
from the TaskSpec alone.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "TaskSpec",
    "batch_stream",
    "dataset_fingerprint",
    "eval_split",
    "load_image_folder",
    "make_task",
    "train_teacher",
]

TASK_TAGS = ("hue-rotate", "edge-stylize", "texture-swap")


@dataclass(frozen=True)
class TaskSpec:
    """Recipe for one unpaired translation dataset pair."""

    tag: str = "hue-rotate"
    image_size: int = 32
    n_per_domain: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.tag not in TASK_TAGS:
            raise ValueError(f"unknown task tag {self.tag!r}; choose from {TASK_TAGS}")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.n_per_domain < 1:
            raise ValueError("n_per_domain must be positive")


def _palette_color(rng: np.random.Generator) -> np.ndarray:
    """Warm-biased colors: without the bias, the hue rotation style would leave
    the color distribution unchanged and the translation task would be vacuous."""
    return np.array(
        [rng.uniform(0.2, 0.95), rng.uniform(-0.35, 0.45), rng.uniform(-0.95, -0.25)],
        dtype=np.float32,
    ).reshape(3, 1, 1)


def _content_images(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Smooth gradient backgrounds with a few colored blobs, in [-1, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    imgs = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        theta = rng.uniform(0, 2 * math.pi)
        ramp = (math.cos(theta) * xx + math.sin(theta) * yy)[None]
        c0 = _palette_color(rng)
        c1 = _palette_color(rng)
        img = c0 + (c1 - c0) * ramp
        for _ in range(int(rng.integers(2, 5))):
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            rad = rng.uniform(0.08, 0.3)
            color = _palette_color(rng) * rng.uniform(0.4, 1.0)
            bump = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rad**2)))[None]
            img = img + color * bump.astype(np.float32)
        imgs[i] = img
    return np.clip(imgs, -1.0, 1.0)


def _hue_rotation_matrix(angle_deg: float = 120.0) -> np.ndarray:
    """Rotation of RGB space about the gray axis."""
    a = math.radians(angle_deg)
    axis = np.ones(3) / math.sqrt(3.0)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    rot = np.eye(3) + math.sin(a) * k + (1 - math.cos(a)) * (k @ k)
    return rot.astype(np.float32)


def _box_blur3(imgs: np.ndarray) -> np.ndarray:
    pad = np.pad(imgs, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(imgs)
    for dy in range(3):
        for dx in range(3):
            out += pad[:, :, dy : dy + imgs.shape[2], dx : dx + imgs.shape[3]]
    return out / 9.0


def _stylize(tag: str, imgs: np.ndarray) -> np.ndarray:
    if tag == "hue-rotate":
        rot = _hue_rotation_matrix()
        out = np.einsum("ij,njhw->nihw", rot, imgs)
    elif tag == "edge-stylize":
        # comic-like look: flattened color regions plus emphasized edges
        out = np.round(imgs * 2.0) / 2.0 + 3.0 * (imgs - _box_blur3(imgs))
    elif tag == "texture-swap":
        size = imgs.shape[-1]
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
        stripes = np.sin((xx + yy) * (2 * math.pi / 8.0)).astype(np.float32)
        out = imgs * (0.7 + 0.3 * stripes)[None, None]
    else:
        raise ValueError(f"unknown task tag {tag!r}")
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def make_task(spec: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Two unpaired domains: X is raw content, Y is different content with the
    task's style applied. float32, shape (n, 3, size, size), range [-1, 1]."""
    rng_x = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0])))
    rng_y = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 1])))
    x = _content_images(rng_x, spec.n_per_domain, spec.image_size)
    y = _stylize(spec.tag, _content_images(rng_y, spec.n_per_domain, spec.image_size))
    return x, y


def eval_split(spec: TaskSpec, n: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Held-out domains drawn from a disjoint seed stream of the same task."""
    return make_task(replace(spec, n_per_domain=n, seed=spec.seed + 7919))


def dataset_fingerprint(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def batch_stream(dataset: np.ndarray, batch_size: int, seed: int = 0):
    """Endless shuffled batches; every sample appears once per epoch pass.

    This iterator is the hand-off point between data preparation and the
    training loop; the loop pulls batches one at a time and owns all state.
    """
    n = dataset.shape[0]
    rng = np.random.Generator(np.random.PCG64(seed))
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield dataset[order[start : start + batch_size]]


def load_image_folder(
    path, size: int = 32, center_crop: bool = True
) -> tuple[np.ndarray, dict]:
    """Ingest a folder of raster images: resize/crop to `size`, scale to [-1, 1].

    Returns the array and a manifest with per-image content hashes.
    """
    from PIL import Image

    files = sorted(
        f for f in os.listdir(path)
        if f.lower().endswith((".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"))
    )
    if not files:
        raise FileNotFoundError(f"no raster images in {path}")
    imgs, entries = [], []
    for f in files:
        full = os.path.join(path, f)
        with open(full, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        im = Image.open(full).convert("RGB")
        if center_crop:
            short = min(im.size)
            left = (im.width - short) // 2
            top = (im.height - short) // 2
            im = im.crop((left, top, left + short, top + short))
        im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 127.5 - 1.0
        imgs.append(arr)
        entries.append({"file": f, "sha256": digest})
    manifest = {"size": size, "center_crop": center_crop, "images": entries}
    return np.stack(imgs), manifest


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def train_teacher(task: TaskSpec, arch: str = "desk-teacher-32", budget: int = 2000,
                  seed: int = 0, out_path="teacher.ckpt", batch_size: int = 8):
    """Train the dense full-precision teacher on the task and checkpoint it.

    Thin wrapper over the training engine; see ganslim.engine.train_teacher.
    """
    from .engine import train_teacher as _train

    return _train(task, arch=arch, budget=budget, seed=seed, out_path=out_path,
                  batch_size=batch_size)
