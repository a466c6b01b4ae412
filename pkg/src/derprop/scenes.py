"""Synthetic desk-scale scenes and the weak/strong augmentation stack.

Scenes are piecewise-constant class regions (stripes, rectangles, disks)
painted with class-conditioned colors plus Gaussian noise.  Augmentation
seeds are split into a geometry stream and a photometric stream, so the
weak and strong views of the same (scene, seed) share identical geometry
while only the strong view applies color jitter, grayscale, blur, and
optional cut-paste mixing with a partner scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelMap
from .seeding import make_rng


@dataclass(frozen=True)
class SceneParams:
    """Geometry and noise knobs of the generator (class count is separate)."""

    blob_count: int = 6
    noise_sigma: float = 0.25


@dataclass(frozen=True)
class SyntheticScene:
    image: np.ndarray  # (3, H, W) float64
    labels: LabelMap   # classes shaped (H, W)
    seed: int
    params: SceneParams

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def class_palette(c: int) -> np.ndarray:
    """(C, 3) base colors, fixed so class/color pairing is stable across scenes."""
    corners = np.array(
        [
            [0.1, 0.1, 0.1],
            [0.9, 0.2, 0.2],
            [0.2, 0.9, 0.2],
            [0.2, 0.2, 0.9],
            [0.9, 0.9, 0.2],
            [0.9, 0.2, 0.9],
            [0.2, 0.9, 0.9],
            [0.8, 0.5, 0.2],
        ]
    )
    if c <= corners.shape[0]:
        return corners[:c].copy()
    extra = make_rng("palette", c).uniform(0.1, 0.9, size=(c - corners.shape[0], 3))
    return np.vstack([corners, extra])


def generate_synthetic_scene(
    seed: int, h: int, w: int, c: int, params: SceneParams = SceneParams()
) -> SyntheticScene:
    """Deterministic scene: random blobs/stripes over a background class.

    Shapes whose pixel footprint would be empty are re-sampled internally,
    so every drawn blob changes at least one label.
    """
    if h < 4 or w < 4:
        raise ValueError(f"scene must be at least 4x4, got {h}x{w}")
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    rng = make_rng(seed, "scene")
    labels = np.zeros((h, w), dtype=np.int64)
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(params.blob_count):
        cls = int(rng.integers(1, c))
        for _attempt in range(16):
            kind = rng.choice(["rect", "disk", "stripe"])
            if kind == "rect":
                y0 = int(rng.integers(0, h - 1))
                x0 = int(rng.integers(0, w - 1))
                bh = int(rng.integers(2, max(3, h // 2) + 1))
                bw = int(rng.integers(2, max(3, w // 2) + 1))
                region = (ys >= y0) & (ys < y0 + bh) & (xs >= x0) & (xs < x0 + bw)
            elif kind == "disk":
                cy = float(rng.uniform(0, h))
                cx = float(rng.uniform(0, w))
                r = float(rng.uniform(1.5, max(2.0, min(h, w) / 3)))
                region = (ys - cy) ** 2 + (xs - cx) ** 2 <= r**2
            else:
                horizontal = bool(rng.integers(0, 2))
                pos = int(rng.integers(0, (h if horizontal else w) - 1))
                thick = int(rng.integers(2, max(3, (h if horizontal else w) // 4) + 1))
                axis = ys if horizontal else xs
                region = (axis >= pos) & (axis < pos + thick)
            if region.any():
                labels[region] = cls
                break
    palette = class_palette(c)
    image = palette[labels].transpose(2, 0, 1).astype(np.float64)
    if params.noise_sigma > 0:
        image = image + params.noise_sigma * rng.standard_normal(image.shape)
    return SyntheticScene(
        image=image, labels=LabelMap(labels, c), seed=seed, params=params
    )


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    crop_pad: int = 2
    color_prob: float = 0.8
    color_strength: float = 0.2
    gray_prob: float = 0.2
    blur_prob: float = 0.3
    mix_prob: float = 0.3


def _box_blur(image: np.ndarray) -> np.ndarray:
    padded = np.pad(image, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(image)
    for dy in range(3):
        for dx in range(3):
            out += padded[:, dy : dy + image.shape[1], dx : dx + image.shape[2]]
    return out / 9.0


def augment(
    scene: SyntheticScene,
    mode: str,
    seed: int,
    cfg: AugmentConfig = AugmentConfig(),
    partner: SyntheticScene | None = None,
):
    """Augmented view of a scene plus a trace of the applied transforms.

    Geometric transforms (flip, padded crop) are drawn from a stream that
    depends only on ``seed``, so weak and strong calls with the same seed
    are pixel-aligned.  ``mode="strong"`` additionally applies the
    photometric stack to the image only, and pastes a rectangle from
    ``partner`` (labels pasted identically) when mixing triggers.
    Returns ``(scene, trace)``; the trace records flip, crop offset, and
    the mix rectangle so callers can transform teacher maps consistently.
    """
    if mode not in ("weak", "strong"):
        raise ValueError(f"unknown augmentation mode {mode!r}")
    geom = make_rng(seed, "geom")
    photo = make_rng(seed, "photo")
    image = scene.image.copy()
    labels = scene.labels.classes.copy()
    h, w = labels.shape
    trace: dict = {"flip": False, "crop": (0, 0), "mix_rect": None}

    if geom.random() < cfg.flip_prob:
        image = image[:, :, ::-1].copy()
        labels = labels[:, ::-1].copy()
        trace["flip"] = True
    if cfg.crop_pad > 0:
        pad = cfg.crop_pad
        dy = int(geom.integers(0, 2 * pad + 1))
        dx = int(geom.integers(0, 2 * pad + 1))
        image = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
        labels = np.pad(labels, pad, mode="edge")
        image = image[:, dy : dy + h, dx : dx + w].copy()
        labels = labels[dy : dy + h, dx : dx + w].copy()
        trace["crop"] = (dy, dx)

    if mode == "strong":
        if photo.random() < cfg.color_prob:
            a = cfg.color_strength
            scale = photo.uniform(1.0 - a, 1.0 + a, size=(3, 1, 1))
            shift = photo.uniform(-a, a, size=(3, 1, 1))
            image = image * scale + shift
        if photo.random() < cfg.gray_prob:
            image = np.repeat(image.mean(axis=0, keepdims=True), 3, axis=0)
        if photo.random() < cfg.blur_prob:
            image = _box_blur(image)
        if partner is not None and photo.random() < cfg.mix_prob:
            rh = int(photo.integers(h // 4, h // 2 + 1))
            rw = int(photo.integers(w // 4, w // 2 + 1))
            y0 = int(photo.integers(0, h - rh + 1))
            x0 = int(photo.integers(0, w - rw + 1))
            image[:, y0 : y0 + rh, x0 : x0 + rw] = partner.image[:, y0 : y0 + rh, x0 : x0 + rw]
            labels[y0 : y0 + rh, x0 : x0 + rw] = partner.labels.classes[
                y0 : y0 + rh, x0 : x0 + rw
            ]
            trace["mix_rect"] = (y0, x0, rh, rw)

    out = SyntheticScene(
        image=image,
        labels=LabelMap(labels, scene.labels.num_classes),
        seed=scene.seed,
        params=scene.params,
    )
    return out, trace
