"""Seeded procedural source/target scene generator with a controllable
appearance shift.

Scenes are a two-band background (sky-like backdrop plus a road band)
with randomly placed shapes: rectangles, circles, triangles, and thin
bars. Class masks are exact by construction. The target domain renders
the same scene-family distribution through a configurable appearance
shift (hue rotation, brightness scale, additive noise, texture
frequency), optionally with a skewed class-frequency sampler to exercise
class-balance reweighting. Per-scene RNG streams derive from
(seed, domain, index), so generation order and parallelism cannot change
any output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import DatasetManifest, ManifestEntry, save_manifest
from .ppm import write_ppm
from .tensors import Tensor, save_tensor

# class layout: 0 backdrop, 1 road band, 2 rectangle, 3 circle, 4 triangle, 5 bar
SHAPE_CLASSES = (2, 3, 4, 5)

_PALETTE = np.array(
    [
        [0.45, 0.55, 0.75],  # backdrop
        [0.35, 0.33, 0.30],  # road band
        [0.80, 0.25, 0.20],  # rectangle
        [0.20, 0.65, 0.30],  # circle
        [0.85, 0.75, 0.20],  # triangle
        [0.55, 0.25, 0.65],  # bar
    ]
)

_DOMAIN_CODES = {"source": 0, "target": 1}


@dataclass(frozen=True)
class SceneConfig:
    size: int = 128
    classes: int = 6
    shapes_min: int = 3
    shapes_max: int = 7
    # target-domain appearance shift
    hue_rotation: float = 1.1  # radians around the gray axis
    noise_sigma: float = 0.06
    brightness: float = 0.75
    texture_freq_source: float = 0.06
    texture_freq_target: float = 0.14
    # per-shape-slot class weights (rect, circle, triangle, bar)
    source_shape_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    target_shape_weights: tuple = (0.40, 0.30, 0.20, 0.10)
    seed: int = 0


def _geometry_rng(cfg: SceneConfig, index: int) -> np.random.Generator:
    # shared across domains: a zero shift with matched samplers reproduces
    # the exact same scene in both domains at a given index
    return np.random.default_rng([cfg.seed, 2, index])


def _shift_rng(cfg: SceneConfig, domain: str, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _DOMAIN_CODES[domain], index])


def _hue_rotate(rgb: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of RGB vectors around the (1,1,1) axis."""
    if angle == 0.0:
        return rgb
    axis = np.full(3, 1.0 / np.sqrt(3.0))
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    return rgb @ rot.T


def generate_scene(cfg: SceneConfig, domain: str, index: int):
    """Render one (image, ground-truth mask) pair, deterministic per
    (seed, domain, index)."""
    if domain not in _DOMAIN_CODES:
        raise ValueError(f"domain must be source/target, got {domain!r}")
    rng = _geometry_rng(cfg, index)
    s = cfg.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)

    mask = np.zeros((s, s), dtype=np.uint8)
    road_top = int(rng.uniform(0.55, 0.75) * s)
    mask[road_top:] = 1

    shape_weights = (
        cfg.target_shape_weights if domain == "target" else cfg.source_shape_weights
    )
    weights = np.asarray(shape_weights, dtype=np.float64)
    weights = weights / weights.sum()

    n_shapes = int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))
    for _ in range(n_shapes):
        cls = int(rng.choice(SHAPE_CLASSES, p=weights))
        cx, cy = rng.uniform(0.1 * s, 0.9 * s, size=2)
        if cls == 2:  # rectangle
            hw = rng.uniform(0.05, 0.16) * s
            hh = rng.uniform(0.05, 0.16) * s
            sel = (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)
        elif cls == 3:  # circle
            r = rng.uniform(0.05, 0.15) * s
            sel = (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
        elif cls == 4:  # triangle (axis-aligned isoceles)
            half = rng.uniform(0.06, 0.18) * s
            height = rng.uniform(0.10, 0.25) * s
            dy = yy - (cy - height / 2)
            sel = (dy >= 0) & (dy <= height) & (
                np.abs(xx - cx) <= half * (dy / max(height, 1e-9))
            )
        else:  # thin bar
            length = rng.uniform(0.2, 0.45) * s
            thick = rng.uniform(0.015, 0.035) * s
            if rng.random() < 0.5:
                sel = (np.abs(xx - cx) <= length / 2) & (np.abs(yy - cy) <= thick)
            else:
                sel = (np.abs(yy - cy) <= length / 2) & (np.abs(xx - cx) <= thick)
        mask[sel] = cls

    # base colors with mild per-scene jitter, then class-exact fill
    jitter = rng.normal(0.0, 0.03, size=_PALETTE.shape)
    palette = np.clip(_PALETTE + jitter, 0.05, 0.95)
    img = palette[mask]

    freq = cfg.texture_freq_target if domain == "target" else cfg.texture_freq_source
    phase = rng.uniform(0, 2 * np.pi)
    texture = 0.05 * np.sin(2 * np.pi * freq * (xx + 0.6 * yy) + phase)
    img = img + texture[:, :, None]

    if domain == "target":
        img = _hue_rotate(img, cfg.hue_rotation)
        img = img * cfg.brightness
        if cfg.noise_sigma > 0:
            noise_rng = _shift_rng(cfg, domain, index)
            img = img + noise_rng.normal(0.0, cfg.noise_sigma, size=img.shape)

    img = np.clip(img, 0.0, 1.0)
    return (img * 255).round().astype(np.uint8), mask


def generate_dataset(cfg: SceneConfig, n_source: int, n_target: int, out_dir):
    """Write a full dataset tree plus its manifest; returns the manifest.

    Target ground truth is written but referenced only by target-eval
    entries; target-train entries expose images alone.
    """
    if n_source < 1 or n_target < 1:
        raise ValueError("need at least one image per domain")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    entries = []
    for i in range(n_source):
        img, mask = generate_scene(cfg, "source", i)
        image_rel = f"images/src_{i:04d}.ppm"
        gt_rel = f"masks/src_{i:04d}.ten"
        write_ppm(out_dir / image_rel, img)
        save_tensor(out_dir / gt_rel, Tensor(mask))
        entries.append(
            ManifestEntry(id=f"src_{i:04d}", role="source", image=image_rel, gt=gt_rel)
        )
    for i in range(n_target):
        img, mask = generate_scene(cfg, "target", i)
        image_rel = f"images/tgt_{i:04d}.ppm"
        gt_rel = f"masks/tgt_{i:04d}.ten"
        write_ppm(out_dir / image_rel, img)
        save_tensor(out_dir / gt_rel, Tensor(mask))
        entries.append(
            ManifestEntry(id=f"tgt_{i:04d}", role="target-train", image=image_rel)
        )
    # evaluation section: same target images, ground truth attached
    for i in range(n_target):
        entries.append(
            ManifestEntry(
                id=f"tgt_{i:04d}_eval",
                role="target-eval",
                image=f"images/tgt_{i:04d}.ppm",
                gt=f"masks/tgt_{i:04d}.ten",
            )
        )
    man = DatasetManifest(root=out_dir, entries=entries)
    save_manifest(man, out_dir / "manifest.txt")
    return man
