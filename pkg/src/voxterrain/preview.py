"""Colour-mapped PNG previews of a layer stack.

Colour maps:
  surface_height     blue (low) -> red (high), scaled to the layer's range
  obstacle_density   white (0) -> black (1)
  hard/soft obstacle black hard, pink soft (combined into ``obstacles.png``)
  negative_obstacle  pink
  slope              red (flat) -> blue (steep), 0..pi/4
  roughness          yellow-green (smooth) -> blue (rough), 0..0.05 m^2
Undefined cells and unflagged cells are fully transparent.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict

import numpy as np
from PIL import Image

from .layers import LayerGrid, LayerStack

PINK = (255, 105, 180)
BLACK = (0, 0, 0)


def _ramp(t: np.ndarray, lo_rgb, hi_rgb) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)[..., None]
    lo = np.asarray(lo_rgb, dtype=np.float64)
    hi = np.asarray(hi_rgb, dtype=np.float64)
    return lo + (hi - lo) * t


def _rgba(values: np.ndarray, rgb: np.ndarray, mask: np.ndarray) -> Image.Image:
    out = np.zeros(values.shape + (4,), dtype=np.uint8)
    out[..., :3] = np.round(rgb).astype(np.uint8)
    out[..., 3] = np.where(mask, 255, 0)
    out[~mask, :3] = 0
    # rows along y, top of the image = max y
    return Image.fromarray(np.ascontiguousarray(out.transpose(1, 0, 2)[::-1]), mode="RGBA")


def render_scalar(layer: LayerGrid, lo_rgb, hi_rgb, vmin=None, vmax=None) -> Image.Image:
    v = layer.values.astype(np.float64)
    ok = ~np.isnan(v)
    if vmin is None:
        vmin = float(v[ok].min()) if ok.any() else 0.0
    if vmax is None:
        vmax = float(v[ok].max()) if ok.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    t = np.where(ok, (v - vmin) / span, 0.0)
    return _rgba(v, _ramp(t, lo_rgb, hi_rgb), ok)


def render_obstacles(hard: LayerGrid, soft: LayerGrid) -> Image.Image:
    h = hard.values > 0
    s = soft.values > 0
    rgb = np.zeros(h.shape + (3,))
    rgb[s] = PINK
    rgb[h] = BLACK
    return _rgba(hard.values, rgb, h | s)


def render_flags(layer: LayerGrid, color) -> Image.Image:
    f = layer.values > 0
    rgb = np.zeros(f.shape + (3,))
    rgb[f] = color
    return _rgba(layer.values, rgb, f)


def preview_images(stack: LayerStack) -> Dict[str, Image.Image]:
    return {
        "surface_height": render_scalar(stack.surface_height, (0, 0, 255), (255, 0, 0)),
        "obstacle_density": render_scalar(stack.obstacle_density, (255, 255, 255), BLACK, 0.0, 1.0),
        "obstacles": render_obstacles(stack.hard_obstacle, stack.soft_obstacle),
        "negative_obstacle": render_flags(stack.negative_obstacle, PINK),
        "slope": render_scalar(stack.slope, (255, 0, 0), (0, 0, 255), 0.0, np.pi / 4),
        "roughness": render_scalar(stack.roughness, (154, 205, 50), (0, 0, 255), 0.0, 0.05),
    }


def render_preview(stack: LayerStack, directory) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, img in preview_images(stack).items():
        p = directory / f"{name}.png"
        img.save(p)
        paths[name] = p
    return paths
