"""Pixelization of sensitive image regions.

Downsampling at an integer factor is exact a x a block averaging, upsampling
is nearest neighbour, so each block is replaced by its mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Box, Image

REGION = "region"
WHOLE = "whole"


@dataclass(frozen=True)
class PixelizeConfig:
    factor: int = 8
    mode: str = REGION

    def __post_init__(self):
        if int(self.factor) != self.factor or self.factor < 1:
            raise ValueError("pixelization factor must be an integer >= 1")
        if self.mode not in (REGION, WHOLE):
            raise ValueError(f"mode must be {REGION!r} or {WHOLE!r}")


def _expand(lo: int, hi: int, a: int, limit: int) -> tuple[int, int]:
    """Grow [lo, hi) symmetrically to the next multiple of a, clamped to [0, limit)."""
    need = (-(hi - lo)) % a
    lo -= need // 2
    hi += need - need // 2
    if lo < 0:
        hi, lo = hi - lo, 0
    if hi > limit:
        lo, hi = max(0, lo - (hi - limit)), limit
    return lo, hi


def block_grid(box: Box, a: int, height: int, width: int) -> Box:
    """The aligned block grid covering ``box`` after expansion to multiples of ``a``."""
    r0, c0, r1, c1 = box
    r0, r1 = _expand(r0, r1, a, height)
    c0, c1 = _expand(c0, c1, a, width)
    return r0, c0, r1, c1


def _pixelize_block(px: np.ndarray, a: int) -> np.ndarray:
    """Block-average then nearest-upsample a (C, h, w) array; ragged edge blocks average what they hold."""
    c, h, w = px.shape
    out = np.empty_like(px)
    for r in range(0, h, a):
        for s in range(0, w, a):
            blk = px[:, r:r + a, s:s + a]
            out[:, r:r + a, s:s + a] = blk.mean(axis=(1, 2), keepdims=True)
    return out


def pixelize(image: Image, cfg: PixelizeConfig) -> Image:
    a = int(cfg.factor)
    if a < 1:
        raise ValueError("pixelization factor must be >= 1")
    if a == 1:
        return Image(image.pixels.copy(), image.mask_regions)
    px = image.pixels.copy()
    _, h, w = px.shape
    if cfg.mode == WHOLE:
        boxes = [(0, 0, h, w)]
    else:
        boxes = [block_grid(b, a, h, w) for b in image.mask_regions]
    for r0, c0, r1, c1 in boxes:
        px[:, r0:r1, c0:c1] = _pixelize_block(px[:, r0:r1, c0:c1], a)
    return Image(px, image.mask_regions)


def changed_region_mask(image: Image, cfg: PixelizeConfig) -> np.ndarray:
    """Boolean (H, W) mask of pixels pixelize may modify."""
    _, h, w = image.pixels.shape
    m = np.zeros((h, w), dtype=bool)
    if cfg.factor == 1:
        return m
    if cfg.mode == WHOLE:
        m[:] = True
        return m
    for b in image.mask_regions:
        r0, c0, r1, c1 = block_grid(b, int(cfg.factor), h, w)
        m[r0:r1, c0:c1] = True
    return m
