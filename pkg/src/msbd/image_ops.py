"""Raster geometry: mask-driven cropping, bilinear resampling, tiling, feathered compositing.

Image buffers are numpy arrays shaped (H, W) or (H, W, C), row-major,
channel-last. Masks are 2-D (H, W) arrays with values in [0, 1]; a pixel
belongs to the mask support when its value is > 0.

Resampling is computed in float64 and cast back to the caller's dtype, so
float32 pipelines stay float32 without accumulating per-axis casts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError


@dataclass(frozen=True)
class TileGrid:
    """Overlapping tile rectangles covering an image.

    Offsets advance by ``tile_size - overlap`` per axis; the final offset is
    clamped so the last tile ends exactly at the image edge. Edge tiles are
    shifted, never shrunk, so every rect keeps the working resolution
    (except when the image itself is smaller than ``tile_size`` on an axis).
    """

    tile_size: int
    overlap: int
    rects: tuple[tuple[int, int, int, int], ...]  # (x, y, w, h)


def _axis_offsets(extent: int, tile: int, stride: int) -> tuple[list[int], int]:
    """Offsets and tile size along one axis."""
    if extent <= tile:
        return [0], extent
    offsets = list(range(0, extent - tile + 1, stride))
    if offsets[-1] != extent - tile:
        offsets.append(extent - tile)
    return offsets, tile


def make_tile_grid(width: int, height: int, tile_size: int, overlap: int) -> TileGrid:
    if tile_size <= overlap or overlap < 0:
        raise ValueError(f"need tile_size > overlap >= 0, got {tile_size}, {overlap}")
    if width < 1 or height < 1:
        raise ValueError("empty image")
    stride = tile_size - overlap
    xs, w = _axis_offsets(width, tile_size, stride)
    ys, h = _axis_offsets(height, tile_size, stride)
    rects = tuple((x, y, w, h) for y in ys for x in xs)
    return TileGrid(tile_size=tile_size, overlap=overlap, rects=rects)


def _resample_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Separable bilinear pass along one axis, align-corners-false, edge clamped."""
    in_len = arr.shape[axis]
    if out_len == in_len:
        return arr
    scale = in_len / out_len
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo_c = np.clip(lo, 0, in_len - 1)
    hi_c = np.clip(lo + 1, 0, in_len - 1)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    w = frac.reshape(shape)
    return np.take(arr, lo_c, axis=axis) * (1.0 - w) + np.take(arr, hi_c, axis=axis) * w


def resize_bilinear(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resize to (out_h, out_w); same-size calls return an identical copy."""
    image = np.asarray(image)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dims must be >= 1, got {out_w}x{out_h}")
    if image.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C), got shape {image.shape}")
    if (image.shape[1], image.shape[0]) == (out_w, out_h):
        return image.copy()
    out = _resample_axis(image.astype(np.float64), out_h, axis=0)
    out = _resample_axis(out, out_w, axis=1)
    return out.astype(image.dtype, copy=False)


def low_pass(image: np.ndarray, target_w: int, target_h: int,
             out_w: int | None = None, out_h: int | None = None) -> np.ndarray:
    """Bilinear down to (target_w, target_h), then back up.

    The upsample target defaults to the source size; callers producing a
    band-limited reference at a different working resolution can override
    ``out_w``/``out_h``.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if target_w > w or target_h > h:
        raise ValueError(f"low-pass target {target_w}x{target_h} exceeds source {w}x{h}")
    down = resize_bilinear(image, target_w, target_h)
    return resize_bilinear(down, out_w if out_w is not None else w,
                           out_h if out_h is not None else h)


def crop_square_around_mask(image: np.ndarray, mask: np.ndarray,
                            margin: int) -> tuple[tuple[int, int, int, int], np.ndarray, np.ndarray]:
    """Smallest square around the mask support plus margin, clamped to bounds.

    Returns (rect, cropped image, cropped mask); the crops are copies. The
    square is centered on the margin-expanded bounding box, shifted to stay
    inside the image, and its side is reduced only when the image itself is
    smaller than the requested square.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    ys, xs = np.nonzero(mask > 0)
    if ys.size == 0:
        raise EmptyMaskError("mask has empty support")
    h, w = mask.shape
    x0 = int(xs.min()) - margin
    x1 = int(xs.max()) + margin
    y0 = int(ys.min()) - margin
    y1 = int(ys.max()) + margin
    side = min(max(x1 - x0 + 1, y1 - y0 + 1), w, h)
    x = x0 - (side - (x1 - x0 + 1)) // 2
    y = y0 - (side - (y1 - y0 + 1)) // 2
    x = min(max(x, 0), w - side)
    y = min(max(y, 0), h - side)
    rect = (x, y, side, side)
    return rect, image[y:y + side, x:x + side].copy(), mask[y:y + side, x:x + side].copy()


def _axis_profiles(offsets: list[int], sizes: list[int]) -> list[np.ndarray]:
    """Per-tile 1-D weights: linear 0..1 ramps across shared edges, 1 elsewhere."""
    profiles = []
    n = len(offsets)
    for i in range(n):
        size = sizes[i]
        p = np.ones(size, dtype=np.float64)
        if i > 0:
            ov = min(max(offsets[i - 1] + sizes[i - 1] - offsets[i], 0), size)
            if ov > 0:
                p[:ov] = np.arange(ov, dtype=np.float64) / ov
        if i < n - 1:
            ov = min(max(offsets[i] + size - offsets[i + 1], 0), size)
            if ov > 0:
                p[size - ov:] = np.minimum(p[size - ov:],
                                           (ov - np.arange(ov, dtype=np.float64)) / ov)
        profiles.append(p)
    return profiles


def feather_weights(grid: TileGrid, image_w: int, image_h: int) -> list[np.ndarray]:
    """Per-tile (h, w) float64 weights forming a partition of unity.

    Each tile ramps from 0 to 1 across edges it shares with neighbors and
    stays 1 at true image borders; the per-axis products are then normalized
    by the per-pixel total so covering weights sum to exactly 1.
    """
    xs = sorted({r[0] for r in grid.rects})
    ys = sorted({r[1] for r in grid.rects})
    w_sizes = [next(r[2] for r in grid.rects if r[0] == x) for x in xs]
    h_sizes = [next(r[3] for r in grid.rects if r[1] == y) for y in ys]
    px = dict(zip(xs, _axis_profiles(xs, w_sizes)))
    py = dict(zip(ys, _axis_profiles(ys, h_sizes)))
    raw = [np.outer(py[y], px[x]) for x, y, _, _ in grid.rects]

    total = np.zeros((image_h, image_w), dtype=np.float64)
    for (x, y, w, h), wt in zip(grid.rects, raw):
        total[y:y + h, x:x + w] += wt
    out = []
    for (x, y, w, h), wt in zip(grid.rects, raw):
        out.append(wt / total[y:y + h, x:x + w])
    return out


def cut_tiles(image: np.ndarray, grid: TileGrid) -> list[np.ndarray]:
    """Copies of the image under each grid rect, in grid order."""
    image = np.asarray(image)
    return [image[y:y + h, x:x + w].copy() for x, y, w, h in grid.rects]


def alpha_composite(tiles: list[np.ndarray], grid: TileGrid,
                    weights: list[np.ndarray]) -> np.ndarray:
    """Weighted recombination of tiles onto the full canvas, in grid order."""
    if len(tiles) != len(grid.rects) or len(weights) != len(grid.rects):
        raise ValueError(f"{len(grid.rects)} rects but {len(tiles)} tiles, {len(weights)} weights")
    image_w = max(x + w for x, y, w, h in grid.rects)
    image_h = max(y + h for x, y, w, h in grid.rects)
    first = np.asarray(tiles[0])
    extra = first.shape[2:]
    out = np.zeros((image_h, image_w) + extra, dtype=np.float64)
    for (x, y, w, h), tile, wt in zip(grid.rects, tiles, weights):
        tile = np.asarray(tile)
        if tile.shape[:2] != (h, w) or tile.shape[2:] != extra:
            raise ValueError(f"tile shape {tile.shape} does not match rect {(x, y, w, h)}")
        wt_b = wt if tile.ndim == 2 else wt[:, :, None]
        out[y:y + h, x:x + w] += wt_b * tile
    return out.astype(first.dtype, copy=False)
