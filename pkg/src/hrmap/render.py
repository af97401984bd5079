"""PNG export of local masks and global maps, one pixel per cell."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from hrmap.mapstore import GlobalMap
from hrmap.raster import LocalMask


class RenderMode(str, enum.Enum):
    THRESHOLDED = "thresholded"
    EVIDENCE = "evidence"


@dataclass(frozen=True)
class Palette:
    """Per-category colours, blended additively over the background."""

    divider: tuple[int, int, int] = (255, 0, 0)
    crossing: tuple[int, int, int] = (0, 255, 0)
    boundary: tuple[int, int, int] = (0, 0, 255)
    background: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        if len({self.divider, self.crossing, self.boundary}) != 3:
            raise ValueError("category colours must be distinct")

    @property
    def colors(self) -> np.ndarray:
        return np.array([self.divider, self.crossing, self.boundary], dtype=np.int64)


DEFAULT_PALETTE = Palette()


def colorize(channels: np.ndarray, palette: Palette = DEFAULT_PALETTE) -> np.ndarray:
    """RGB image from a (rows, cols, 3) boolean stack.

    Empty cells take the background colour; set cells are the saturating sum
    of their categories' colours.
    """
    on = np.asarray(channels, dtype=bool)
    rgb = np.tensordot(on.astype(np.int64), palette.colors, axes=([-1], [0]))
    empty = ~on.any(axis=-1)
    rgb[empty] = palette.background
    return np.clip(rgb, 0, 255).astype(np.uint8)


def mask_image(mask: LocalMask, palette: Palette = DEFAULT_PALETTE) -> np.ndarray:
    """(H, W, 3) pixel array with ego-forward up and ego-left to the left.

    Cell (i, j) lands on row H-1-i, column W-1-j.
    """
    return colorize(mask.data[::-1, ::-1], palette)


def global_image(gmap: GlobalMap, mode: RenderMode | str = RenderMode.THRESHOLDED, palette: Palette = DEFAULT_PALETTE) -> np.ndarray:
    """Pixel array over the allocated tiles' bounding box; north (+y) up.

    Thresholded mode colours cells whose evidence exceeds ``s_th``. Evidence
    mode draws each channel's 0-255 value as that colour's intensity on black.
    """
    mode = RenderMode(mode)
    if not gmap.tiles:
        return np.array([[palette.background]], dtype=np.uint8)
    dense = gmap.dense()[2]  # (3, ny, nx), row 0 = lowest y
    if mode == RenderMode.THRESHOLDED:
        return colorize(np.moveaxis(dense > gmap.params.s_th, 0, -1)[::-1], palette)
    scaled = np.tensordot(np.moveaxis(dense, 0, -1).astype(np.int64), palette.colors, axes=([-1], [0])) // 255
    return np.clip(scaled[::-1], 0, 255).astype(np.uint8)


def save_png(pixels: np.ndarray, path) -> int:
    """Write an 8-bit RGB PNG; returns its size in bytes."""
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format="PNG", optimize=False)
    return path.stat().st_size


def render_mask(mask: LocalMask, out, palette: Palette = DEFAULT_PALETTE) -> int:
    return save_png(mask_image(mask, palette), out)


def render_global(gmap: GlobalMap, out, mode: RenderMode | str = RenderMode.THRESHOLDED, palette: Palette = DEFAULT_PALETTE) -> int:
    return save_png(global_image(gmap, mode, palette), out)


def render_sequence(masks, out_dir, prefix: str = "frame", palette: Palette = DEFAULT_PALETTE) -> list[Path]:
    """Numbered PNGs (``prefix_00000.png`` ...), one per mask."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, m in enumerate(masks):
        p = out_dir / f"{prefix}_{k:05d}.png"
        render_mask(m, p, palette)
        paths.append(p)
    return paths
