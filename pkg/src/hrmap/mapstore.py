"""Sparse tiled global evidence map.

Each tile holds ``tile_size x tile_size`` cells for three categories as
``uint8`` evidence, laid out ``[channel, row, column]`` where rows follow the
global y index and columns the global x index. Tiles are allocated the first
time an update touches them; reads never allocate.

Concurrency: one writer at a time. ``update`` and ``merge`` must be serialized
by the caller; ``retrieve``, ``memory_stats`` and ``save`` may run concurrently
with each other but not with a writer.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hrmap.errors import ConfigError, MapFormatError
from hrmap.geometry import GridSpec, Pose2, WindowSpec, metric_to_cells, transform_points
from hrmap.raster import N_CATEGORIES, LocalMask

MAGIC = b"HRMP"
VERSION = 1
HEADER = struct.Struct("<4sHHdddIBBBBQ")
TILE_KEY = struct.Struct("<ii")
CRC = struct.Struct("<I")
DEFAULT_TILE_SIZE = 256


@dataclass(frozen=True)
class UpdateParams:
    s_plus: int = 30
    s_minus: int = 1
    s_th: int = 0

    def __post_init__(self):
        for name in ("s_plus", "s_minus", "s_th"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v <= 255:
                raise ConfigError(f"{name} must be an integer in [0, 255], got {v}")
            object.__setattr__(self, name, int(v))
        if self.s_plus <= 0:
            raise ConfigError("s_plus must be positive")
        if self.s_plus <= self.s_th:
            raise ConfigError("s_plus must exceed s_th or a single observation can never surface")

    def to_dict(self) -> dict:
        return {"s_plus": self.s_plus, "s_minus": self.s_minus, "s_th": self.s_th}


@dataclass(frozen=True)
class MemoryStats:
    allocated_tiles: int
    stored_bytes: int
    index_bytes: int
    visited_extent: float  # m^2, bounding box of allocated tiles
    tile_size: int

    def to_dict(self) -> dict:
        return {
            "allocated_tiles": self.allocated_tiles,
            "stored_bytes": self.stored_bytes,
            "index_bytes": self.index_bytes,
            "visited_extent_m2": self.visited_extent,
            "tile_size": self.tile_size,
        }


@dataclass(eq=False)
class GlobalMap:
    grid: GridSpec = field(default_factory=GridSpec)
    tile_size: int = DEFAULT_TILE_SIZE
    params: UpdateParams = field(default_factory=UpdateParams)
    tiles: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.tile_size) != self.tile_size or self.tile_size <= 0:
            raise ConfigError("tile_size must be a positive integer")
        self.tile_size = int(self.tile_size)

    channels = N_CATEGORIES

    # -- raw cell access ----------------------------------------------------

    def _new_tile(self) -> np.ndarray:
        return np.zeros((N_CATEGORIES, self.tile_size, self.tile_size), dtype=np.uint8)

    def read_cells(self, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        """Evidence at global cells, shape ``gx.shape + (3,)``. Unallocated reads as 0."""
        gx = np.asarray(gx, dtype=np.int64)
        gy = np.asarray(gy, dtype=np.int64)
        out = np.zeros(gx.shape + (N_CATEGORIES,), dtype=np.uint8)
        if not self.tiles or gx.size == 0:
            return out
        x0, x1 = int(gx.min()), int(gx.max())
        y0, y1 = int(gy.min()), int(gy.max())
        if (x1 - x0 + 1) * (y1 - y0 + 1) <= max(4 * gx.size, 1 << 16):
            block = self._read_block(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
            return np.moveaxis(block[:, gy - y0, gx - x0], 0, -1)
        T = self.tile_size
        tx, lx = np.divmod(gx, T)
        ty, ly = np.divmod(gy, T)
        keys = np.unique(np.stack([tx.ravel(), ty.ravel()], axis=1), axis=0)
        for kx, ky in keys.tolist():
            tile = self.tiles.get((kx, ky))
            if tile is None:
                continue
            sel = (tx == kx) & (ty == ky)
            out[sel] = tile[:, ly[sel], lx[sel]].T
        return out

    def _read_block(self, gx0: int, gy0: int, nx: int, ny: int) -> np.ndarray:
        """Dense (3, ny, nx) copy of the block whose lower corner is (gx0, gy0)."""
        T = self.tile_size
        block = np.zeros((N_CATEGORIES, ny, nx), dtype=np.uint8)
        for kx in range(gx0 // T, (gx0 + nx - 1) // T + 1):
            for ky in range(gy0 // T, (gy0 + ny - 1) // T + 1):
                tile = self.tiles.get((kx, ky))
                if tile is None:
                    continue
                x0, x1 = max(gx0, kx * T), min(gx0 + nx, (kx + 1) * T)
                y0, y1 = max(gy0, ky * T), min(gy0 + ny, (ky + 1) * T)
                block[:, y0 - gy0 : y1 - gy0, x0 - gx0 : x1 - gx0] = tile[:, y0 - ky * T : y1 - ky * T, x0 - kx * T : x1 - kx * T]
        return block

    def _write_block(self, gx0: int, gy0: int, block: np.ndarray, touched: np.ndarray) -> None:
        T = self.tile_size
        _, ny, nx = block.shape
        for kx in range(gx0 // T, (gx0 + nx - 1) // T + 1):
            for ky in range(gy0 // T, (gy0 + ny - 1) // T + 1):
                x0, x1 = max(gx0, kx * T), min(gx0 + nx, (kx + 1) * T)
                y0, y1 = max(gy0, ky * T), min(gy0 + ny, (ky + 1) * T)
                bsl = (slice(y0 - gy0, y1 - gy0), slice(x0 - gx0, x1 - gx0))
                if not touched[bsl].any():
                    continue
                tile = self.tiles.get((kx, ky))
                if tile is None:
                    tile = self.tiles[(kx, ky)] = self._new_tile()
                tile[:, y0 - ky * T : y1 - ky * T, x0 - kx * T : x1 - kx * T] = block[(slice(None),) + bsl]

    # -- evidence update / retrieval -----------------------------------------

    def _check_resolution(self, window: WindowSpec) -> None:
        if not math.isclose(window.resolution, self.grid.resolution, rel_tol=0, abs_tol=1e-12):
            raise ConfigError(
                f"window resolution {window.resolution} differs from map resolution {self.grid.resolution}"
            )

    def footprint(self, pose: Pose2, window: WindowSpec):
        """Global cells whose centres fall inside the window at ``pose``.

        Returns ``(gx0, gy0, inside, i, j)``: the lower corner of the scanned
        block, a (ny, nx) boolean of cells inside the window, and the local
        indices each block cell maps to.
        """
        res = self.grid.resolution
        ox, oy = self.grid.origin
        corners = transform_points(pose, window.corners())
        gx0 = math.floor((corners[:, 0].min() - ox) / res) - 1
        gx1 = math.ceil((corners[:, 0].max() - ox) / res) + 1
        gy0 = math.floor((corners[:, 1].min() - oy) / res) - 1
        gy1 = math.ceil((corners[:, 1].max() - oy) / res) + 1
        dx = ox + np.arange(gx0, gx1 + 1) * res - pose.x
        dy = oy + np.arange(gy0, gy1 + 1) * res - pose.y
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        # the inverse rotation is separable over block rows and columns
        lx = (c * dx)[None, :] + (s * dy)[:, None]
        ly = (-s * dx)[None, :] + (c * dy)[:, None]
        i, j = window.metric_to_index(lx, ly)
        inside = (i >= 0) & (i < window.H) & (j >= 0) & (j < window.W)
        return gx0, gy0, inside, i, j

    def _luts(self) -> tuple[np.ndarray, np.ndarray]:
        # saturating add/subtract as 256-entry lookup tables
        levels = np.arange(256, dtype=np.int16)
        up = np.minimum(levels + self.params.s_plus, 255).astype(np.uint8)
        down = np.maximum(levels - self.params.s_minus, 0).astype(np.uint8)
        return up, down

    def update(self, mask: LocalMask, pose: Pose2) -> tuple[np.ndarray, np.ndarray]:
        """Fold one local mask into the map at ``pose``.

        Every global cell whose centre maps into the window is visited exactly
        once: +s_plus where the mask bit is set, -s_minus where it is clear,
        saturating to [0, 255]. Returns the (gx, gy) indices that were touched.
        """
        window = mask.window
        self._check_resolution(window)
        if not pose.is_finite():
            raise ConfigError("pose must be finite")
        gx0, gy0, inside, i, j = self.footprint(pose, window)
        ny, nx = inside.shape
        block = self._read_block(gx0, gy0, nx, ny)
        cells = np.flatnonzero(inside)
        d = mask.data
        code = (d[..., 0] | (d[..., 1] << 1) | (d[..., 2] << 2)).astype(np.uint8)  # channel bits per local cell
        bits = code[i.ravel()[cells], j.ravel()[cells]]
        up, down = self._luts()
        flat = block.reshape(N_CATEGORIES, -1)
        for c in range(N_CATEGORIES):
            v = flat[c, cells]
            flat[c, cells] = np.where((bits >> c) & 1 == 1, up[v], down[v])
        self._write_block(gx0, gy0, block, inside)
        ry, rx = np.nonzero(inside)
        return rx + gx0, ry + gy0

    def global_cells_for(self, pose: Pose2, window: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
        """Global cell under each local cell centre, shapes (H, W)."""
        centers = transform_points(pose, _window_centers(window))
        return metric_to_cells(centers, self.grid)

    def retrieve_values(self, pose: Pose2, window: WindowSpec) -> np.ndarray:
        self._check_resolution(window)
        gx, gy = self.global_cells_for(pose, window)
        return self.read_cells(gx, gy)

    def retrieve(self, pose: Pose2, window: WindowSpec | None = None) -> LocalMask:
        """Local mask at ``pose``: a bit is set iff the stored evidence exceeds ``s_th``."""
        window = window or WindowSpec(resolution=self.grid.resolution)
        values = self.retrieve_values(pose, window)
        return LocalMask(window, values > self.params.s_th)

    # -- bookkeeping ----------------------------------------------------------

    def memory_stats(self) -> MemoryStats:
        n = len(self.tiles)
        T = self.tile_size
        extent = 0.0
        if n:
            kx = [k[0] for k in self.tiles]
            ky = [k[1] for k in self.tiles]
            side = T * self.grid.resolution
            extent = (max(kx) - min(kx) + 1) * (max(ky) - min(ky) + 1) * side * side
        return MemoryStats(
            allocated_tiles=n,
            stored_bytes=n * T * T * N_CATEGORIES,
            index_bytes=HEADER.size + CRC.size + n * TILE_KEY.size,
            visited_extent=extent,
            tile_size=T,
        )

    def nonzero_counts(self) -> list[int]:
        counts = [0] * N_CATEGORIES
        for tile in self.tiles.values():
            for c in range(N_CATEGORIES):
                counts[c] += int(np.count_nonzero(tile[c]))
        return counts

    def tile_bounds(self) -> tuple[int, int, int, int] | None:
        """(min_tx, min_ty, max_tx, max_ty) of allocated tiles."""
        if not self.tiles:
            return None
        kx = [k[0] for k in self.tiles]
        ky = [k[1] for k in self.tiles]
        return min(kx), min(ky), max(kx), max(ky)

    def dense(self) -> tuple[int, int, np.ndarray]:
        """(gx0, gy0, values[3, ny, nx]) covering every allocated tile."""
        b = self.tile_bounds()
        if b is None:
            return 0, 0, np.zeros((N_CATEGORIES, 0, 0), dtype=np.uint8)
        T = self.tile_size
        gx0, gy0 = b[0] * T, b[1] * T
        return gx0, gy0, self._read_block(gx0, gy0, (b[2] - b[0] + 1) * T, (b[3] - b[1] + 1) * T)

    def same_as(self, other: "GlobalMap") -> bool:
        return (
            self.grid == other.grid
            and self.tile_size == other.tile_size
            and self.params == other.params
            and self.tiles.keys() == other.tiles.keys()
            and all(np.array_equal(t, other.tiles[k]) for k, t in self.tiles.items())
        )

    def copy(self) -> "GlobalMap":
        return GlobalMap(self.grid, self.tile_size, self.params, {k: t.copy() for k, t in self.tiles.items()})

    # -- persistence ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        p = self.params
        parts = [
            HEADER.pack(
                MAGIC,
                VERSION,
                0,
                self.grid.resolution,
                self.grid.origin.x,
                self.grid.origin.y,
                self.tile_size,
                N_CATEGORIES,
                p.s_plus,
                p.s_minus,
                p.s_th,
                len(self.tiles),
            )
        ]
        for kx, ky in sorted(self.tiles, key=lambda k: (k[1], k[0])):
            parts.append(TILE_KEY.pack(kx, ky))
            parts.append(np.ascontiguousarray(self.tiles[(kx, ky)]).tobytes())
        body = b"".join(parts)
        return body + CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "GlobalMap":
        if len(buf) < 4 or buf[:4] != MAGIC:
            raise MapFormatError("bad magic")
        if len(buf) < HEADER.size + CRC.size:
            raise MapFormatError("truncated header")
        (_, version, _reserved, res, ox, oy, tile_size, channels, s_plus, s_minus, s_th, count) = HEADER.unpack_from(buf)
        if version != VERSION:
            raise MapFormatError(f"unsupported version {version}")
        if channels != N_CATEGORIES:
            raise MapFormatError(f"unsupported channel count {channels}")
        if tile_size == 0 or not (res > 0 and math.isfinite(res)):
            raise MapFormatError("invalid grid header")
        payload = tile_size * tile_size * channels
        expected = HEADER.size + count * (TILE_KEY.size + payload) + CRC.size
        if len(buf) < expected:
            raise MapFormatError("truncated payload")
        if len(buf) > expected:
            raise MapFormatError("trailing bytes after CRC")
        body = buf[:-CRC.size]
        (crc,) = CRC.unpack_from(buf, len(body))
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise MapFormatError("crc mismatch")
        try:
            params = UpdateParams(s_plus, s_minus, s_th)
            grid = GridSpec((ox, oy), res)
        except ConfigError as exc:
            raise MapFormatError(f"invalid header: {exc}") from exc
        tiles: dict[tuple[int, int], np.ndarray] = {}
        offset = HEADER.size
        prev = None
        for _ in range(count):
            kx, ky = TILE_KEY.unpack_from(buf, offset)
            offset += TILE_KEY.size
            key = (ky, kx)
            if prev is not None:
                if key == prev:
                    raise MapFormatError(f"duplicate tile index ({kx}, {ky})")
                if key < prev:
                    raise MapFormatError(f"tile index ({kx}, {ky}) out of order")
            prev = key
            tile = np.frombuffer(buf, dtype=np.uint8, count=payload, offset=offset)
            tiles[(kx, ky)] = tile.reshape(channels, tile_size, tile_size).copy()
            offset += payload
        return cls(grid, tile_size, params, tiles)


_CENTER_CACHE: dict[WindowSpec, np.ndarray] = {}


def _window_centers(window: WindowSpec) -> np.ndarray:
    c = _CENTER_CACHE.get(window)
    if c is None:
        c = _CENTER_CACHE[window] = window.cell_centers()
        c.setflags(write=False)
    return c


def update(gmap: GlobalMap, mask: LocalMask, pose: Pose2):
    return gmap.update(mask, pose)


def retrieve(gmap: GlobalMap, pose: Pose2, window: WindowSpec | None = None) -> LocalMask:
    return gmap.retrieve(pose, window)


def memory_stats(gmap: GlobalMap) -> MemoryStats:
    return gmap.memory_stats()


def save(gmap: GlobalMap, path) -> int:
    data = gmap.to_bytes()
    Path(path).write_bytes(data)
    return len(data)


def load(path) -> GlobalMap:
    return GlobalMap.from_bytes(Path(path).read_bytes())


def merge(dst: GlobalMap, src: GlobalMap) -> None:
    """Saturating per-cell sum of evidence, ``src`` folded into ``dst``."""
    if dst.grid != src.grid or dst.tile_size != src.tile_size:
        raise ConfigError("cannot merge maps with different grids or tile sizes")
    for key, tile in src.tiles.items():
        mine = dst.tiles.get(key)
        if mine is None:
            dst.tiles[key] = tile.copy()
        else:
            dst.tiles[key] = np.minimum(mine.astype(np.uint16) + tile, 255).astype(np.uint8)
