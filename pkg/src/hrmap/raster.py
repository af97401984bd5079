"""Vector map elements and their rasterization into local binary masks."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from hrmap.errors import ConfigError
from hrmap.geometry import WindowSpec, as_polyline

N_CATEGORIES = 3
DEFAULT_HALFWIDTH = 0.15
_MARGIN = 1e-6


class Category(enum.IntEnum):
    DIVIDER = 0
    CROSSING = 1
    BOUNDARY = 2

    @property
    def short(self) -> str:
        return ("div", "ped", "bou")[self.value]


class Frame(str, enum.Enum):
    EGO = "ego"
    WORLD = "world"


@dataclass(eq=False)
class MapElement:
    category: Category
    points: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        self.category = Category(self.category)
        self.points = as_polyline(self.points)
        self.confidence = float(self.confidence)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def closed(self) -> bool:
        return len(self.points) > 3 and np.array_equal(self.points[0], self.points[-1])

    def same_as(self, other: "MapElement") -> bool:
        return (
            self.category == other.category
            and self.confidence == other.confidence
            and np.array_equal(self.points, other.points)
        )

    def to_dict(self) -> dict:
        return {
            "category": int(self.category),
            "confidence": self.confidence,
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapElement":
        return cls(Category(d["category"]), np.asarray(d["points"], dtype=np.float64), d.get("confidence", 1.0))


@dataclass(eq=False)
class VectorMap:
    elements: list[MapElement] = field(default_factory=list)
    frame: Frame = Frame.EGO

    def __post_init__(self):
        self.frame = Frame(self.frame)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def of_category(self, category: Category) -> list[MapElement]:
        return [e for e in self.elements if e.category == category]

    def same_as(self, other: "VectorMap") -> bool:
        return (
            self.frame == other.frame
            and len(self.elements) == len(other.elements)
            and all(a.same_as(b) for a, b in zip(self.elements, other.elements))
        )

    def census(self) -> dict[str, int]:
        counts = {c.short: 0 for c in Category}
        for e in self.elements:
            counts[e.category.short] += 1
        return counts

    def to_dict(self) -> dict:
        return {"frame": self.frame.value, "elements": [e.to_dict() for e in self.elements]}

    @classmethod
    def from_dict(cls, d: dict) -> "VectorMap":
        return cls([MapElement.from_dict(e) for e in d["elements"]], Frame(d.get("frame", "ego")))


@dataclass(eq=False)
class LocalMask:
    """H x W x 3 boolean grid over a perception window."""

    window: WindowSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != (self.window.H, self.window.W, N_CATEGORIES):
            raise ValueError(f"mask shape {data.shape} does not match window {self.window.shape}x{N_CATEGORIES}")
        if data.dtype != np.bool_:
            if not np.isin(data, (0, 1)).all():
                raise ValueError("mask values must be 0 or 1")
            data = data.astype(bool)
        self.data = data

    @classmethod
    def zeros(cls, window: WindowSpec) -> "LocalMask":
        return cls(window, np.zeros((window.H, window.W, N_CATEGORIES), dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, LocalMask):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.data, other.data)

    def pack(self) -> bytes:
        return np.packbits(self.data.reshape(-1)).tobytes()

    @classmethod
    def unpack(cls, window: WindowSpec, blob: bytes) -> "LocalMask":
        n = window.H * window.W * N_CATEGORIES
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=n)
        return cls(window, bits.reshape(window.H, window.W, N_CATEGORIES).astype(bool))


# -- rasterization -----------------------------------------------------------


def _segments(points: np.ndarray) -> np.ndarray:
    """(n-1, 4) rows of ax, ay, bx, by."""
    return np.hstack([points[:-1], points[1:]])


def _segment_dist2(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    l2 = dx * dx + dy * dy
    safe = np.where(l2 > 0, l2, 1.0)
    t = np.where(l2 > 0, ((px - ax) * dx + (py - ay) * dy) / safe, 0.0)
    t = np.clip(t, 0.0, 1.0)
    qx = ax + t * dx
    qy = ay + t * dy
    return (px - qx) ** 2 + (py - qy) ** 2


def _points_in_polygon(px, py, poly: np.ndarray) -> np.ndarray:
    """Even-odd crossing test; ``poly`` is closed (first == last)."""
    inside = np.zeros(np.shape(px), dtype=bool)
    for (ax, ay), (bx, by) in zip(poly[:-1], poly[1:]):
        if ay == by:
            continue
        crosses = (ay > py) != (by > py)
        xint = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < xint)
    return inside


def _index_range(lo: float, hi: float, origin: float, res: float, n: int) -> tuple[int, int]:
    a = int(np.floor((lo - origin) / res - 0.5)) - 1
    b = int(np.ceil((hi - origin) / res - 0.5)) + 1
    return max(a, 0), min(b, n - 1)


def _stroke_hits(segs: np.ndarray, window: WindowSpec, halfwidth: float):
    """Candidate cells of every segment and whether each lies within ``halfwidth``.

    Each segment only examines the cells whose centres lie in its bounding box
    grown by the half-width; candidates for all segments are generated at once.
    Returns (segment index, i, j) of the hits.
    """
    res = window.resolution
    lo_x = np.minimum(segs[:, 0], segs[:, 2]) - halfwidth
    hi_x = np.maximum(segs[:, 0], segs[:, 2]) + halfwidth
    lo_y = np.minimum(segs[:, 1], segs[:, 3]) - halfwidth
    hi_y = np.maximum(segs[:, 1], segs[:, 3]) + halfwidth
    # centres inside the grown box, with a small index-space margin against rounding
    i0 = np.maximum(np.ceil((lo_x - window.x_min) / res - 0.5 - _MARGIN).astype(np.int64), 0)
    i1 = np.minimum(np.floor((hi_x - window.x_min) / res - 0.5 + _MARGIN).astype(np.int64), window.H - 1)
    j0 = np.maximum(np.ceil((lo_y - window.y_min) / res - 0.5 - _MARGIN).astype(np.int64), 0)
    j1 = np.minimum(np.floor((hi_y - window.y_min) / res - 0.5 + _MARGIN).astype(np.int64), window.W - 1)
    nj = np.maximum(j1 - j0 + 1, 0)
    counts = np.maximum(i1 - i0 + 1, 0) * nj
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    seg_id = np.repeat(np.arange(len(segs)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total) - starts[seg_id]
    njs = nj[seg_id]
    ii = i0[seg_id] + local // njs
    jj = j0[seg_id] + local % njs
    px = window.x_min + (ii + 0.5) * res
    py = window.y_min + (jj + 0.5) * res
    s = segs[seg_id]
    d2 = _segment_dist2(px, py, s[:, 0], s[:, 1], s[:, 2], s[:, 3])
    hit = d2 <= halfwidth * halfwidth
    return seg_id[hit], ii[hit], jj[hit]


def stroke_cells(points: np.ndarray, window: WindowSpec, halfwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices (i, j) of window cells whose centre lies within ``halfwidth`` of the polyline."""
    _, ii, jj = _stroke_hits(_segments(np.asarray(points, dtype=np.float64)), window, halfwidth)
    return ii, jj


def element_stroke_cells(elements: list, window: WindowSpec, halfwidth: float):
    """Rasterize many elements in one pass.

    Returns (element index, i, j) for every hit, deduplicated per element.
    """
    if not elements:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    segs = np.concatenate([_segments(e.points) for e in elements])
    owner = np.repeat(np.arange(len(elements)), [len(e.points) - 1 for e in elements])
    sid, ii, jj = _stroke_hits(segs, window, halfwidth)
    el = owner[sid]
    code = np.unique((el * window.H + ii) * window.W + jj)
    jj = code % window.W
    rest = code // window.W
    return rest // window.H, rest % window.H, jj


def fill_cells(poly: np.ndarray, window: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    res = window.resolution
    i0, i1 = _index_range(poly[:, 0].min(), poly[:, 0].max(), window.x_min, res, window.H)
    j0, j1 = _index_range(poly[:, 1].min(), poly[:, 1].max(), window.y_min, res, window.W)
    if i1 < i0 or j1 < j0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    px = window.x_min + (ii + 0.5) * res
    py = window.y_min + (jj + 0.5) * res
    inside = _points_in_polygon(px, py, poly)
    return ii[inside], jj[inside]


def _check_args(vm: VectorMap, halfwidth: float):
    if vm.frame != Frame.EGO:
        raise ConfigError("rasterization expects an ego-frame vector map")
    if not halfwidth > 0:
        raise ConfigError("stroke half-width must be positive")


def rasterize_local(
    vm: VectorMap,
    window: WindowSpec | None = None,
    stroke_halfwidth: float = DEFAULT_HALFWIDTH,
    *,
    min_confidence: float = 0.0,
    fill_crossings: bool = False,
) -> LocalMask:
    """Binary per-category mask of an ego-frame vector map.

    A cell is set when its centre is within ``stroke_halfwidth`` of some
    element of that category (point-to-segment distance). Crossings are drawn
    as outlines unless ``fill_crossings`` is set, in which case closed outlines
    are also filled. Elements below ``min_confidence`` are skipped.
    """
    window = window or WindowSpec()
    _check_args(vm, stroke_halfwidth)
    mask = LocalMask.zeros(window)
    kept = [el for el in vm.elements if el.confidence >= min_confidence]
    el_idx, ii, jj = element_stroke_cells(kept, window, stroke_halfwidth)
    cats = np.array([int(el.category) for el in kept], dtype=np.int64)
    if len(el_idx):
        mask.data[ii, jj, cats[el_idx]] = True
    if fill_crossings:
        for el in kept:
            if el.category == Category.CROSSING and el.closed:
                ii, jj = fill_cells(el.points, window)
                mask.data[ii, jj, int(el.category)] = True
    return mask


def rasterize_local_bruteforce(
    vm: VectorMap,
    window: WindowSpec | None = None,
    stroke_halfwidth: float = DEFAULT_HALFWIDTH,
    *,
    min_confidence: float = 0.0,
    fill_crossings: bool = False,
) -> LocalMask:
    """Reference rasterizer: every cell against every segment. Slow; for tests."""
    window = window or WindowSpec()
    _check_args(vm, stroke_halfwidth)
    centers = window.cell_centers()
    px, py = centers[..., 0], centers[..., 1]
    out = np.zeros((window.H, window.W, N_CATEGORIES), dtype=bool)
    lim = stroke_halfwidth * stroke_halfwidth
    for el in vm.elements:
        if el.confidence < min_confidence:
            continue
        c = int(el.category)
        for (ax, ay), (bx, by) in zip(el.points[:-1], el.points[1:]):
            dx, dy = bx - ax, by - ay
            l2 = dx * dx + dy * dy
            if l2 > 0:
                t = np.clip(((px - ax) * dx + (py - ay) * dy) / l2, 0.0, 1.0)
            else:
                t = np.zeros_like(px)
            d2 = (px - (ax + t * dx)) ** 2 + (py - (ay + t * dy)) ** 2
            out[..., c] |= d2 <= lim
        if fill_crossings and el.category == Category.CROSSING and el.closed:
            out[..., c] |= _points_in_polygon(px, py, el.points)
    return LocalMask(window, out)


def mask_to_points(mask: LocalMask) -> list[tuple[tuple[int, int], tuple[int, int, int]]]:
    """Occupied cells in row-major order with their per-category bits."""
    occupied = mask.data.any(axis=2)
    ii, jj = np.nonzero(occupied)
    bits = mask.data[ii, jj].astype(int)
    return [((int(i), int(j)), tuple(int(b) for b in row)) for i, j, row in zip(ii, jj, bits)]
