"""Synthetic Manhattan-grid worlds.

Streets run along x and y. Every street segment between two intersections
carries a boundary on each side, lane dividers between its lanes, and
(optionally) a crosswalk outline at each end just outside the intersection.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from hrmap.errors import ConfigError
from hrmap.raster import Category, Frame, MapElement, VectorMap
from hrmap.rng import Xoshiro256

WORLD_VERSION = 1


@dataclass(frozen=True)
class WorldParams:
    blocks_x: int = 3
    blocks_y: int = 3
    block_size: float = 60.0
    block_jitter: float = 5.0
    road_width: float = 14.0
    lanes_per_direction: int = 2
    crossing_depth: float = 4.0
    crossing_prob: float = 0.8
    margin: float = 20.0
    vertex_spacing: float = 2.0

    def __post_init__(self):
        if self.blocks_x < 0 or self.blocks_y < 0:
            raise ConfigError("block counts must be non-negative")
        if self.block_size <= 2 * self.block_jitter + 2 * self.crossing_depth:
            raise ConfigError("block_size too small for its jitter and crossings")
        if self.road_width <= 0 or self.lanes_per_direction < 1:
            raise ConfigError("road_width and lanes_per_direction must be positive")
        if not 0.0 <= self.crossing_prob <= 1.0:
            raise ConfigError("crossing_prob must be in [0, 1]")
        if self.vertex_spacing <= 0:
            raise ConfigError("vertex_spacing must be positive")

    @property
    def lane_width(self) -> float:
        return self.road_width / (2 * self.lanes_per_direction)

    @classmethod
    def from_dict(cls, d: dict | None) -> "WorldParams":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world params: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class World:
    gt_map: VectorMap
    extent: tuple[float, float]
    seed: int
    params: WorldParams = field(default_factory=WorldParams)
    street_x: tuple[float, ...] = ()
    street_y: tuple[float, ...] = ()

    def __post_init__(self):
        self._bbox = np.array(
            [[*e.points.min(axis=0), *e.points.max(axis=0)] for e in self.gt_map.elements]
        ).reshape(-1, 4)

    @property
    def element_bboxes(self) -> np.ndarray:
        """(n, 4) rows of xmin, ymin, xmax, ymax."""
        return self._bbox

    def census(self) -> dict[str, int]:
        return self.gt_map.census()

    def to_dict(self) -> dict:
        return {
            "version": WORLD_VERSION,
            "seed": self.seed,
            "extent": list(self.extent),
            "params": asdict(self.params),
            "street_x": list(self.street_x),
            "street_y": list(self.street_y),
            "elements": [e.to_dict() for e in self.gt_map.elements],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        if d.get("version") != WORLD_VERSION:
            raise ConfigError(f"unsupported world version {d.get('version')}")
        elements = [MapElement.from_dict(e) for e in d["elements"]]
        return cls(
            VectorMap(elements, Frame.WORLD),
            tuple(d["extent"]),
            int(d["seed"]),
            WorldParams.from_dict(d.get("params")),
            tuple(d.get("street_x", ())),
            tuple(d.get("street_y", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "World":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_as(self, other: "World") -> bool:
        return self.to_dict() == other.to_dict()


def densify(points: np.ndarray, spacing: float) -> np.ndarray:
    """Insert vertices so no segment is longer than ``spacing``."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, int(np.ceil(np.hypot(*(b - a)) / spacing)))
        for k in range(1, n):
            out.append(a + (b - a) * (k / n))
        out.append(b)
    return np.array(out)


def _street_positions(n_blocks: int, p: WorldParams, rng: Xoshiro256) -> list[float]:
    pos = [p.margin + p.road_width / 2]
    for _ in range(n_blocks):
        size = p.block_size + rng.uniform(-p.block_jitter, p.block_jitter)
        pos.append(pos[-1] + p.road_width + size)
    return pos


def _segment_elements(a: float, b: float, c: float, along_x: bool, p: WorldParams, rng: Xoshiro256) -> list[MapElement]:
    """Elements of the street segment between intersections at ``a`` and ``b``.

    ``c`` is the street's fixed coordinate; ``along_x`` says the street runs along x.
    """
    hw = p.road_width / 2

    def pt(s: float, t: float) -> list[float]:
        return [s, c + t] if along_x else [c + t, s]

    s0, s1 = a + hw, b - hw
    out = []
    for side in (-hw, hw):
        out.append(MapElement(Category.BOUNDARY, densify(np.array([pt(s0, side), pt(s1, side)]), p.vertex_spacing)))
    has_start = rng.uniform() < p.crossing_prob
    has_end = rng.uniform() < p.crossing_prob
    d = p.crossing_depth
    for present, lo in ((has_start, s0), (has_end, s1 - d)):
        if present:
            ring = np.array([pt(lo, -hw), pt(lo + d, -hw), pt(lo + d, hw), pt(lo, hw), pt(lo, -hw)])
            out.append(MapElement(Category.CROSSING, densify(ring, p.vertex_spacing)))
    d0 = s0 + (d if has_start else 0.0) + 1.0
    d1 = s1 - (d if has_end else 0.0) - 1.0
    lanes = p.lanes_per_direction
    for k in range(-(lanes - 1), lanes):
        off = k * p.lane_width
        out.append(MapElement(Category.DIVIDER, densify(np.array([pt(d0, off), pt(d1, off)]), p.vertex_spacing)))
    return out


def generate_world(seed: int, params: WorldParams | dict | None = None) -> World:
    """Deterministic Manhattan world; identical (seed, params) give identical worlds."""
    p = params if isinstance(params, WorldParams) else WorldParams.from_dict(params)
    rng = Xoshiro256.derive(seed, 0x57041D)
    if p.blocks_x == 0 or p.blocks_y == 0:
        return World(VectorMap([], Frame.WORLD), (0.0, 0.0), seed, p)
    xs = _street_positions(p.blocks_x, p, rng)
    ys = _street_positions(p.blocks_y, p, rng)
    elements: list[MapElement] = []
    for y in ys:  # streets along x
        for a, b in zip(xs[:-1], xs[1:]):
            elements.extend(_segment_elements(a, b, y, True, p, rng))
    for x in xs:  # streets along y
        for a, b in zip(ys[:-1], ys[1:]):
            elements.extend(_segment_elements(a, b, x, False, p, rng))
    extent = (xs[-1] + p.road_width / 2 + p.margin, ys[-1] + p.road_width / 2 + p.margin)
    return World(VectorMap(elements, Frame.WORLD), extent, seed, p, tuple(xs), tuple(ys))
