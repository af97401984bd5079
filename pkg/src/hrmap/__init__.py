"""Historical rasterized map engine.

Rasterizes vectorized map elements into local masks, accumulates them into a
sparse 8-bit global evidence map, and ships a seeded closed-loop simulator plus
Chamfer-AP evaluation to study how a historical map helps online perception.
"""

from hrmap.errors import ConfigError, HrmapError, MapFormatError
from hrmap.geometry import GridSpec, Pose2, WindowSpec
from hrmap.mapstore import GlobalMap, MemoryStats, UpdateParams
from hrmap.raster import Category, LocalMask, MapElement, VectorMap

__all__ = [
    "Category",
    "ConfigError",
    "GlobalMap",
    "GridSpec",
    "HrmapError",
    "LocalMask",
    "MapElement",
    "MapFormatError",
    "MemoryStats",
    "Pose2",
    "UpdateParams",
    "VectorMap",
    "WindowSpec",
]

__version__ = "0.1.0"
