"""Planar poses, grid conventions, polyline resampling and Chamfer distance.

Two grid conventions coexist:

* Local (ego) windows index cells by their centres,
  ``x_min + (i + 0.5) * res`` along the forward axis and
  ``y_min + (j + 0.5) * res`` along the left axis.
* The global grid indexes cells by ``round((p - origin) / res)`` so cell
  ``k`` is centred on ``origin + k * res``.

``round`` is half-away-from-zero everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from hrmap.errors import ConfigError


class Point2(NamedTuple):
    x: float
    y: float


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2:
    """SE(2) pose: ego frame to world frame. Yaw is stored normalized."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


def se2_apply(pose: Pose2, p) -> Point2:
    """Ego point to world: ``R(yaw) p + t``."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return Point2(c * p[0] - s * p[1] + pose.x, s * p[0] + c * p[1] + pose.y)


def se2_inverse_apply(pose: Pose2, p_g) -> Point2:
    """World point to ego: ``R(yaw)^T (p_g - t)``."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx, dy = p_g[0] - pose.x, p_g[1] - pose.y
    return Point2(c * dx + s * dy, -s * dx + c * dy)


def transform_points(pose: Pose2, pts: np.ndarray) -> np.ndarray:
    """Vectorized ``se2_apply`` over an (..., 2) array."""
    pts = np.asarray(pts, dtype=np.float64)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    out = np.empty_like(pts)
    out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + pose.x
    out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + pose.y
    return out


def inverse_transform_points(pose: Pose2, pts: np.ndarray) -> np.ndarray:
    """Vectorized ``se2_inverse_apply`` over an (..., 2) array."""
    pts = np.asarray(pts, dtype=np.float64)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx = pts[..., 0] - pose.x
    dy = pts[..., 1] - pose.y
    out = np.empty_like(pts)
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    return out


def round_half_away(v):
    """Round half away from zero; works on scalars and arrays, returns int64."""
    a = np.asarray(v, dtype=np.float64)
    r = np.trunc(a + np.copysign(0.5, a))
    if r.ndim == 0:
        return int(r)
    return r.astype(np.int64)


@dataclass(frozen=True)
class GridSpec:
    """Global grid anchor. Cell ``k`` is centred on ``origin + k * resolution``.

    When ``origin`` is omitted it defaults to half a cell, so global cell
    centres coincide with local cell centres for any window whose bounds are
    whole multiples of the resolution and any pose on the half-cell lattice
    (the identity pose in particular).
    """

    origin: Point2 | None = None
    resolution: float = 0.3

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ConfigError(f"resolution must be positive, got {self.resolution}")
        if self.origin is None:
            half = self.resolution / 2.0
            object.__setattr__(self, "origin", Point2(half, half))
        else:
            object.__setattr__(self, "origin", Point2(float(self.origin[0]), float(self.origin[1])))

    def cell_center(self, ix: int, iy: int) -> Point2:
        return Point2(self.origin.x + ix * self.resolution, self.origin.y + iy * self.resolution)


def metric_to_cell(p, grid: GridSpec) -> tuple[int, int]:
    return (
        round_half_away((p[0] - grid.origin[0]) / grid.resolution),
        round_half_away((p[1] - grid.origin[1]) / grid.resolution),
    )


def metric_to_cells(pts: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(pts, dtype=np.float64)
    ix = round_half_away((pts[..., 0] - grid.origin[0]) / grid.resolution)
    iy = round_half_away((pts[..., 1] - grid.origin[1]) / grid.resolution)
    return np.asarray(ix, dtype=np.int64), np.asarray(iy, dtype=np.int64)


def _is_multiple(span: float, res: float) -> bool:
    q = span / res
    return abs(q - round(q)) < 1e-6


@dataclass(frozen=True)
class WindowSpec:
    """Ego-centric perception window. ``x`` points forward, ``y`` to the left."""

    x_min: float = -30.0
    x_max: float = 30.0
    y_min: float = -15.0
    y_max: float = 15.0
    resolution: float = 0.3
    H: int = field(init=False, repr=False)
    W: int = field(init=False, repr=False)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigError("window resolution must be positive")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError("window bounds must satisfy max > min")
        if not (
            _is_multiple(self.x_max - self.x_min, self.resolution)
            and _is_multiple(self.y_max - self.y_min, self.resolution)
        ):
            raise ConfigError("window spans must be integer multiples of the resolution")
        object.__setattr__(self, "H", int(round((self.x_max - self.x_min) / self.resolution)))
        object.__setattr__(self, "W", int(round((self.y_max - self.y_min) / self.resolution)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.H, self.W)

    def corners(self) -> np.ndarray:
        return np.array(
            [
                [self.x_min, self.y_min],
                [self.x_max, self.y_min],
                [self.x_max, self.y_max],
                [self.x_min, self.y_max],
            ]
        )

    def cell_centers(self) -> np.ndarray:
        """(H, W, 2) array of ego-frame cell centres."""
        xs = self.x_min + (np.arange(self.H) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(self.W) + 0.5) * self.resolution
        out = np.empty((self.H, self.W, 2))
        out[..., 0] = xs[:, None]
        out[..., 1] = ys[None, :]
        return out

    def metric_to_index(self, px, py):
        """Nearest local cell index (may fall outside the window)."""
        i = round_half_away((np.asarray(px) - self.x_min) / self.resolution - 0.5)
        j = round_half_away((np.asarray(py) - self.y_min) / self.resolution - 0.5)
        return i, j

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "resolution": self.resolution,
        }


def local_cell_center(i: int, j: int, window: WindowSpec) -> Point2:
    if not (0 <= i < window.H and 0 <= j < window.W):
        raise IndexError(f"cell ({i}, {j}) outside {window.H}x{window.W} window")
    return Point2(
        window.x_min + (i + 0.5) * window.resolution,
        window.y_min + (j + 0.5) * window.resolution,
    )


# -- polylines ---------------------------------------------------------------


def as_polyline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("a polyline needs at least two (x, y) points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("polyline has non-finite coordinates")
    return pts


def arclength(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def resample_polyline(pl, k: int = 100) -> np.ndarray:
    """``k`` points equally spaced by arclength; endpoints kept exactly."""
    if k < 2:
        raise ValueError("k must be at least 2")
    pts = as_polyline(pl)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if not total > 0:
        raise ValueError("cannot resample a zero-length polyline")
    targets = np.linspace(0.0, total, k)
    out = np.empty((k, 2))
    out[:, 0] = np.interp(targets, cum, pts[:, 0])
    out[:, 1] = np.interp(targets, cum, pts[:, 1])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _sample_points(pl, k: int) -> np.ndarray:
    pts = np.asarray(pl, dtype=np.float64).reshape(-1, 2)
    if len(pts) >= 2 and arclength(pts) > 0:
        return resample_polyline(pts, k)
    # degenerate: every point coincides, treat as a point set
    return pts


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between point sets on the last two axes: (..., n, 2) x (..., m, 2) -> (..., n, m)."""
    dx = a[..., :, None, 0] - b[..., None, :, 0]
    dy = a[..., :, None, 1] - b[..., None, :, 1]
    return dx * dx + dy * dy


def chamfer_points(a: np.ndarray, b: np.ndarray) -> float:
    d2 = _sq_dists(a, b)
    # sqrt is monotone, so taking it after the min gives the same nearest distances
    ab = float(np.sqrt(d2.min(axis=1)).mean())
    ba = float(np.sqrt(d2.min(axis=0)).mean())
    # summing the two directed terms in a fixed order keeps CD(a,b) == CD(b,a) bitwise
    lo, hi = sorted((ab, ba))
    return 0.5 * (lo + hi)


def chamfer_distance(a, b, k: int = 100) -> float:
    return chamfer_points(_sample_points(a, k), _sample_points(b, k))


def chamfer_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Chamfer distance of each pair of equal-size point sets, (m, k, 2) x (m, k2, 2) -> (m,)."""
    out = np.empty(len(a))
    for s in range(0, len(a), 64):  # bounded (64, k, k2) temporaries
        pa, pb = a[s : s + 64], b[s : s + 64]
        d2 = _sq_dists(pa, pb)
        ab = np.sqrt(d2.min(axis=2)).mean(axis=1)
        ba = np.sqrt(d2.min(axis=1)).mean(axis=1)
        out[s : s + 64] = 0.5 * (np.minimum(ab, ba) + np.maximum(ab, ba))
    return out


def chamfer_matrix(preds: list, gts: list, k: int = 100, mask: np.ndarray | None = None) -> np.ndarray:
    """Pairwise Chamfer distances, shape (len(preds), len(gts)).

    With ``mask``, only pairs where it is true are computed; the rest are inf.
    """
    out = np.full((len(preds), len(gts)), np.inf if mask is not None else 0.0)
    if not preds or not gts:
        return out
    ps = [_sample_points(p, k) for p in preds]
    gs = [_sample_points(g, k) for g in gts]
    ii, jj = np.nonzero(mask) if mask is not None else np.indices(out.shape).reshape(2, -1)
    regular = np.array([len(ps[i]) == k and len(gs[j]) == k for i, j in zip(ii, jj)], dtype=bool)
    if regular.any():
        ri, rj = ii[regular], jj[regular]
        out[ri, rj] = chamfer_pairs(np.stack([ps[i] for i in ri]), np.stack([gs[j] for j in rj]))
    for i, j in zip(ii[~regular], jj[~regular]):
        out[i, j] = chamfer_points(ps[i], gs[j])
    return out
