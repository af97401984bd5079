"""Ground-truth cropping, a seeded noisy perceiver and pose noise.

The perceiver stands in for a learned map detector. It keeps each visible
ground-truth element with some recall, raises that recall when the historical
prior already covers the element, hides angular sectors, jitters vertices and
adds short spurious elements.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from hrmap.errors import ConfigError
from hrmap.geometry import Pose2, WindowSpec, inverse_transform_points, normalize_angle, transform_points
from hrmap.raster import DEFAULT_HALFWIDTH, Category, Frame, LocalMask, MapElement, VectorMap, element_stroke_cells
from hrmap.rng import Xoshiro256
from hrmap.simulate.world import World

TRUE_CONFIDENCE = (0.6, 0.95)
SPURIOUS_CONFIDENCE = (0.3, 0.6)
SPURIOUS_LENGTH = (2.0, 6.0)


def _from_dict(cls, d: dict | None):
    d = dict(d or {})
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class NoiseParams:
    sigma_t: float = 0.0
    sigma_r: float = 0.0
    point_jitter: float = 0.15
    base_recall: float = 0.7
    occlusion_sectors: int = 1
    occlusion_width: float = math.pi / 3
    false_positive_rate: float = 0.2

    def __post_init__(self):
        for name in ("sigma_t", "sigma_r", "point_jitter", "false_positive_rate", "occlusion_width"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.base_recall <= 1.0:
            raise ConfigError("base_recall must be in [0, 1]")
        if self.occlusion_sectors < 0 or int(self.occlusion_sectors) != self.occlusion_sectors:
            raise ConfigError("occlusion_sectors must be a non-negative integer")

    @classmethod
    def noiseless(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 1.0, 0, math.pi / 3, 0.0)

    to_dict = asdict

    @classmethod
    def from_dict(cls, d: dict | None) -> "NoiseParams":
        return _from_dict(cls, d)


@dataclass(frozen=True)
class FusionPolicy:
    prior_overlap_threshold: float = 0.3
    recall_boost: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.prior_overlap_threshold <= 1.0:
            raise ConfigError("prior_overlap_threshold must be in [0, 1]")
        if self.recall_boost < 0:
            raise ConfigError("recall_boost must be non-negative")

    to_dict = asdict

    @classmethod
    def from_dict(cls, d: dict | None) -> "FusionPolicy":
        return _from_dict(cls, d)


# -- clipping -------------------------------------------------------------------


def clip_polyline(points: np.ndarray, lo, hi) -> list[np.ndarray]:
    """Pieces of a polyline inside the box [lo, hi], in traversal order."""
    return [piece for _, piece in clip_polylines([points], lo, hi)]


def clip_polylines(polylines: list[np.ndarray], lo, hi) -> list[tuple[int, np.ndarray]]:
    """Clip many polylines to the box [lo, hi]; returns (polyline index, piece) pairs.

    Liang-Barsky on every segment at once. Entry and exit points are snapped
    onto the box edge they cross; vertices already inside are kept verbatim.
    """
    if not polylines:
        return []
    pts = [np.asarray(p, dtype=np.float64) for p in polylines]
    a = np.concatenate([p[:-1] for p in pts])
    b = np.concatenate([p[1:] for p in pts])
    owner = np.repeat(np.arange(len(pts)), [len(p) - 1 for p in pts])
    d = b - a
    n = len(d)
    t0 = np.zeros(n)
    t1 = np.ones(n)
    ok = np.ones(n, dtype=bool)
    snap0 = np.full(n, -1)  # box edge (xlo, xhi, ylo, yhi) the clipped end lies on
    snap1 = np.full(n, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        for edge, (axis, bound, sign) in enumerate(((0, lo[0], -1.0), (0, hi[0], 1.0), (1, lo[1], -1.0), (1, hi[1], 1.0))):
            p = sign * d[:, axis]
            q = sign * (bound - a[:, axis])
            parallel = p == 0.0
            ok &= ~(parallel & (q < 0))
            t = q / np.where(parallel, 1.0, p)
            enter = ~parallel & (p < 0) & (t > t0)
            leave = ~parallel & (p > 0) & (t < t1)
            t0 = np.where(enter, t, t0)
            snap0 = np.where(enter, edge, snap0)
            t1 = np.where(leave, t, t1)
            snap1 = np.where(leave, edge, snap1)
    ok &= t0 <= t1
    if not ok.any():
        return []
    p0 = np.where((t0 == 0.0)[:, None], a, a + t0[:, None] * d)
    p1 = np.where((t1 == 1.0)[:, None], b, a + t1[:, None] * d)
    bounds = (lo[0], hi[0], lo[1], hi[1])
    for pt, snap, moved in ((p0, snap0, t0 > 0.0), (p1, snap1, t1 < 1.0)):
        for edge in range(4):
            sel = moved & (snap == edge)
            if sel.any():
                pt[sel, edge // 2] = bounds[edge]
    idx = np.flatnonzero(ok)
    # a piece continues only through an unclipped joint of the same polyline
    starts = np.ones(len(idx), dtype=bool)
    if len(idx) > 1:
        prev, cur = idx[:-1], idx[1:]
        starts[1:] = ~((cur == prev + 1) & (owner[prev] == owner[cur]) & (t1[prev] == 1.0) & (t0[cur] == 0.0))
    out = []
    cuts = np.flatnonzero(starts).tolist() + [len(idx)]
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        run = idx[s0:s1]
        piece = np.vstack([p0[run[:1]], p1[run]])
        if np.any(np.hypot(*np.diff(piece, axis=0).T) > 0):
            out.append((int(owner[run[0]]), piece))
    return out


def crop_gt(world: World, pose: Pose2, window: WindowSpec | None = None) -> VectorMap:
    """World elements clipped to the window at ``pose``, in the ego frame."""
    window = window or WindowSpec()
    out = VectorMap([], Frame.EGO)
    if not world.gt_map.elements:
        return out
    corners = transform_points(pose, window.corners())
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    bb = world.element_bboxes
    near = np.flatnonzero((bb[:, 0] <= hi[0]) & (bb[:, 2] >= lo[0]) & (bb[:, 1] <= hi[1]) & (bb[:, 3] >= lo[1]))
    if len(near) == 0:
        return out
    src = [world.gt_map.elements[k] for k in near]
    sizes = [len(e.points) for e in src]
    local = inverse_transform_points(pose, np.concatenate([e.points for e in src]))
    pieces = np.split(local, np.cumsum(sizes)[:-1])
    for k, piece in clip_polylines(pieces, (window.x_min, window.y_min), (window.x_max, window.y_max)):
        out.elements.append(MapElement(src[k].category, piece, 1.0))
    return out


# -- perception -------------------------------------------------------------------


def prior_overlap(el: MapElement, prior: LocalMask, halfwidth: float = DEFAULT_HALFWIDTH) -> float:
    """Fraction of the element's rasterized cells already set in ``prior``."""
    return float(prior_overlaps([el], prior, halfwidth)[0])


def prior_overlaps(elements: list[MapElement], prior: LocalMask, halfwidth: float = DEFAULT_HALFWIDTH) -> np.ndarray:
    """``prior_overlap`` for many elements; 0 for elements with no cells in the window."""
    n = len(elements)
    if n == 0:
        return np.zeros(0)
    el, ii, jj = element_stroke_cells(elements, prior.window, halfwidth)
    cats = np.array([int(e.category) for e in elements], dtype=np.int64)
    total = np.bincount(el, minlength=n)
    hit = np.bincount(el, weights=prior.data[ii, jj, cats[el]], minlength=n)
    return np.divide(hit, total, out=np.zeros(n), where=total > 0)


def _occluded(points: np.ndarray, sectors: list[float], width: float) -> bool:
    if not sectors:
        return False
    c = points.mean(axis=0)
    bearing = math.atan2(c[1], c[0])
    return any(abs(normalize_angle(bearing - s)) <= width / 2 for s in sectors)


def _spurious(rng: Xoshiro256, window: WindowSpec) -> MapElement | None:
    cat = Category(rng.integer(3))
    x = rng.uniform(window.x_min, window.x_max)
    y = rng.uniform(window.y_min, window.y_max)
    heading = rng.uniform(-math.pi, math.pi)
    length = rng.uniform(*SPURIOUS_LENGTH)
    conf = rng.uniform(*SPURIOUS_CONFIDENCE)
    t = np.linspace(0.0, length, 4)
    pts = np.stack([x + t * math.cos(heading), y + t * math.sin(heading)], axis=1)
    pieces = clip_polyline(pts, (window.x_min, window.y_min), (window.x_max, window.y_max))
    if not pieces:
        return None
    return MapElement(cat, pieces[0], conf)


def perceive(
    world: World,
    pose: Pose2,
    noise: NoiseParams,
    prior: LocalMask | None,
    fusion: FusionPolicy,
    rng: Xoshiro256,
    window: WindowSpec | None = None,
    stroke_halfwidth: float = DEFAULT_HALFWIDTH,
    gt: VectorMap | None = None,
) -> VectorMap:
    """Noisy ego-frame detections of the world at ``pose``.

    Each visible element draws from its own sub-stream, so changing the prior
    only changes the fate of elements whose boosted status flips.
    """
    window = window or WindowSpec()
    if gt is None:
        gt = crop_gt(world, pose, window)
    key = rng.next_u64()
    occ_rng = Xoshiro256.derive(key, 1)
    sectors = [occ_rng.uniform(-math.pi, math.pi) for _ in range(noise.occlusion_sectors)]
    out = VectorMap([], Frame.EGO)
    boosted = min(1.0, noise.base_recall + fusion.recall_boost)
    covered = np.zeros(len(gt.elements), dtype=bool)
    if prior is not None and fusion.recall_boost > 0:
        covered = prior_overlaps(gt.elements, prior, stroke_halfwidth) >= fusion.prior_overlap_threshold
    for idx, el in enumerate(gt.elements):
        erng = Xoshiro256.derive(key, 2, idx)
        recall = boosted if covered[idx] else noise.base_recall
        if not erng.uniform() < recall:
            continue
        if _occluded(el.points, sectors, noise.occlusion_width):
            continue
        pts = el.points
        if noise.point_jitter > 0:
            jitter = np.array(erng.normals(pts.size, noise.point_jitter)).reshape(pts.shape)
            pts = pts + jitter
        conf = erng.uniform(*TRUE_CONFIDENCE)
        out.elements.append(MapElement(el.category, pts, conf))
    fp_rng = Xoshiro256.derive(key, 3)
    for _ in range(fp_rng.poisson(noise.false_positive_rate)):
        el = _spurious(fp_rng, window)
        if el is not None:
            out.elements.append(el)
    return out


def perturb_pose(pose: Pose2, sigma_t: float, sigma_r: float, rng: Xoshiro256) -> Pose2:
    """Independent Gaussian noise on x, y (sigma_t) and yaw (sigma_r)."""
    if sigma_t < 0 or sigma_r < 0:
        raise ConfigError("pose noise sigmas must be non-negative")
    nx, ny, nr = rng.normal(), rng.normal(), rng.normal()
    return Pose2(pose.x + sigma_t * nx, pose.y + sigma_t * ny, pose.yaw + sigma_r * nr)
