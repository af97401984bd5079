"""Chamfer-matched AP/mAP, mask IoU and scenario-level aggregates.

AP follows common detection practice: predictions of one category are pooled
over all frames, ranked by confidence, and the area under the interpolated
(non-increasing) precision-recall curve is reported. Per-frame matching is
greedy in confidence order against the nearest unmatched ground truth.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from hrmap.errors import ConfigError
from hrmap.geometry import GridSpec, chamfer_matrix
from hrmap.mapstore import GlobalMap, MemoryStats
from hrmap.raster import N_CATEGORIES, Category, LocalMask, VectorMap

DEFAULT_THRESHOLDS = (0.5, 1.0, 1.5)
MIN_PARTITION_FRAMES = 10


@dataclass(frozen=True)
class ApConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    resample_k: int = 100

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        if not t or t[0] <= 0 or any(b <= a for a, b in zip(t[:-1], t[1:])):
            raise ConfigError("thresholds must be positive and strictly increasing")
        if self.resample_k < 2:
            raise ConfigError("resample_k must be at least 2")
        object.__setattr__(self, "thresholds", t)


@dataclass
class FrameMatch:
    """Outcome of matching one frame for one category at one threshold."""

    confidences: np.ndarray  # of the category's predictions, in match order
    tp: np.ndarray  # bool per prediction
    n_gt: int

    @property
    def fp(self) -> np.ndarray:
        return ~self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - int(self.tp.sum())


# -- matching -----------------------------------------------------------------


def _bbox(points: np.ndarray) -> np.ndarray:
    return np.concatenate([points.min(axis=0), points.max(axis=0)])


def distance_matrix(preds: list[np.ndarray], gts: list[np.ndarray], k: int, cutoff: float = math.inf) -> np.ndarray:
    """Chamfer distances, with inf where the bounding-box gap already reaches ``cutoff``.

    Every nearest-neighbour distance is at least the gap between the two
    bounding boxes, so such pairs can never fall below ``cutoff``.
    """
    out = np.full((len(preds), len(gts)), math.inf)
    if not preds or not gts:
        return out
    pb = np.array([_bbox(p) for p in preds])
    gb = np.array([_bbox(g) for g in gts])
    gap_x = np.maximum(0.0, np.maximum(pb[:, None, 0] - gb[None, :, 2], gb[None, :, 0] - pb[:, None, 2]))
    gap_y = np.maximum(0.0, np.maximum(pb[:, None, 1] - gb[None, :, 3], gb[None, :, 1] - pb[:, None, 3]))
    near = np.hypot(gap_x, gap_y) < cutoff
    return chamfer_matrix(preds, gts, k, mask=near)


def _order(confidences: np.ndarray) -> np.ndarray:
    # stable: equal confidences keep their input order
    return np.argsort(-confidences, kind="stable")


def greedy_match(dist: np.ndarray, confidences: np.ndarray, threshold: float) -> np.ndarray:
    """TP flag per prediction (in the given order) from a precomputed distance matrix."""
    tp = np.zeros(len(confidences), dtype=bool)
    taken = np.zeros(dist.shape[1], dtype=bool)
    for p in _order(confidences):
        if not dist.shape[1]:
            break
        row = np.where(taken, math.inf, dist[p])
        g = int(np.argmin(row))
        if row[g] < threshold:
            tp[p] = True
            taken[g] = True
    return tp


def match_frame(
    preds: VectorMap, gts: VectorMap, category: Category, threshold: float, k: int = 100
) -> FrameMatch:
    """Greedy confidence-ordered matching of one category in one frame."""
    if preds.frame != gts.frame:
        raise ConfigError("predictions and ground truth are in different frames")
    p = preds.of_category(category)
    g = gts.of_category(category)
    conf = np.array([e.confidence for e in p], dtype=np.float64)
    dist = distance_matrix([e.points for e in p], [e.points for e in g], k, cutoff=threshold)
    tp = greedy_match(dist, conf, threshold)
    order = _order(conf)
    return FrameMatch(conf[order], tp[order], len(g))


# -- AP -----------------------------------------------------------------------


def average_precision(confidences, tp, n_gt: int) -> float:
    """Area under the interpolated PR curve of pooled, confidence-ranked predictions.

    Predictions with equal confidence are one operating point: the curve only
    gets a vertex after the whole tied block.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    tp = np.asarray(tp, dtype=bool)
    if n_gt == 0:
        return 1.0 if conf.size == 0 else 0.0
    if conf.size == 0:
        return 0.0
    order = np.argsort(-conf, kind="stable")
    conf, tp = conf[order], tp[order]
    ctp = np.cumsum(tp)
    last = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))  # end of each tie block
    recall = ctp[last] / n_gt
    precision = ctp[last] / (last + 1)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.clip((steps * precision).sum(), 0.0, 1.0))


def _category_frames(log, category: Category):
    """Per frame: (confidences, pred points, gt points) for one category."""
    for rec in log:
        p = rec.prediction.of_category(category)
        g = rec.gt.of_category(category)
        yield (
            np.array([e.confidence for e in p], dtype=np.float64),
            [e.points for e in p],
            [e.points for e in g],
        )


def map_score(log, config: ApConfig | None = None) -> dict:
    """Pooled AP per (category, threshold), category means and mAP."""
    config = config or ApConfig()
    cutoff = max(config.thresholds)
    per_threshold: dict[str, dict[str, float]] = {}
    ap_cat: dict[str, float] = {}
    for cat in Category:
        pooled = {t: ([], []) for t in config.thresholds}
        n_gt = 0
        for conf, p, g in _category_frames(log, cat):
            n_gt += len(g)
            dist = distance_matrix(p, g, config.resample_k, cutoff=cutoff)
            for t in config.thresholds:
                pooled[t][0].append(conf)
                pooled[t][1].append(greedy_match(dist, conf, t))
        aps = {}
        for t in config.thresholds:
            confs, tps = pooled[t]
            c = np.concatenate(confs) if confs else np.zeros(0)
            f = np.concatenate(tps) if tps else np.zeros(0, dtype=bool)
            aps[f"{t:g}"] = average_precision(c, f, n_gt)
        per_threshold[cat.short] = aps
        ap_cat[cat.short] = float(np.mean(list(aps.values())))
    m = float(np.mean([ap_cat[c.short] for c in Category]))
    return {"ap": per_threshold, "ap_category": ap_cat, "mAP": m}


# -- IoU ----------------------------------------------------------------------


def _mask_data(m) -> np.ndarray:
    return m.data if isinstance(m, LocalMask) else np.asarray(m, dtype=bool)


def iou_counts(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Per-category intersection and union cell counts."""
    da, db = _mask_data(a), _mask_data(b)
    if da.shape != db.shape:
        raise ConfigError(f"mask shapes differ: {da.shape} vs {db.shape}")
    axes = tuple(range(da.ndim - 1))
    return (da & db).sum(axis=axes), (da | db).sum(axis=axes)


def _iou_from_counts(inter, union) -> list[float]:
    return [1.0 if u == 0 else float(i) / float(u) for i, u in zip(inter, union)]


def mask_iou(a, b) -> tuple[tuple[float, ...], float]:
    """Per-category IoU (1.0 where both are empty) and their mean."""
    per = _iou_from_counts(*iou_counts(a, b))
    return tuple(per), float(np.mean(per))


def _pooled_iou(pairs) -> tuple[dict[str, float], float, list[float]]:
    inter = np.zeros(N_CATEGORIES, dtype=np.int64)
    union = np.zeros(N_CATEGORIES, dtype=np.int64)
    series = []
    for a, b in pairs:
        i, u = iou_counts(a, b)
        inter += i
        union += u
        series.append(float(np.mean(_iou_from_counts(i, u))))
    per = _iou_from_counts(inter, union)
    return {c.short: per[c] for c in Category}, float(np.mean(per)), series


def prediction_iou(log):
    """Pooled IoU of rasterized predictions against rasterized ground truth."""
    return _pooled_iou((log.rasterize(r.prediction), log.rasterize(r.gt)) for r in log)


def prior_iou(log):
    """Pooled IoU of the retrieved historical prior against rasterized ground truth.

    This measures the global map's quality where it is used, so pose noise
    shows up here directly.
    """
    return _pooled_iou((r.prior_mask(log.window), log.rasterize(r.gt)) for r in log)


# -- report -------------------------------------------------------------------


@dataclass
class EvalReport:
    ap: dict
    ap_category: dict
    mAP: float
    iou: dict
    mIoU: float
    prior_iou: dict
    prior_mIoU: float
    frames: int
    memory: MemoryStats | None = None
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "frames": self.frames,
            "ap": self.ap,
            "AP_ped": self.ap_category["ped"],
            "AP_div": self.ap_category["div"],
            "AP_bou": self.ap_category["bou"],
            "mAP": self.mAP,
            "iou": self.iou,
            "mIoU": self.mIoU,
            "prior_iou": self.prior_iou,
            "prior_mIoU": self.prior_mIoU,
            "memory": self.memory.to_dict() if self.memory else None,
            "series": self.series,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(log, config: ApConfig | None = None, gmap: GlobalMap | None = None) -> EvalReport:
    scores = map_score(log, config)
    iou, miou, iou_series = prediction_iou(log)
    piou, pmiou, prior_series = prior_iou(log)
    return EvalReport(
        ap=scores["ap"],
        ap_category=scores["ap_category"],
        mAP=scores["mAP"],
        iou=iou,
        mIoU=miou,
        prior_iou=piou,
        prior_mIoU=pmiou,
        frames=len(log),
        memory=gmap.memory_stats() if gmap is not None else None,
        series={
            "index": [r.index for r in log],
            "t": [r.timestamp for r in log],
            "mIoU": iou_series,
            "prior_mIoU": prior_series,
            "predictions": [len(r.prediction.elements) for r in log],
            "gt": [len(r.gt.elements) for r in log],
        },
    )


# -- revisit ------------------------------------------------------------------


@dataclass(frozen=True)
class RevisitResult:
    map_first: float
    map_revisit: float
    delta: float
    n_first: int
    n_revisit: int
    warning: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def revisit_flags(log, gap: float | None = None, fraction: float = 0.5, resolution: float | None = None) -> np.ndarray:
    """Whether each frame is a revisit.

    A frame is a revisit when at least ``fraction`` of its window cells were
    visited before. A frame's cells only count as visited once its vehicle has
    driven ``gap`` metres further (default: the window length), so that
    overlap between consecutive frames does not make every frame a revisit.
    """
    window = log.window
    gap = (window.x_max - window.x_min) if gap is None else gap
    n = len(log)
    flags = np.zeros(n, dtype=bool)
    if n == 0:
        return flags
    grid_map = GlobalMap(GridSpec(resolution=resolution or window.resolution))
    cells = [grid_map.global_cells_for(r.true_pose, window) for r in log]
    gx0 = min(int(c[0].min()) for c in cells)
    gy0 = min(int(c[1].min()) for c in cells)
    gx1 = max(int(c[0].max()) for c in cells)
    gy1 = max(int(c[1].max()) for c in cells)
    visited = np.zeros((gy1 - gy0 + 1, gx1 - gx0 + 1), dtype=bool)
    pending: dict[int, list] = {}  # vehicle -> [(odometer, flat cell ids)]
    odometer: dict[int, float] = {}
    last: dict[int, tuple[float, float]] = {}
    flat = visited.reshape(-1)
    for k, rec in enumerate(log):
        v, p = rec.vehicle, rec.true_pose
        odometer[v] = odometer[v] + math.hypot(p.x - last[v][0], p.y - last[v][1]) if v in last else 0.0
        last[v] = (p.x, p.y)
        queue = pending.setdefault(v, [])
        while queue and odometer[v] - queue[0][0] >= gap:
            flat[queue.pop(0)[1]] = True
        ids = np.unique((cells[k][1] - gy0) * visited.shape[1] + (cells[k][0] - gx0))
        flags[k] = np.count_nonzero(flat[ids]) >= fraction * len(ids)
        queue.append((odometer[v], ids))
    return flags


def revisit_delta(log, config: ApConfig | None = None, gap: float | None = None) -> RevisitResult:
    """mAP on revisit frames minus mAP on first-visit frames."""
    flags = revisit_flags(log, gap)
    recs = log.records
    first = log.subset(r for r, f in zip(recs, flags) if not f)
    again = log.subset(r for r, f in zip(recs, flags) if f)
    warning = None
    if len(first) < MIN_PARTITION_FRAMES or len(again) < MIN_PARTITION_FRAMES:
        warning = f"insufficient frames: {len(first)} first-visit, {len(again)} revisit (need {MIN_PARTITION_FRAMES})"
        warnings.warn(warning, stacklevel=2)
    m_first = map_score(first, config)["mAP"] if len(first) else float("nan")
    m_again = map_score(again, config)["mAP"] if len(again) else float("nan")
    return RevisitResult(m_first, m_again, m_again - m_first, len(first), len(again), warning)


# -- noise sweep --------------------------------------------------------------


def _sweep_cell(args) -> tuple[float, float, float, float]:
    from hrmap.simulate.perception import NoiseParams
    from hrmap.simulate.scenario import run_scenario

    config, st, sr, ap_config, metrics = args
    noise = NoiseParams(**{**config.noise.to_dict(), "sigma_t": st, "sigma_r": sr})
    _, log = run_scenario(config.replace(noise=noise))
    m = map_score(log, ap_config)["mAP"] if "mAP" in metrics else math.nan
    i = prior_iou(log)[1] if "prior_mIoU" in metrics else math.nan
    return st, sr, m, i


@dataclass
class SweepResult:
    sigma_t: list[float]
    sigma_r: list[float]
    mAP: np.ndarray  # (len(sigma_r), len(sigma_t))
    prior_mIoU: np.ndarray

    def to_csv(self, metric: str = "mAP") -> str:
        grid = getattr(self, metric)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma_r\\sigma_t"] + [f"{t:g}" for t in self.sigma_t])
        for r, row in zip(self.sigma_r, grid):
            w.writerow([f"{r:g}"] + [repr(float(x)) for x in row])
        return buf.getvalue()


SWEEP_METRICS = ("mAP", "prior_mIoU")


def noise_sweep(
    config, sigma_t, sigma_r, ap_config: ApConfig | None = None, workers: int = 1, metrics=SWEEP_METRICS
) -> SweepResult:
    """Re-run the scenario for every (sigma_t, sigma_r) pair with the seed held fixed.

    Rows follow ``sigma_r`` and columns ``sigma_t``. ``workers`` > 1 fans the
    runs out to processes; results are joined by key so the output does not
    depend on completion order. Metrics left out of ``metrics`` are NaN.
    """
    metrics = tuple(metrics)
    if not metrics or set(metrics) - set(SWEEP_METRICS):
        raise ConfigError(f"metrics must be a non-empty subset of {SWEEP_METRICS}")
    st_list = [float(x) for x in sigma_t]
    sr_list = [float(x) for x in sigma_r]
    jobs = [(config, st, sr, ap_config, metrics) for sr in sr_list for st in st_list]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    by_key = {(st, sr): (m, i) for st, sr, m, i in results}
    m_grid = np.array([[by_key[(st, sr)][0] for st in st_list] for sr in sr_list])
    i_grid = np.array([[by_key[(st, sr)][1] for st in st_list] for sr in sr_list])
    return SweepResult(st_list, sr_list, m_grid, i_grid)
