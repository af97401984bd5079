"""Independent reference implementations used as test oracles.

Everything here is written from the definitions with plain Python loops and
``math``; nothing is imported from the package's numeric kernels.
"""

from __future__ import annotations

import itertools
import math


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


# -- transforms ---------------------------------------------------------------


def ego_to_world(pose, px, py):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    return c * px - s * py + pose[0], s * px + c * py + pose[1]


def world_to_ego(pose, gx, gy):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    dx, dy = gx - pose[0], gy - pose[1]
    return c * dx + s * dy, -s * dx + c * dy


def local_center(i, j, win):
    x_min, y_min, res = win["x_min"], win["y_min"], win["res"]
    return x_min + (i + 0.5) * res, y_min + (j + 0.5) * res


def local_index(px, py, win):
    return (
        round_half_away((px - win["x_min"]) / win["res"] - 0.5),
        round_half_away((py - win["y_min"]) / win["res"] - 0.5),
    )


def global_index(x, y, origin, res):
    return round_half_away((x - origin[0]) / res), round_half_away((y - origin[1]) / res)


def global_center(gx, gy, origin, res):
    return origin[0] + gx * res, origin[1] + gy * res


# -- evidence map -------------------------------------------------------------


class EvidenceMap:
    """Dictionary-backed evidence grid updated and read cell by cell."""

    def __init__(self, origin, res, s_plus=30, s_minus=1, s_th=0):
        self.origin, self.res = origin, res
        self.s_plus, self.s_minus, self.s_th = s_plus, s_minus, s_th
        self.cells: dict[tuple[int, int], list[int]] = {}

    def update(self, mask, pose, win):
        """``mask[i][j][c]`` nested lists or array; gather over the window's bounding box."""
        H, W = win["H"], win["W"]
        corners = [ego_to_world(pose, x, y) for x in (win["x_min"], win["x_max"]) for y in (win["y_min"], win["y_max"])]
        xs = [c[0] for c in corners]
        ys = [c[1] for c in corners]
        gx_lo = math.floor((min(xs) - self.origin[0]) / self.res) - 2
        gx_hi = math.ceil((max(xs) - self.origin[0]) / self.res) + 2
        gy_lo = math.floor((min(ys) - self.origin[1]) / self.res) - 2
        gy_hi = math.ceil((max(ys) - self.origin[1]) / self.res) + 2
        for gx in range(gx_lo, gx_hi + 1):
            for gy in range(gy_lo, gy_hi + 1):
                px, py = world_to_ego(pose, *global_center(gx, gy, self.origin, self.res))
                i, j = local_index(px, py, win)
                if not (0 <= i < H and 0 <= j < W):
                    continue
                v = self.cells.setdefault((gx, gy), [0, 0, 0])
                for c in range(3):
                    if mask[i][j][c]:
                        v[c] = min(255, v[c] + self.s_plus)
                    else:
                        v[c] = max(0, v[c] - self.s_minus)

    def retrieve(self, pose, win):
        out = [[[False] * 3 for _ in range(win["W"])] for _ in range(win["H"])]
        for i in range(win["H"]):
            for j in range(win["W"]):
                wx, wy = ego_to_world(pose, *local_center(i, j, win))
                v = self.cells.get(global_index(wx, wy, self.origin, self.res), (0, 0, 0))
                out[i][j] = [v[c] > self.s_th for c in range(3)]
        return out


# -- Chamfer / matching / AP --------------------------------------------------


def resample(points, k):
    pts = [tuple(map(float, p)) for p in points]
    seg = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts[:-1], pts[1:])]
    total = sum(seg)
    if len(pts) < 2 or total == 0:
        return pts
    out = []
    for n in range(k):
        target = total * n / (k - 1)
        acc = 0.0
        for (a, b), length in zip(zip(pts[:-1], pts[1:]), seg):
            if acc + length >= target or (a, b) == (pts[-2], pts[-1]):
                t = 0.0 if length == 0 else min(1.0, max(0.0, (target - acc) / length))
                out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
                break
            acc += length
    out[0], out[-1] = pts[0], pts[-1]
    return out


def chamfer(a, b, k=100):
    pa, pb = resample(a, k), resample(b, k)
    ab = sum(min(math.hypot(p[0] - q[0], p[1] - q[1]) for q in pb) for p in pa) / len(pa)
    ba = sum(min(math.hypot(p[0] - q[0], p[1] - q[1]) for q in pa) for p in pb) / len(pb)
    return 0.5 * (ab + ba)


def match_exhaustive(confs, dist, threshold):
    """Try every partial one-to-one assignment; return TP flags of the preferred one.

    Preference: walk predictions from most to least confident (ties by
    index); at the first prediction where two assignments differ, prefer the
    one that matches it, then the one with the smaller distance, then the
    lower GT index.
    """
    n_p = len(confs)
    n_g = len(dist[0]) if n_p else 0
    order = sorted(range(n_p), key=lambda p: (-confs[p], p))
    best_key, best = None, [False] * n_p
    options = [[None] + [g for g in range(n_g) if dist[p][g] < threshold] for p in range(n_p)]
    for combo in itertools.product(*options):
        used = [g for g in combo if g is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple((0, dist[p][combo[p]], combo[p]) if combo[p] is not None else (1, 0.0, 0) for p in order)
        if best_key is None or key < best_key:
            best_key, best = key, [g is not None for g in combo]
    return best


def match_max_cardinality(confs, dist, threshold) -> int:
    """Largest number of TPs any one-to-one assignment can reach."""
    n_p = len(confs)
    n_g = len(dist[0]) if n_p else 0
    best = 0
    options = [[None] + [g for g in range(n_g) if dist[p][g] < threshold] for p in range(n_p)]
    for combo in itertools.product(*options):
        used = [g for g in combo if g is not None]
        if len(used) == len(set(used)):
            best = max(best, len(used))
    return best


def ap_reference(confs, tps, n_gt):
    """AP from operating points at every distinct confidence level."""
    if n_gt == 0:
        return 1.0 if not confs else 0.0
    if not confs:
        return 0.0
    points = []
    for level in sorted(set(confs), reverse=True):
        kept = [t for c, t in zip(confs, tps) if c >= level]
        tp = sum(kept)
        points.append((tp / n_gt, tp / len(kept)))
    area, prev_r = 0.0, 0.0
    for r, _ in points:
        p_interp = max(p for rr, p in points if rr >= r)
        area += (r - prev_r) * p_interp
        prev_r = r
    return area


def map_reference(frames, thresholds=(0.5, 1.0, 1.5), k=100):
    """mAP over frames of (preds, gts); each a list of (category, points, confidence)."""
    per_cat = []
    for cat in range(3):
        aps = []
        for thr in thresholds:
            confs, tps, n_gt = [], [], 0
            for preds, gts in frames:
                p = [e for e in preds if e[0] == cat]
                g = [e for e in gts if e[0] == cat]
                n_gt += len(g)
                dist = [[chamfer(pe[1], ge[1], k) for ge in g] for pe in p]
                pc = [pe[2] for pe in p]
                flags = match_exhaustive(pc, dist, thr) if p else []
                confs += pc
                tps += flags
            aps.append(ap_reference(confs, tps, n_gt))
        per_cat.append(sum(aps) / len(aps))
    return sum(per_cat) / 3
