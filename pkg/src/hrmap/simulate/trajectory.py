"""Vehicle trajectories along the streets of a generated world."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hrmap.errors import ConfigError
from hrmap.geometry import Pose2, normalize_angle
from hrmap.rng import Xoshiro256
from hrmap.simulate.world import World

TRAJ_VERSION = 1
MAX_STEP = 2.0
MAX_TURN = 0.3


class TrajectoryKind(str, enum.Enum):
    LOOP = "loop"
    OUT_AND_BACK = "outback"
    GRID = "grid"


@dataclass(eq=False)
class Trajectory:
    id: str
    timestamps: np.ndarray
    poses: list[Pose2]
    max_step: float = MAX_STEP
    max_turn: float = MAX_TURN

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.timestamps) != len(self.poses):
            raise ConfigError("timestamps and poses differ in length")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ConfigError(f"trajectory {self.id}: timestamps must be strictly increasing")
        for k, (a, b) in enumerate(zip(self.poses[:-1], self.poses[1:])):
            if math.hypot(b.x - a.x, b.y - a.y) > self.max_step + 1e-9:
                raise ConfigError(f"trajectory {self.id}: step {k} exceeds {self.max_step} m")
            if abs(normalize_angle(b.yaw - a.yaw)) > self.max_turn + 1e-9:
                raise ConfigError(f"trajectory {self.id}: step {k} turns more than {self.max_turn} rad")

    def __len__(self) -> int:
        return len(self.poses)

    def path_length(self) -> np.ndarray:
        """Cumulative travelled distance at each pose."""
        if not self.poses:
            return np.zeros(0)
        xy = np.array([(p.x, p.y) for p in self.poses])
        return np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])

    def to_dict(self) -> dict:
        return {
            "version": TRAJ_VERSION,
            "id": self.id,
            "poses": [[float(t), p.x, p.y, p.yaw] for t, p in zip(self.timestamps, self.poses)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        if d.get("version") != TRAJ_VERSION:
            raise ConfigError(f"unsupported trajectory version {d.get('version')}")
        rows = d["poses"]
        return cls(str(d["id"]), [r[0] for r in rows], [Pose2(r[1], r[2], r[3]) for r in rows])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_as(self, other: "Trajectory") -> bool:
        return self.to_dict() == other.to_dict()


# -- path construction --------------------------------------------------------


@dataclass
class _Path:
    """Chain of line and arc pieces, sampled by arclength."""

    pieces: list[tuple] = field(default_factory=list)  # ("line", p0, p1) | ("arc", center, r, a0, sweep)

    def length_of(self, piece) -> float:
        if piece[0] == "line":
            return float(np.hypot(*(piece[2] - piece[1])))
        return abs(piece[2] * piece[4])

    def sample(self, step: float) -> list[Pose2]:
        self.pieces = [p for p in self.pieces if self.length_of(p) > 1e-9]
        lengths = [self.length_of(p) for p in self.pieces]
        total = sum(lengths)
        n = int(math.floor(total / step + 1e-9))
        poses = []
        k, acc = 0, 0.0
        for m in range(n + 1):
            s = m * step
            while k < len(lengths) - 1 and s > acc + lengths[k]:
                acc += lengths[k]
                k += 1
            poses.append(self._at(self.pieces[k], s - acc, lengths[k]))
        return poses

    @staticmethod
    def _at(piece, s: float, length: float) -> Pose2:
        if piece[0] == "line":
            p0, p1 = piece[1], piece[2]
            d = (p1 - p0) / length
            q = p0 + d * min(s, length)
            return Pose2(q[0], q[1], math.atan2(d[1], d[0]))
        _, c, r, a0, sweep = piece
        a = a0 + math.copysign(min(s, length) / r, sweep)
        heading = a + math.copysign(math.pi / 2, sweep)
        return Pose2(c[0] + r * math.cos(a), c[1] + r * math.sin(a), heading)


def _offset_right(route: np.ndarray, d: float, closed: bool) -> np.ndarray:
    """Offset a rectilinear route ``d`` metres to the right of travel (miter joins)."""
    pts = route[:-1] if closed else route
    n = len(pts)
    out = []
    for k in range(n):
        prev_pt = pts[k - 1] if (closed or k > 0) else None
        next_pt = pts[(k + 1) % n] if (closed or k < n - 1) else None
        normals = []
        for a, b in ((prev_pt, pts[k]), (pts[k], next_pt)):
            if a is None or b is None:
                continue
            t = (b - a) / np.hypot(*(b - a))
            normals.append(np.array([t[1], -t[0]]))
        if len(normals) == 1:
            out.append(pts[k] + d * normals[0])
        else:
            n0, n1 = normals
            # miter: offset lines intersect at pts + d * (n0 + n1) / (1 + n0.n1)
            out.append(pts[k] + d * (n0 + n1) / (1.0 + float(n0 @ n1)))
    out = np.array(out)
    return np.vstack([out, out[:1]]) if closed else out


def _fillet(route: np.ndarray, radius: float, closed: bool) -> _Path:
    """Round every interior corner of a polyline with a circular arc."""
    pts = route[:-1] if closed else route
    n = len(pts)
    corners = range(n) if closed else range(1, n - 1)
    entry, exit_ = {}, {}
    arcs = {}
    for k in corners:
        a, p, b = pts[k - 1], pts[k], pts[(k + 1) % n]
        u = (p - a) / np.hypot(*(p - a))
        v = (b - p) / np.hypot(*(b - p))
        turn = math.atan2(u[0] * v[1] - u[1] * v[0], float(u @ v))
        if abs(turn) < 1e-12:
            continue
        t = radius * math.tan(abs(turn) / 2)
        entry[k] = p - u * t
        exit_[k] = p + v * t
        left = np.array([-u[1], u[0]]) * math.copysign(1.0, turn)
        center = entry[k] + left * radius
        a0 = math.atan2(entry[k][1] - center[1], entry[k][0] - center[0])
        arcs[k] = ("arc", center, radius, a0, turn)
    path = _Path()
    if closed:
        # start halfway along the first side
        order = list(range(n))
        start = (pts[0] + pts[1]) / 2
        cur = start
        for k in order[1:] + [0]:
            path.pieces.append(("line", cur, entry.get(k, pts[k])))
            if k in arcs:
                path.pieces.append(arcs[k])
            cur = exit_.get(k, pts[k])
        path.pieces.append(("line", cur, start))
    else:
        cur = pts[0]
        for k in range(1, n - 1):
            path.pieces.append(("line", cur, entry.get(k, pts[k])))
            if k in arcs:
                path.pieces.append(arcs[k])
            cur = exit_.get(k, pts[k])
        path.pieces.append(("line", cur, pts[-1]))
    return path


def _timestamps(poses: list[Pose2], speed: float, t0: float) -> np.ndarray:
    xy = np.array([(p.x, p.y) for p in poses])
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    return t0 + s / speed


def generate_trajectory(
    world: World,
    seed: int,
    kind: TrajectoryKind | str = TrajectoryKind.LOOP,
    *,
    laps: int = 2,
    step: float = 0.5,
    speed: float = 10.0,
    turn_radius: float = 6.0,
    start_time: float = 0.0,
) -> Trajectory:
    """Drive the streets of ``world`` in the curb lane (right-hand traffic).

    ``loop`` circles one block ``laps`` times clockwise, ``outback`` runs the
    length of one street and returns in the opposite direction, ``grid`` sweeps
    every street along x in a serpentine.
    """
    kind = TrajectoryKind(kind)
    xs, ys = world.street_x, world.street_y
    if len(xs) < 2 or len(ys) < 2:
        raise ConfigError("world has no streets to drive")
    if not 0 < step <= MAX_STEP:
        raise ConfigError(f"step must be in (0, {MAX_STEP}] m")
    if step / turn_radius > MAX_TURN:
        raise ConfigError(f"step {step} m on a {turn_radius} m turn exceeds {MAX_TURN} rad per frame")
    p = world.params
    lane = p.lane_width * (p.lanes_per_direction - 0.5)
    rng = Xoshiro256.derive(seed, 0x7EA1)
    if kind == TrajectoryKind.LOOP:
        bx = rng.integer(len(xs) - 1)
        by = rng.integer(len(ys) - 1)
        x0, x1, y0, y1 = xs[bx], xs[bx + 1], ys[by], ys[by + 1]
        # clockwise around the block: right turns, block on the right
        ring = np.array([[x0, y0], [x0, y1], [x1, y1], [x1, y0], [x0, y0]], dtype=float)
        ring = _offset_right(ring, lane, closed=True)
        path = _fillet(ring, turn_radius, closed=True)
        path.pieces = path.pieces * max(1, laps)
        poses = path.sample(step)
        tid = f"loop-{seed}"
    elif kind == TrajectoryKind.OUT_AND_BACK:
        m = rng.integer(len(ys))
        y = ys[m]
        a, b = xs[0], xs[-1]
        r = lane
        path = _Path(
            [
                ("line", np.array([a, y - r]), np.array([b, y - r])),
                ("arc", np.array([b, y]), r, -math.pi / 2, math.pi),
                ("line", np.array([b, y + r]), np.array([a, y + r])),
            ]
        )
        if step / r > MAX_TURN:
            raise ConfigError("u-turn too tight for the step size")
        poses = path.sample(step)
        tid = f"outback-{seed}"
    else:
        route = []
        for k, y in enumerate(ys):
            row = [[xs[0], y], [xs[-1], y]]
            route.extend(row if k % 2 == 0 else row[::-1])
        route = np.array(route, dtype=float)
        route = _offset_right(route, lane, closed=False)
        path = _fillet(route, turn_radius, closed=False)
        poses = path.sample(step)
        tid = f"grid-{seed}"
    return Trajectory(tid, _timestamps(poses, speed, start_time), poses)
