import struct
import sys
import zlib
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hrmap.geometry import WindowSpec  # noqa: E402
from hrmap.mapstore import HEADER, GlobalMap  # noqa: E402
from hrmap.geometry import Pose2  # noqa: E402
from hrmap.raster import Category, Frame, LocalMask, MapElement, VectorMap  # noqa: E402
from hrmap.simulate import FrameRecord, ScenarioLog, WorldParams, generate_trajectory, generate_world  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def world():
    return generate_world(1)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(5, WorldParams(blocks_x=2, blocks_y=2))


@pytest.fixture(scope="session")
def loop(world):
    return generate_trajectory(world, 1, "loop")


@pytest.fixture
def window():
    return WindowSpec()


def random_vector_map(rng: np.random.Generator, n_max: int = 10, span=(35.0, 20.0)) -> VectorMap:
    """Random ego-frame map; some elements stick out of the default window."""
    elements = []
    for _ in range(int(rng.integers(0, n_max + 1))):
        n = int(rng.integers(2, 7))
        pts = rng.uniform([-span[0], -span[1]], [span[0], span[1]], size=(n, 2))
        elements.append(MapElement(Category(int(rng.integers(3))), pts, float(rng.uniform(0.3, 1.0))))
    return VectorMap(elements, Frame.EGO)


# (corruption kind, designated load error)
CORRUPTIONS = [
    ("magic", "bad magic"),
    ("header", "truncated header"),
    ("version", "unsupported version"),
    ("truncated", "truncated payload"),
    ("crc", "crc mismatch"),
    ("duplicate", "duplicate tile index"),
    ("order", "out of order"),
]


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def corrupt_map_bytes(kind: str) -> bytes:
    """A two-tile map file damaged in one specific way."""
    g = GlobalMap(tile_size=4)
    for key in [(0, 0), (1, 0)]:
        g.tiles[key] = np.ones((3, 4, 4), np.uint8)
    good = g.to_bytes()
    body = good[:-4]
    h, rec = HEADER.size, 8 + 3 * 16
    first, second = body[h : h + rec], body[h + rec : h + 2 * rec]
    if kind == "magic":
        return b"XXXX" + good[4:]
    if kind == "header":
        return good[:20]
    if kind == "version":
        return _with_crc(body[:4] + struct.pack("<H", 2) + body[6:])
    if kind == "truncated":
        return good[:-10]
    if kind == "crc":
        return good[:-1] + bytes([good[-1] ^ 1])
    if kind == "duplicate":
        return _with_crc(body[:h] + first + first)
    if kind == "order":
        return _with_crc(body[:h] + second + first)
    raise ValueError(kind)


# -- metric fixtures ------------------------------------------------------------


def make_log(frames, poses=None) -> ScenarioLog:
    log = ScenarioLog(WindowSpec())
    prior = LocalMask.zeros(log.window).pack()
    for k, (preds, gts) in enumerate(frames):
        pose = poses[k] if poses else Pose2(k * 100.0, 0, 0)
        log.records.append(FrameRecord(k, 0, "t", k, float(k), pose, pose, preds, gts, prior))
    return log


def vm(items):
    return VectorMap([MapElement(Category(c), p, conf) for c, p, conf in items])


def random_fixture(rng, max_per_cat=4, conf_levels=None, min_gt=0):
    """Two frames with <= max_per_cat GT and prediction elements per category."""
    frames, ref = [], []
    for _ in range(2):
        gts, preds = [], []
        for c in range(3):
            for _ in range(int(rng.integers(min_gt, max_per_cat + 1))):
                start = rng.uniform(-20, 20, 2)
                pts = start + np.cumsum(rng.uniform(-3, 3, (int(rng.integers(2, 4)), 2)), axis=0)
                gts.append((c, pts, 1.0))
        for c in range(3):
            same = [g for g in gts if g[0] == c]
            for g in same[: max_per_cat]:
                if rng.random() < 0.8:
                    noisy = g[1] + rng.normal(0, rng.choice([0.1, 0.5, 1.2]), g[1].shape)
                    preds.append((c, noisy, None))
            while sum(1 for p in preds if p[0] == c) < max_per_cat and rng.random() < 0.3:
                start = rng.uniform(-20, 20, 2)
                preds.append((c, start + np.cumsum(rng.uniform(-3, 3, (2, 2)), axis=0), None))
        preds = [
            (c, p, float(rng.choice(conf_levels)) if conf_levels else float(rng.uniform(0.3, 0.95)))
            for c, p, _ in preds
        ]
        frames.append((vm(preds), vm(gts)))
        ref.append((preds, gts))
    return frames, ref
