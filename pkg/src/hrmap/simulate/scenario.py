"""Closed-loop scenario runner: retrieve prior, perceive, rasterize, update."""

from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable

import jsonschema

from hrmap.errors import ConfigError
from hrmap.geometry import GridSpec, Pose2, WindowSpec
from hrmap.mapstore import DEFAULT_TILE_SIZE, GlobalMap, UpdateParams, load
from hrmap.raster import DEFAULT_HALFWIDTH, LocalMask, VectorMap, rasterize_local
from hrmap.rng import Xoshiro256
from hrmap.simulate.perception import FusionPolicy, NoiseParams, crop_gt, perceive, perturb_pose
from hrmap.simulate.trajectory import Trajectory, generate_trajectory
from hrmap.simulate.world import World, WorldParams, generate_world

SCENARIO_VERSION = 1
LOG_VERSION = 1

POSE_STREAM = 1
PERCEPTION_STREAM = 2


def load_schema(name: str) -> dict:
    text = resources.files("hrmap.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc: dict, schema_name: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{schema_name} schema violation at {where}: {exc.message}") from None


@dataclass(eq=False)
class ScenarioConfig:
    world: World
    trajectories: list[Trajectory]
    noise: NoiseParams = field(default_factory=NoiseParams)
    fusion: FusionPolicy = field(default_factory=FusionPolicy)
    update: UpdateParams = field(default_factory=UpdateParams)
    window: WindowSpec = field(default_factory=WindowSpec)
    initial_map: str | None = None
    rng_seed: int = 0
    stroke_halfwidth: float = DEFAULT_HALFWIDTH
    min_confidence: float = 0.0
    fill_crossings: bool = False
    tile_size: int = DEFAULT_TILE_SIZE

    def replace(self, **changes) -> "ScenarioConfig":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ScenarioConfig(**kw)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> "ScenarioConfig":
        """Build a config from its JSON form; relative paths resolve against ``base_dir``."""
        validate(doc, "scenario")
        base = Path(base_dir)

        def resolve(p: str) -> Path:
            path = Path(p)
            return path if path.is_absolute() else base / path

        w = doc["world"]
        if "path" in w:
            wpath = resolve(w["path"])
            if not wpath.exists():
                raise FileNotFoundError(f"world file not found: {wpath}")
            world = World.load(wpath)
        else:
            world = generate_world(w["seed"], WorldParams.from_dict(w.get("params")))
        trajectories = []
        for k, t in enumerate(doc["trajectories"]):
            if "path" in t:
                tpath = resolve(t["path"])
                if not tpath.exists():
                    raise FileNotFoundError(f"trajectory file not found: {tpath}")
                trajectories.append(Trajectory.load(tpath))
            else:
                opts = {key: t[key] for key in ("laps", "step", "speed", "turn_radius", "start_time") if key in t}
                trajectories.append(generate_trajectory(world, t["seed"], t["kind"], **opts))
        initial = doc.get("initial_map")
        if initial is not None:
            initial = str(resolve(initial))
            if not Path(initial).exists():
                raise FileNotFoundError(f"initial map not found: {initial}")
        return cls(
            world=world,
            trajectories=trajectories,
            noise=NoiseParams.from_dict(doc.get("noise")),
            fusion=FusionPolicy.from_dict(doc.get("fusion")),
            update=UpdateParams(**doc.get("update", {})),
            window=WindowSpec(**doc.get("window", {})),
            initial_map=initial,
            rng_seed=doc.get("rng_seed", 0),
            stroke_halfwidth=doc.get("stroke_halfwidth", DEFAULT_HALFWIDTH),
            min_confidence=doc.get("min_confidence", 0.0),
            fill_crossings=doc.get("fill_crossings", False),
            tile_size=doc.get("tile_size", DEFAULT_TILE_SIZE),
        )

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)


@dataclass(eq=False)
class FrameRecord:
    index: int
    vehicle: int
    trajectory_id: str
    step: int
    timestamp: float
    true_pose: Pose2
    noisy_pose: Pose2
    prediction: VectorMap
    gt: VectorMap
    prior: bytes  # packed bits of the retrieved LocalMask

    def prior_mask(self, window: WindowSpec) -> LocalMask:
        return LocalMask.unpack(window, self.prior)

    def to_dict(self) -> dict:
        return {
            "type": "frame",
            "index": self.index,
            "vehicle": self.vehicle,
            "trajectory": self.trajectory_id,
            "step": self.step,
            "t": self.timestamp,
            "true_pose": list(self.true_pose.as_tuple()),
            "noisy_pose": list(self.noisy_pose.as_tuple()),
            "prediction": [e.to_dict() for e in self.prediction.elements],
            "gt": [e.to_dict() for e in self.gt.elements],
            "prior": base64.b64encode(self.prior).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRecord":
        return cls(
            index=d["index"],
            vehicle=d["vehicle"],
            trajectory_id=d["trajectory"],
            step=d["step"],
            timestamp=d["t"],
            true_pose=Pose2(*d["true_pose"]),
            noisy_pose=Pose2(*d["noisy_pose"]),
            prediction=VectorMap.from_dict({"frame": "ego", "elements": d["prediction"]}),
            gt=VectorMap.from_dict({"frame": "ego", "elements": d["gt"]}),
            prior=base64.b64decode(d["prior"]),
        )


@dataclass(eq=False)
class ScenarioLog:
    window: WindowSpec
    stroke_halfwidth: float = DEFAULT_HALFWIDTH
    min_confidence: float = 0.0
    fill_crossings: bool = False
    records: list[FrameRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, records: Iterable[FrameRecord]) -> "ScenarioLog":
        return ScenarioLog(self.window, self.stroke_halfwidth, self.min_confidence, self.fill_crossings, list(records))

    def rasterize(self, vm: VectorMap) -> LocalMask:
        return rasterize_local(
            vm, self.window, self.stroke_halfwidth, min_confidence=self.min_confidence, fill_crossings=self.fill_crossings
        )

    def header(self) -> dict:
        return {
            "type": "header",
            "version": LOG_VERSION,
            "window": self.window.to_dict(),
            "stroke_halfwidth": self.stroke_halfwidth,
            "min_confidence": self.min_confidence,
            "fill_crossings": self.fill_crossings,
            "frames": len(self.records),
        }

    def lines(self) -> Iterable[str]:
        yield json.dumps(self.header())
        for r in self.records:
            yield json.dumps(r.to_dict())

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read(cls, path) -> "ScenarioLog":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise ConfigError(f"{path}: empty log")
        try:
            head = json.loads(lines[0])
            if head.get("type") != "header" or head.get("version") != LOG_VERSION:
                raise ConfigError(f"{path}: missing or unsupported log header")
            log = cls(
                WindowSpec(**head["window"]),
                head["stroke_halfwidth"],
                head.get("min_confidence", 0.0),
                head.get("fill_crossings", False),
            )
            for ln in lines[1:]:
                log.records.append(FrameRecord.from_dict(json.loads(ln)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: malformed log ({exc})") from None
        return log


def frame_order(trajectories: list[Trajectory]) -> list[tuple[float, int, int]]:
    """All (timestamp, vehicle, step) triples merged by time; ties go to the lower vehicle."""
    out = [(float(t), v, k) for v, traj in enumerate(trajectories) for k, t in enumerate(traj.timestamps)]
    out.sort()
    return out


def trajectory_keys(trajectories: list[Trajectory]) -> list[int]:
    """Random-stream key per trajectory, from its id.

    Keying by id rather than by position means a vehicle sees the same noise
    whether it runs alone or alongside others.
    """
    ids = [t.id for t in trajectories]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"trajectory ids must be unique, got {ids}")
    return [zlib.crc32(i.encode("utf-8")) for i in ids]


def initial_map_for(config: ScenarioConfig) -> GlobalMap:
    if config.initial_map is None:
        return GlobalMap(GridSpec(resolution=config.window.resolution), config.tile_size, config.update)
    gmap = load(config.initial_map)
    if gmap.grid.resolution != config.window.resolution:
        raise ConfigError("initial map resolution differs from the scenario window")
    gmap.params = config.update
    return gmap


Observer = Callable[[FrameRecord, tuple], None]


def run_scenario(config: ScenarioConfig, observer: Observer | None = None) -> tuple[GlobalMap, ScenarioLog]:
    """Run every trajectory frame through the closed loop.

    Per frame: perturb the pose, retrieve the prior at the noisy pose, perceive
    from the true pose, rasterize, and update the map at the noisy pose.
    Random streams are derived from (rng_seed, trajectory id, step).
    ``observer`` (if given) receives each record and the touched global cells.
    """
    keys = trajectory_keys(config.trajectories)
    gmap = initial_map_for(config)
    window = config.window
    noise = config.noise
    log = ScenarioLog(window, config.stroke_halfwidth, config.min_confidence, config.fill_crossings)
    for index, (t, v, k) in enumerate(frame_order(config.trajectories)):
        traj = config.trajectories[v]
        true_pose = traj.poses[k]
        noisy = perturb_pose(true_pose, noise.sigma_t, noise.sigma_r, Xoshiro256.derive(config.rng_seed, keys[v], k, POSE_STREAM))
        prior = gmap.retrieve(noisy, window)
        gt = crop_gt(config.world, true_pose, window)
        rng = Xoshiro256.derive(config.rng_seed, keys[v], k, PERCEPTION_STREAM)
        pred = perceive(config.world, true_pose, noise, prior, config.fusion, rng, window, config.stroke_halfwidth, gt=gt)
        mask = log.rasterize(pred)
        touched = gmap.update(mask, noisy)
        rec = FrameRecord(index, v, traj.id, k, t, true_pose, noisy, pred, gt, prior.pack())
        log.records.append(rec)
        if observer is not None:
            observer(rec, touched)
    return gmap, log
