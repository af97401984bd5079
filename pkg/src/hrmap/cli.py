"""``hrmap`` command line.

Exit codes: 0 success, 1 validation error (bad flags, schema or format
violations), 2 I/O error (missing or unreadable files).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from hrmap import evaluation, mapstore, render
from hrmap.errors import HrmapError
from hrmap.simulate.scenario import ScenarioConfig, ScenarioLog, run_scenario, validate
from hrmap.simulate.trajectory import TrajectoryKind, generate_trajectory
from hrmap.simulate.world import World, WorldParams, generate_world

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


class UsageError(HrmapError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None


def _write_text(path, text: str) -> None:
    Path(path).write_text(text)


# -- commands -------------------------------------------------------------------


def cmd_gen_world(a) -> None:
    params = None
    if a.params:
        doc = _read_json(a.params)
        validate(doc, "world_params")
        params = WorldParams.from_dict(doc)
    world = generate_world(a.seed, params)
    world.save(a.out)
    print(json.dumps({"extent": list(world.extent), "census": world.census()}))


def cmd_gen_traj(a) -> None:
    world = World.load(a.world)
    traj = generate_trajectory(world, a.seed, a.kind, laps=a.laps, step=a.step, speed=a.speed)
    traj.save(a.out)
    print(json.dumps({"id": traj.id, "poses": len(traj)}))


def cmd_run(a) -> None:
    config = ScenarioConfig.load(a.scenario)
    if a.initial_map:
        if not Path(a.initial_map).exists():
            raise FileNotFoundError(f"initial map not found: {a.initial_map}")
        config = config.replace(initial_map=a.initial_map)
    gmap, log = run_scenario(config)
    mapstore.save(gmap, a.map_out)
    log.write(a.log_out)
    print(json.dumps({"frames": len(log), **gmap.memory_stats().to_dict()}))


def cmd_eval(a) -> None:
    log = ScenarioLog.read(a.log)
    gmap = mapstore.load(a.map) if a.map else None
    report = evaluation.evaluate(log, gmap=gmap).to_dict()
    if a.revisit:
        report["revisit"] = evaluation.revisit_delta(log).to_dict()
    _write_text(a.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"mAP": report["mAP"], "mIoU": report["mIoU"], "prior_mIoU": report["prior_mIoU"]}))


def cmd_sweep(a) -> None:
    config = ScenarioConfig.load(a.scenario)
    result = evaluation.noise_sweep(config, a.sigma_t, a.sigma_r, workers=a.workers, metrics=(a.metric,))
    _write_text(a.out, result.to_csv(a.metric))


def cmd_render(a) -> None:
    if a.map:
        if not a.out:
            raise UsageError("render --map needs --out")
        render.render_global(mapstore.load(a.map), a.out, a.mode)
    if a.log:
        if not a.frames_dir:
            raise UsageError("render --log needs --frames-dir")
        log = ScenarioLog.read(a.log)
        if a.layer == "prior":
            masks = (r.prior_mask(log.window) for r in log)
        else:
            masks = (log.rasterize(getattr(r, a.layer)) for r in log)
        render.render_sequence(masks, a.frames_dir, prefix=a.layer)
    if not a.map and not a.log:
        raise UsageError("render needs --map or --log")


def cmd_inspect(a) -> None:
    data = Path(a.map).read_bytes()
    gmap = mapstore.GlobalMap.from_bytes(data)
    stats = gmap.memory_stats()
    counts = gmap.nonzero_counts()
    lines = [
        f"file: {a.map} ({len(data)} bytes)",
        f"version: {mapstore.VERSION}",
        f"resolution: {gmap.grid.resolution}",
        f"origin: {gmap.grid.origin[0]} {gmap.grid.origin[1]}",
        f"tile_size: {gmap.tile_size}",
        f"channels: {gmap.channels}",
        f"s_plus: {gmap.params.s_plus}",
        f"s_minus: {gmap.params.s_minus}",
        f"s_th: {gmap.params.s_th}",
        f"tiles: {stats.allocated_tiles}",
        f"stored_bytes: {stats.stored_bytes}",
        f"index_bytes: {stats.index_bytes}",
        f"visited_extent_m2: {stats.visited_extent}",
        "nonzero: " + " ".join(f"{name}={n}" for name, n in zip(("div", "ped", "bou"), counts)),
    ]
    print("\n".join(lines))


def cmd_merge(a) -> None:
    paths = [p for p in a.inputs.split(",") if p]
    if not paths:
        raise UsageError("merge --in needs at least one map")
    dst = mapstore.load(paths[0])
    for p in paths[1:]:
        mapstore.merge(dst, mapstore.load(p))
    mapstore.save(dst, a.out)


# -- wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hrmap", description="Rasterized evidence maps: build, inspect, simulate, evaluate and render.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-world", help="generate a synthetic street-grid world")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--params", help="world parameter JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_world)

    s = sub.add_parser("gen-traj", help="generate a trajectory through a world")
    s.add_argument("--world", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--kind", choices=[k.value for k in TrajectoryKind], default="loop")
    s.add_argument("--laps", type=int, default=2)
    s.add_argument("--step", type=float, default=0.5)
    s.add_argument("--speed", type=float, default=10.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_traj)

    s = sub.add_parser("run", help="run a closed-loop scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--map-out", required=True)
    s.add_argument("--log-out", required=True)
    s.add_argument("--initial-map", help="overrides the scenario's initial_map")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score a scenario log")
    s.add_argument("--log", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--map", help="map file for memory statistics")
    s.add_argument("--revisit", action="store_true", help="add first-visit vs revisit mAP")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="pose-noise sweep (rows sigma_r, columns sigma_t)")
    s.add_argument("--scenario", required=True)
    s.add_argument("--sigma-t", type=_floats, required=True)
    s.add_argument("--sigma-r", type=_floats, required=True)
    s.add_argument("--metric", choices=["mAP", "prior_mIoU"], default="mAP")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("render", help="write PNGs of a map or of per-frame masks")
    s.add_argument("--map")
    s.add_argument("--mode", choices=[m.value for m in render.RenderMode], default="thresholded")
    s.add_argument("--out")
    s.add_argument("--log", help="log whose frames to render as a numbered sequence")
    s.add_argument("--layer", choices=["prior", "prediction", "gt"], default="prior")
    s.add_argument("--frames-dir")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("inspect", help="print a map file's header and statistics")
    s.add_argument("--map", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("merge", help="sum several maps' evidence into one")
    s.add_argument("--in", dest="inputs", required=True, help="comma-separated map files")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_merge)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (HrmapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
