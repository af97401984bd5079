from hrmap.simulate.perception import FusionPolicy, NoiseParams, crop_gt, perceive, perturb_pose
from hrmap.simulate.scenario import FrameRecord, ScenarioConfig, ScenarioLog, run_scenario
from hrmap.simulate.trajectory import Trajectory, TrajectoryKind, generate_trajectory
from hrmap.simulate.world import World, WorldParams, generate_world

__all__ = [
    "FrameRecord",
    "FusionPolicy",
    "NoiseParams",
    "ScenarioConfig",
    "ScenarioLog",
    "Trajectory",
    "TrajectoryKind",
    "World",
    "WorldParams",
    "crop_gt",
    "generate_trajectory",
    "generate_world",
    "perceive",
    "perturb_pose",
    "run_scenario",
]
