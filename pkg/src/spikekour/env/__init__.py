from .camera import CameraConfig, ray_directions, render_depth
from .lighting import CONDITIONS, corrupt_depth
from .parkour import (
    N_ACT,
    PROPRIO_DIM,
    EnvConfig,
    EpisodeResult,
    Observation,
    ParkourEnv,
    Physics,
    RobotState,
    StepAfterDone,
    curriculum_update,
    motor_energy,
    reward,
    scandots,
    target_yaw,
    wrap,
    write_episode_log,
)
from .terrain import (
    KINDS,
    Course,
    Heightfield,
    TerrainSpec,
    gap_width,
    generate_terrain,
    hurdle_height,
    step_height,
)
from .vec import VecEnv
