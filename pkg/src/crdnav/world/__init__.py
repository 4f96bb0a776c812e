from .render import SensorConfig, raycast, render_from_pose
from .scenario import (
    DOMAINS,
    Box,
    Cylinder,
    Heightfield,
    ScenarioSpec,
    Texture,
    generate_scenario,
    load_scenario,
    obstacles_within_bounds,
    save_scenario,
)
from .sim import (
    ACTION_HIGH,
    ACTION_LOW,
    EpisodeConfig,
    RewardConfig,
    UavState,
    WorldState,
    clamp_action,
    min_obstacle_distance,
    observe,
    relative_goal_body,
    render_depth,
    reset,
    reward,
    step,
)
from .trajlog import TRAJECTORY_COLUMNS, TrajectoryLog
