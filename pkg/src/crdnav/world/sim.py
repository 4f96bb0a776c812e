"""Multi-UAV kinematic simulator with collision, arrival and reward bookkeeping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, LifecycleError, ScenarioTooDenseError
from ..vision import DepthImage
from . import geometry as G
from .render import SensorConfig, render_from_pose

VX_BOUNDS = (0.0, 2.0)
VZ_BOUNDS = (-1.0, 1.0)
VW_BOUNDS = (-1.0, 1.0)
ACTION_LOW = np.array([VX_BOUNDS[0], VZ_BOUNDS[0], VW_BOUNDS[0]])
ACTION_HIGH = np.array([VX_BOUNDS[1], VZ_BOUNDS[1], VW_BOUNDS[1]])
MAX_PLACEMENT_ATTEMPTS = 10_000


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def clamp_action(a) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=np.float64), ACTION_LOW, ACTION_HIGH)


@dataclass
class RewardConfig:
    r_arrival: float = 50.0
    r_collision: float = -10.0
    alpha_goal: float = 3.0
    alpha_avoid: float = -0.05
    d_safe: float = 5.0
    arrival_threshold: float = 0.5


@dataclass
class EpisodeConfig:
    num_uavs: int = 8
    init_pattern: str = "random"          # "random" | "circle"
    max_steps: int = 400
    dt: float = 0.1
    uav_radius: float = 0.3
    sensor: SensorConfig = field(default_factory=SensorConfig)
    box_half_xy: float = 8.0              # random pattern: 16 x 16 m footprint ...
    box_z: tuple = (2.0, 6.0)             # ... by 4 m height
    circle_radius: float = 12.0
    circle_height: float = 4.0
    min_separation: float = 1.0           # between starts; at least 2 * uav_radius
    min_goal_distance: float = 2.0
    placement_clearance: float = 1.0      # start/goal distance to obstacles and terrain
    d_min_source: str = "ground_truth"    # or "sensor"

    def __post_init__(self):
        if self.num_uavs < 1:
            raise ConfigError("num_uavs must be >= 1")
        if self.dt <= 0 or self.max_steps <= 0:
            raise ConfigError("dt and max_steps must be positive")
        if self.init_pattern not in ("random", "circle"):
            raise ConfigError(f"unknown init_pattern {self.init_pattern!r}")
        if self.d_min_source not in ("ground_truth", "sensor"):
            raise ConfigError(f"unknown d_min_source {self.d_min_source!r}")
        if isinstance(self.sensor, dict):
            self.sensor = SensorConfig(**self.sensor)


@dataclass
class UavState:
    position: np.ndarray
    yaw: float
    goal: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alive: bool = True
    arrived: bool = False
    path_length: float = 0.0
    start: np.ndarray | None = None
    steps: int = 0

    @property
    def terminal(self) -> bool:
        return self.arrived or not self.alive

    @property
    def collided(self) -> bool:
        return not self.alive


@dataclass
class WorldState:
    spec: object
    cfg: EpisodeConfig
    reward_cfg: RewardConfig
    uavs: list
    step_count: int = 0
    done: bool = False
    last_images: list = field(default_factory=list)


# -- geometry helpers ------------------------------------------------------------
def relative_goal_body(position, yaw: float, goal) -> np.ndarray:
    """World-frame goal offset rotated by -yaw: (forward, left, up)."""
    d = np.asarray(goal, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])


def body_to_world(vec, yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1], vec[2]])


def _obstacle_distance(q, spec) -> float:
    best = np.inf
    if spec.cylinders:
        cs = spec.cylinders
        dist = G.point_cylinder_distance(
            q, np.array([c.center for c in cs]), np.array([c.radius for c in cs]),
            np.array([c.z_lo for c in cs]), np.array([c.z_hi for c in cs]))
        best = min(best, float(dist.min()))
    if spec.boxes:
        dist = G.point_box_distance(q, np.array([b.center for b in spec.boxes]),
                                    np.array([b.half_extents for b in spec.boxes]))
        best = min(best, float(dist.min()))
    return best


def _terrain_clearance(q, spec) -> float:
    if spec.terrain is None:
        return np.inf
    return float(q[2] - spec.terrain.height(q[0], q[1]))


def clearances(q, spec, others=(), uav_radius: float = 0.3) -> dict:
    """Distances from point q to each class of surface."""
    uav = np.inf
    if len(others):
        uav = float(np.min(np.linalg.norm(np.asarray(others) - q, axis=1))) - uav_radius
    return {
        "obstacle": _obstacle_distance(q, spec),
        "terrain": _terrain_clearance(q, spec),
        "bounds": G.bounds_distance(q, spec.bounds),
        "uav": uav,
    }


def _other_positions(state: WorldState, i: int) -> list:
    return [u.position for j, u in enumerate(state.uavs) if j != i and not u.terminal]


def min_obstacle_distance(state: WorldState, uav_index: int, spec=None) -> float:
    """Ground-truth distance from the UAV center to the nearest surface (inf if none)."""
    spec = spec or state.spec
    u = state.uavs[uav_index]
    c = clearances(u.position, spec, _other_positions(state, uav_index), state.cfg.uav_radius)
    return float(min(c.values()))


# -- reward ------------------------------------------------------------------------
def goal_reward(d_t: float, d_prev: float, arrived: bool, cfg: RewardConfig) -> float:
    # progress is rewarded as alpha_goal * (d_prev - d_t): approaching the goal is positive
    return cfg.r_arrival if arrived else cfg.alpha_goal * (d_prev - d_t)


def avoid_reward(d_min: float, crashed: bool, cfg: RewardConfig) -> float:
    if crashed:
        return cfg.r_collision
    if not math.isfinite(d_min):
        d_min = cfg.d_safe
    return cfg.alpha_avoid * max(cfg.d_safe - d_min, 0.0)


def reward(d_t: float, d_prev: float, d_min: float, crashed: bool, arrived: bool | None = None,
           cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    if arrived is None:
        arrived = (d_t < cfg.arrival_threshold) and not crashed
    return goal_reward(d_t, d_prev, arrived, cfg) + avoid_reward(d_min, crashed, cfg)


# -- lifecycle ---------------------------------------------------------------------
def _clear_enough(q, spec, cfg: EpisodeConfig) -> bool:
    c = clearances(q, spec)
    return (c["obstacle"] >= cfg.placement_clearance and c["terrain"] >= cfg.placement_clearance
            and c["bounds"] >= cfg.placement_clearance)


def _face(start, goal) -> float:
    return math.atan2(goal[1] - start[1], goal[0] - start[0])


def _place_random(spec, cfg: EpisodeConfig, rng) -> list:
    lo = np.array([-cfg.box_half_xy, -cfg.box_half_xy, cfg.box_z[0]])
    hi = np.array([cfg.box_half_xy, cfg.box_half_xy, cfg.box_z[1]])
    sep = max(cfg.min_separation, 2 * cfg.uav_radius)
    starts, goals = [], []
    attempts = 0
    while len(starts) < cfg.num_uavs:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise ScenarioTooDenseError(
                f"could not place {cfg.num_uavs} UAVs in {spec.domain_name} after {MAX_PLACEMENT_ATTEMPTS} attempts")
        s = rng.uniform(lo, hi)
        g = rng.uniform(lo, hi)
        if np.linalg.norm(g - s) < cfg.min_goal_distance:
            continue
        if any(np.linalg.norm(s - p) < sep for p in starts):
            continue
        if not (_clear_enough(s, spec, cfg) and _clear_enough(g, spec, cfg)):
            continue
        starts.append(s)
        goals.append(g)
    return list(zip(starts, goals))


def _place_circle(spec, cfg: EpisodeConfig, rng) -> list:
    n = cfg.num_uavs
    for attempt in range(MAX_PLACEMENT_ATTEMPTS):
        offset = 0.0 if attempt == 0 else float(rng.uniform(0, 2 * math.pi / n))
        angles = offset + 2 * math.pi * np.arange(n) / n
        z = cfg.circle_height
        starts = [np.array([cfg.circle_radius * math.cos(a), cfg.circle_radius * math.sin(a), z]) for a in angles]
        goals = [np.array([-s[0], -s[1], z]) for s in starts]
        if all(_clear_enough(p, spec, cfg) for p in starts + goals):
            return list(zip(starts, goals))
    raise ScenarioTooDenseError(f"no clear circle placement in {spec.domain_name}")


def reset(spec, cfg: EpisodeConfig, rng: np.random.Generator, reward_cfg: RewardConfig | None = None):
    """Place UAVs and return ``(state, observations)``."""
    pairs = _place_random(spec, cfg, rng) if cfg.init_pattern == "random" else _place_circle(spec, cfg, rng)
    uavs = [UavState(position=s.copy(), yaw=wrap_angle(_face(s, g)), goal=g.copy(), start=s.copy())
            for s, g in pairs]
    state = WorldState(spec=spec, cfg=cfg, reward_cfg=reward_cfg or RewardConfig(), uavs=uavs)
    obs = [observe(state, i) for i in range(len(uavs))]
    state.last_images = [o[0] for o in obs]
    return state, obs


def render_depth(state: WorldState, uav_index: int, spec=None, sensor: SensorConfig | None = None) -> DepthImage:
    spec = spec or state.spec
    sensor = sensor or state.cfg.sensor
    u = state.uavs[uav_index]
    if not u.alive:
        raise LifecycleError(f"UAV {uav_index} has crashed; it has no camera")
    return render_from_pose(u.position, u.yaw, spec, sensor, _other_positions(state, uav_index), state.cfg.uav_radius)


def observe(state: WorldState, i: int):
    """(depth image, relative goal in body frame, last velocity command)."""
    u = state.uavs[i]
    img = render_depth(state, i) if u.alive else state.last_images[i]
    return img, relative_goal_body(u.position, u.yaw, u.goal), u.velocity.copy()


def step(state: WorldState, actions):
    """Advance one tick.  Returns ``(state, observations, rewards, dones, info)``.

    ``actions`` holds one command per UAV (entries for terminal UAVs are ignored).
    """
    if state.done:
        raise LifecycleError("episode is over; call reset()")
    cfg, rcfg = state.cfg, state.reward_cfg
    n = len(state.uavs)
    if len(actions) != n:
        raise LifecycleError(f"expected {n} actions, got {len(actions)}")
    active = [i for i, u in enumerate(state.uavs) if not u.terminal]
    d_prev = {i: float(np.linalg.norm(state.uavs[i].goal - state.uavs[i].position)) for i in active}
    increments = np.zeros(n)
    for i in active:
        u = state.uavs[i]
        a = clamp_action(actions[i])
        u.velocity = a
        u.yaw = wrap_angle(u.yaw + a[2] * cfg.dt)
        delta = np.array([a[0] * math.cos(u.yaw) * cfg.dt, a[0] * math.sin(u.yaw) * cfg.dt, a[1] * cfg.dt])
        u.position = u.position + delta
        increments[i] = float(np.linalg.norm(delta))
        u.path_length += increments[i]
        u.steps += 1

    rewards = np.zeros(n)
    info = {k: [None] * n for k in ("d_min", "d_t", "d_prev", "r_g", "r_c", "event")}
    info["path_increment"] = increments.tolist()
    crashed, arrived, d_mins = {}, {}, {}
    for i in active:
        u = state.uavs[i]
        others = [state.uavs[j].position for j in active if j != i]
        c = clearances(u.position, state.spec, others, cfg.uav_radius)
        d_min = float(min(c.values()))
        crashed[i] = (c["obstacle"] < cfg.uav_radius or c["terrain"] < cfg.uav_radius
                      or c["uav"] < cfg.uav_radius or c["bounds"] < 0.0)
        d_t = float(np.linalg.norm(u.goal - u.position))
        arrived[i] = (d_t < rcfg.arrival_threshold) and not crashed[i]
        d_mins[i] = d_min
        info["d_t"][i] = d_t
        info["d_prev"][i] = d_prev[i]
    state.step_count += 1
    for i in active:
        u = state.uavs[i]
        d_min = d_mins[i]
        if cfg.d_min_source == "sensor" and not crashed[i]:
            d_min = float(np.min(render_depth(state, i).data))
        rg = goal_reward(info["d_t"][i], d_prev[i], arrived[i], rcfg)
        rc = avoid_reward(d_min, crashed[i], rcfg)
        rewards[i] = rg + rc
        info["d_min"][i], info["r_g"][i], info["r_c"][i] = d_min, rg, rc
        if crashed[i]:
            u.alive = False
            info["event"][i] = "collision"
        elif arrived[i]:
            u.arrived = True
            info["event"][i] = "arrival"
        else:
            info["event"][i] = ""

    all_terminal = all(u.terminal for u in state.uavs)
    if state.step_count >= cfg.max_steps and not all_terminal:
        for i, u in enumerate(state.uavs):
            if not u.terminal and i in active:
                info["event"][i] = "timeout"
    state.done = all_terminal or state.step_count >= cfg.max_steps
    dones = [u.terminal for u in state.uavs]
    obs = []
    for i in range(n):
        if i in active:
            o = observe(state, i)
            state.last_images[i] = o[0]
        else:
            u = state.uavs[i]
            o = (state.last_images[i], relative_goal_body(u.position, u.yaw, u.goal), u.velocity.copy())
        obs.append(o)
    info["active"] = active
    return state, obs, rewards, dones, info
