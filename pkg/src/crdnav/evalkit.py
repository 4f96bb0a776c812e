"""Evaluation metrics and the scenario x initialization x swarm-size suite runner."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySuiteError, MalformedRecordError
from .world import generate_scenario, reset, step
from .world.sim import ACTION_HIGH, ACTION_LOW, EpisodeConfig, RewardConfig

REPORT_SCHEMA = "crdnav.metrics"
REPORT_VERSION = 1
DEFAULT_SCENARIOS = ("grassland", "snow_mountain", "forest")
DEFAULT_INITS = ("random", "circle")
DEFAULT_COUNTS = (8,)
EPISODE_CSV_COLUMNS = ("scenario", "init", "uavs", "episode", "uav", "success", "collision",
                       "shortest_path", "actual_path", "steps", "mean_speed")


@dataclass(frozen=True)
class EpisodeRecord:
    """Outcome of one UAV in one episode."""
    success: int
    shortest_path: float
    actual_path: float
    steps: int
    mean_speed: float
    collision: bool = False


def _check(records) -> list:
    records = list(records)
    if not records:
        raise EmptySuiteError("no episode records to summarize")
    for r in records:
        if not r.shortest_path > 0:
            raise MalformedRecordError(f"shortest path must be positive, got {r.shortest_path}")
        if r.actual_path < 0:
            raise MalformedRecordError(f"actual path must be nonnegative, got {r.actual_path}")
        if r.success and r.collision:
            raise MalformedRecordError("a record cannot be both a success and a collision")
    return records


def spl(records) -> float:
    """Success weighted by path length, in percent."""
    rs = _check(records)
    return 100.0 * float(np.mean([r.success * r.shortest_path / max(r.shortest_path, r.actual_path)
                                  for r in rs]))


def success_rate(records) -> float:
    rs = _check(records)
    return 100.0 * float(np.mean([r.success for r in rs]))


def extra_distance(records) -> tuple:
    """(mean, population std) of actual - shortest over successful UAVs; (nan, nan) if none succeed."""
    rs = _check(records)
    d = np.array([r.actual_path - r.shortest_path for r in rs if r.success])
    if d.size == 0:
        return math.nan, math.nan
    return float(d.mean()), float(d.std())


def average_speed(records) -> tuple:
    """(mean, population std) of per-UAV mean speeds."""
    rs = _check(records)
    s = np.array([r.mean_speed for r in rs])
    return float(s.mean()), float(s.std())


@dataclass
class MetricsReport:
    success_rate: float
    spl: float
    extra_distance_mean: float
    extra_distance_std: float
    average_speed_mean: float
    average_speed_std: float
    episodes: int
    records: int
    config: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records, episodes: int, config: dict | None = None) -> "MetricsReport":
        rs = _check(records)
        ed = extra_distance(rs)
        sp = average_speed(rs)
        return cls(success_rate(rs), spl(rs), ed[0], ed[1], sp[0], sp[1], episodes, len(rs), dict(config or {}))


# -- running episodes ----------------------------------------------------------------------
def straight_line_policy(images, o_goal, o_vel):
    """Scripted oracle: turn in place toward the goal, then fly the straight segment to it."""
    g = np.atleast_2d(np.asarray(o_goal, dtype=np.float64))
    heading = np.arctan2(g[:, 1], g[:, 0])
    dh = np.hypot(g[:, 0], g[:, 1])
    vw = np.clip(heading / 0.1, ACTION_LOW[2], ACTION_HIGH[2])
    t = np.maximum.reduce([dh / ACTION_HIGH[0], np.abs(g[:, 2]) / ACTION_HIGH[1], np.full(len(g), 0.1)])
    aligned = np.abs(heading) < 0.05
    vx = np.where(aligned, dh / t, 0.0)
    vz = np.where(aligned, g[:, 2] / t, 0.0)
    return np.stack([vx, vz, vw], axis=1)


def agent_policy(agent):
    def act(images, o_goal, o_vel):
        return agent.select_actions(images, o_goal, o_vel, deterministic=True)
    return act


def run_episode(policy, spec, episode_cfg: EpisodeConfig, rng, reward_cfg: RewardConfig | None = None,
                trajectory=None, episode_index: int = 0) -> list:
    """Run one episode; ``policy(images, goals, vels)`` acts for all active UAVs at once."""
    state, obs = reset(spec, episode_cfg, rng, reward_cfg)
    n = len(state.uavs)
    while not state.done:
        active = [i for i, u in enumerate(state.uavs) if not u.terminal]
        acts = policy(np.stack([obs[i][0].data for i in active]),
                      np.stack([obs[i][1] for i in active]), np.stack([obs[i][2] for i in active]))
        actions = [np.zeros(3) for _ in range(n)]
        for k, i in enumerate(active):
            actions[i] = acts[k]
        _, obs, rewards, _, info = step(state, actions)
        if trajectory is not None:
            trajectory.record(episode_index, state, rewards, info)
    # shortest path: straight segment from the start to the arrival sphere around the goal
    reach = (reward_cfg or RewardConfig()).arrival_threshold
    out = []
    for u in state.uavs:
        elapsed = max(u.steps, 1) * episode_cfg.dt
        out.append(EpisodeRecord(
            success=int(u.arrived and u.alive),
            shortest_path=float(np.linalg.norm(u.goal - u.start) - reach),
            actual_path=float(u.path_length),
            steps=int(u.steps),
            mean_speed=float(u.path_length / elapsed),
            collision=bool(u.collided),
        ))
    return out


def evaluate_policy(policy, scenario: str, init: str, count: int, episodes: int, seed: int,
                    episode_cfg: EpisodeConfig | None = None, reward_cfg: RewardConfig | None = None,
                    obstacle_density: float | None = None, trajectory=None, with_records: bool = False):
    base = episode_cfg or EpisodeConfig()
    cfg = EpisodeConfig(**{**{k: getattr(base, k) for k in base.__dataclass_fields__},
                           "num_uavs": count, "init_pattern": init})
    over = {} if obstacle_density is None else {"obstacle_density": obstacle_density}
    records = []
    for e in range(episodes):
        rng = np.random.default_rng([seed, e])
        spec = generate_scenario(scenario, int(rng.integers(2 ** 31)), **over)
        records.extend(run_episode(policy, spec, cfg, rng, reward_cfg, trajectory, e))
    report = MetricsReport.from_records(records, episodes, {"scenario": scenario, "init": init,
                                                            "uavs": count, "seed": seed})
    return (report, records) if with_records else report


def evaluate_agent(agent, scenario, init, count, episodes, seed, **kw):
    return evaluate_policy(agent_policy(agent), scenario, init, count, episodes, seed, **kw)


# -- suites ---------------------------------------------------------------------------------------
@dataclass
class SuiteResult:
    cells: list                     # list of (scenario, init, count, MetricsReport)
    episode_rows: list

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "cells": [{"scenario": s, "init": i, "uavs": n, **_finite(asdict(r))} for s, i, n, r in self.cells],
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "init", "uavs", "success_rate", "spl", "extra_distance_mean",
                        "extra_distance_std", "average_speed_mean", "average_speed_std", "episodes"])
            for s, i, n, r in self.cells:
                w.writerow([s, i, n, r.success_rate, r.spl, r.extra_distance_mean, r.extra_distance_std,
                            r.average_speed_mean, r.average_speed_std, r.episodes])
        with open(out / "episodes.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_CSV_COLUMNS)
            w.writerows(self.episode_rows)


def _finite(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def run_suite(policy, scenarios=DEFAULT_SCENARIOS, init_patterns=DEFAULT_INITS, uav_counts=DEFAULT_COUNTS,
              episodes_per_cell: int | dict = 100, seed: int = 0, episode_cfg=None, reward_cfg=None) -> SuiteResult:
    """Evaluate ``policy`` (a callable or an agent) on every (scenario, init, count) cell.

    ``episodes_per_cell`` may be a dict keyed by init pattern.
    """
    if hasattr(policy, "select_actions"):
        policy = agent_policy(policy)
    cells, rows = [], []
    grid = list(itertools.product(scenarios, init_patterns, uav_counts))
    if not grid:
        raise EmptySuiteError("evaluation grid is empty")
    for ci, (scen, init, count) in enumerate(grid):
        eps = episodes_per_cell[init] if isinstance(episodes_per_cell, dict) else episodes_per_cell
        rep, recs = evaluate_policy(policy, scen, init, count, eps, seed=seed * 1000 + ci,
                                    episode_cfg=episode_cfg, reward_cfg=reward_cfg, with_records=True)
        cells.append((scen, init, count, rep))
        for k, r in enumerate(recs):
            rows.append([scen, init, count, k // count, k % count, r.success, int(r.collision),
                         r.shortest_path, r.actual_path, r.steps, r.mean_speed])
    return SuiteResult(cells, rows)
