"""Trajectory rows streamed to CSV."""
from __future__ import annotations

import csv
from pathlib import Path

TRAJECTORY_COLUMNS = ("episode", "step", "uav", "x", "y", "z", "yaw", "vx", "vz", "vω",
                      "reward", "d_min", "d_goal", "event")


class TrajectoryLog:
    def __init__(self):
        self.rows = []

    def record(self, episode: int, state, rewards, info) -> None:
        for i in info["active"]:
            u = state.uavs[i]
            self.rows.append((episode, state.step_count, i, *map(float, u.position), float(u.yaw),
                              *map(float, u.velocity), float(rewards[i]), float(info["d_min"][i]),
                              float(info["d_t"][i]), info["event"][i]))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            w.writerows(self.rows)
