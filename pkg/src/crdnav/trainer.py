"""Centralized training with decentralized execution.

Every UAV acts on its own observation through one shared policy; all UAVs'
transitions go into one shared replay buffer.  Each episode is a full rollout
followed by ``updates_per_episode`` gradient steps (once the warmup is met).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .config import RunConfig, TrainConfig
from .errors import LayoutError, NumericError, TrainingAborted
from .policy import BUFFER_FIELDS, ReplayBuffer, SACAgent, Transition
from .world import generate_scenario, reset, step
from .world.sim import ACTION_HIGH, ACTION_LOW

__all__ = ["TrainConfig", "TrainRecord", "TrainLog", "Trainer", "train", "run_ablation",
           "save_checkpoint", "load_checkpoint", "ABLATION_MASKS", "run_transfer"]

ABLATION_MASKS = (("z2", "z3"), ("z2",), ("z3",), ("z1", "z2", "z3"))
LOSS_KEYS = ("l_vae", "l_rec", "l_align", "l_q", "l_pi", "alpha")


@dataclass
class TrainRecord:
    episode: int
    return_mean: float
    return_std: float
    successes: int
    collisions: int
    steps: int
    buffer_size: int
    updates: int
    l_vae: float = math.nan
    l_rec: float = math.nan
    l_align: float = math.nan
    l_q: float = math.nan
    l_pi: float = math.nan
    alpha: float = math.nan
    eval_success: float = math.nan


TRAIN_LOG_COLUMNS = tuple(f.name for f in TrainRecord.__dataclass_fields__.values())


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec: TrainRecord) -> None:
        if self.records and rec.episode <= self.records[-1].episode:
            raise ValueError("episode indices must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> list:
        return [asdict(r) for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=TRAIN_LOG_COLUMNS)
            w.writeheader()
            for row in self.to_rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    @classmethod
    def from_rows(cls, rows) -> "TrainLog":
        return cls([TrainRecord(**r) for r in rows])


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


class Trainer:
    """Owns the agent, the buffer, the random streams and the training log."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        tc = cfg.train
        seeds = np.random.SeedSequence(tc.seed).spawn(4)
        init_rng, self.env_rng, self.act_rng, self.update_rng = (np.random.default_rng(s) for s in seeds)
        self.agent = SACAgent(cfg.agent_config(), init_rng)
        self.episode_cfg = cfg.episode_config()
        self.buffer = ReplayBuffer(tc.buffer_capacity, (cfg.sensor.height, cfg.sensor.width))
        self.log = TrainLog()
        self.episode = 0
        self.total_updates = 0

    # -- rollout ----------------------------------------------------------------
    def _scenario(self):
        tc = self.cfg.train
        over = {} if tc.obstacle_density is None else {"obstacle_density": tc.obstacle_density}
        return generate_scenario(tc.scenario, int(self.env_rng.integers(2 ** 31)), **over)

    def collect_episode(self):
        """Roll out one episode with the shared policy; returns (returns, successes, collisions, steps)."""
        spec = self._scenario()
        state, obs = reset(spec, self.episode_cfg, self.env_rng, self.cfg.reward)
        n = len(state.uavs)
        returns = np.zeros(n)
        warm = len(self.buffer) < self.cfg.train.warmup
        while not state.done:
            active = [i for i, u in enumerate(state.uavs) if not u.terminal]
            actions = [np.zeros(3) for _ in range(n)]
            if warm:
                for i in active:
                    actions[i] = self.act_rng.uniform(ACTION_LOW, ACTION_HIGH)
            else:
                imgs = np.stack([obs[i][0].data for i in active])
                goals = np.stack([obs[i][1] for i in active])
                vels = np.stack([obs[i][2] for i in active])
                acts = self.agent.select_actions(imgs, goals, vels, deterministic=False, rng=self.act_rng)
                for k, i in enumerate(active):
                    actions[i] = acts[k]
            _, next_obs, rewards, _, info = step(state, actions)
            for i in active:
                ev = info["event"][i]
                self.buffer.push(Transition(
                    obs[i][0].data, obs[i][1], obs[i][2], actions[i], float(rewards[i]),
                    next_obs[i][0].data, next_obs[i][1], next_obs[i][2],
                    done=ev in ("collision", "arrival")))
                returns[i] += rewards[i]
            obs = next_obs
        successes = sum(u.arrived for u in state.uavs)
        collisions = sum(u.collided for u in state.uavs)
        return returns, successes, collisions, state.step_count

    def run_updates(self, count: int) -> dict:
        sums = {k: 0.0 for k in LOSS_KEYS}
        counts = {k: 0 for k in LOSS_KEYS}
        for _ in range(count):
            batch = self.buffer.sample(self.cfg.sac.batch_size, self.update_rng)
            try:
                stats = self.agent.update(batch, self.update_rng)
            except NumericError as exc:
                path = self._abort_snapshot(batch)
                raise TrainingAborted(f"update {self.total_updates + 1}: {exc}", path) from exc
            self.total_updates += 1
            stats["alpha"] = self.agent.alpha
            for k in LOSS_KEYS:
                if k in stats:
                    sums[k] += stats[k]
                    counts[k] += 1
        return {k: sums[k] / counts[k] if counts[k] else math.nan for k in LOSS_KEYS}

    def ready(self) -> bool:
        tc = self.cfg.train
        return len(self.buffer) >= max(self.cfg.sac.batch_size, tc.warmup, 1)

    def train_episode(self) -> TrainRecord:
        tc = self.cfg.train
        returns, succ, coll, steps = self.collect_episode()
        self.episode += 1
        updates = tc.updates_per_episode if self.ready() else 0
        losses = self.run_updates(updates)
        rec = TrainRecord(self.episode, float(returns.mean()), float(returns.std()), int(succ), int(coll),
                          int(steps), len(self.buffer), updates, **losses)
        if tc.eval_interval and self.episode % tc.eval_interval == 0:
            from .evalkit import evaluate_agent
            rep = evaluate_agent(self.agent, tc.scenario, tc.init_pattern, tc.num_uavs, tc.eval_episodes,
                                 seed=tc.seed + 10_000 + self.episode, episode_cfg=self.episode_cfg,
                                 reward_cfg=self.cfg.reward, obstacle_density=tc.obstacle_density)
            rec.eval_success = rep.success_rate
        self.log.append(rec)
        return rec

    def fit(self, out_dir=None, progress=None) -> TrainLog:
        tc = self.cfg.train
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.ini").write_text(self.cfg.to_ini(), encoding="utf-8")
        while self.episode < tc.max_episodes:
            rec = self.train_episode()
            if progress is not None:
                progress(rec)
            if out is not None:
                self.log.write_csv(out / "train_log.csv")
                if tc.checkpoint_interval and self.episode % tc.checkpoint_interval == 0:
                    save_checkpoint(self, out / f"checkpoint_ep{self.episode:04d}.ckpt")
        if out is not None:
            save_checkpoint(self, out / "final.ckpt")
        return self.log

    def _abort_snapshot(self, batch) -> str | None:
        out = Path(self.cfg.run.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            path = out / "abort_snapshot.ckpt"
            extra = {f"batch/{f}": getattr(batch, f) for f in BUFFER_FIELDS}
            save_checkpoint(self, path, extra_blocks=extra, include_buffer=False)
            return str(path)
        except OSError:
            return None


def train(cfg: RunConfig, out_dir=None, progress=None):
    """Train from scratch; returns ``(TrainLog, Trainer)``."""
    t = Trainer(cfg)
    log = t.fit(out_dir if out_dir is not None else None, progress)
    return log, t


# -- checkpoints ------------------------------------------------------------------------------
def save_checkpoint(trainer: Trainer, path, extra_blocks=None, include_buffer=None) -> None:
    agent = trainer.agent
    include_buffer = trainer.cfg.train.save_buffer if include_buffer is None else include_buffer
    blocks = {f"param/{name}": p.data for name, p in agent.named_parameters()}
    adam_t = {}
    for oname, opt in agent.optimizers().items():
        adam_t[oname] = opt.state.t
        for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
            blocks[f"adam/{oname}/m/{i}"] = m
            blocks[f"adam/{oname}/v/{i}"] = v
    buf = trainer.buffer
    if include_buffer and buf.size:
        for f in BUFFER_FIELDS:
            blocks[f"buffer/{f}"] = getattr(buf, f)[:buf.size]
    blocks.update(extra_blocks or {})
    meta = {
        "config": trainer.cfg.to_dict(),
        "layout": [agent.layout.n1, agent.layout.n2, agent.layout.n3],
        "episode": trainer.episode,
        "total_updates": trainer.total_updates,
        "update_count": agent.update_count,
        "adam_t": adam_t,
        "rng": {name: _rng_state(getattr(trainer, name)) for name in ("env_rng", "act_rng", "update_rng")},
        "buffer": {"size": buf.size, "cursor": buf.cursor, "saved": bool(include_buffer and buf.size)},
        "log": trainer.log.to_rows(),
    }
    ck.write_container(path, meta, blocks)


def load_checkpoint(path, expected_layout=None) -> Trainer:
    """Rebuild a trainer exactly as saved.  ``expected_layout`` guards against mixing layouts."""
    meta, blocks = ck.read_container(path)
    cfg = RunConfig.from_dict(meta["config"])
    layout = tuple(meta["layout"])
    if expected_layout is not None:
        want = (expected_layout.n1, expected_layout.n2, expected_layout.n3)
        if want != layout:
            raise LayoutError(f"checkpoint latent layout {layout} does not match expected {want}")
    t = Trainer(cfg)
    agent = t.agent
    for name, p in agent.named_parameters():
        key = f"param/{name}"
        if key not in blocks:
            raise LayoutError(f"checkpoint lacks parameter block {name}")
        if blocks[key].shape != p.shape:
            raise LayoutError(f"block {name}: checkpoint shape {blocks[key].shape} vs model {p.shape}")
        p.data[...] = blocks[key]
    for oname, opt in agent.optimizers().items():
        opt.state.t = int(meta["adam_t"][oname])
        for i in range(len(opt.state.m)):
            opt.state.m[i][...] = blocks[f"adam/{oname}/m/{i}"]
            opt.state.v[i][...] = blocks[f"adam/{oname}/v/{i}"]
    agent.update_count = int(meta["update_count"])
    t.episode = int(meta["episode"])
    t.total_updates = int(meta["total_updates"])
    for name, state in meta["rng"].items():
        _set_rng_state(getattr(t, name), state)
    binfo = meta["buffer"]
    if binfo["saved"]:
        n = binfo["size"]
        for f in BUFFER_FIELDS:
            getattr(t.buffer, f)[:n] = blocks[f"buffer/{f}"]
        t.buffer.size = n
        t.buffer.cursor = binfo["cursor"]
    t.log = TrainLog.from_rows(meta["log"])
    return t


# -- ablation -------------------------------------------------------------------------------------
@dataclass
class AblationRow:
    mask: tuple
    input_width: int
    success_rate: float
    log: TrainLog


def run_ablation(cfg: RunConfig, masks=ABLATION_MASKS, eval_scenario: str = "forest",
                 eval_episodes: int = 10, out_dir=None) -> list:
    """Train one model per mask with shared seeds and evaluate each in ``eval_scenario``."""
    from .config import apply_overrides
    from .evalkit import evaluate_agent
    rows = []
    for mask in masks:
        mcfg = apply_overrides(cfg, {"train.ablation_mask": list(mask)})
        sub = None if out_dir is None else Path(out_dir) / ("mask_" + "_".join(mask))
        log, trainer = train(mcfg, sub)
        tc = mcfg.train
        rep = evaluate_agent(trainer.agent, eval_scenario, tc.init_pattern, tc.num_uavs, eval_episodes,
                             seed=tc.seed + 20_000, episode_cfg=trainer.episode_cfg, reward_cfg=mcfg.reward)
        rows.append(AblationRow(tuple(trainer.agent.cfg.mask), trainer.agent.input_width, rep.success_rate, log))
    return rows


# -- transfer experiment ---------------------------------------------------------------------------
TRANSFER_PIPELINES = {
    # causal mask with interventions and alignment
    "full": {"train.ablation_mask": "z2,z3", "intervention.active": "true"},
    # every latent block reaches the policy; no interventions, hence no alignment
    "baseline": {"train.ablation_mask": "z1,z2,z3", "intervention.active": "false"},
}


def run_transfer(cfg: RunConfig, seeds=range(5), eval_scenario: str = "forest", eval_episodes: int = 100,
                 pipelines=TRANSFER_PIPELINES, out_dir=None, progress=None) -> dict:
    """Train each pipeline once per seed in ``cfg``'s scenario, then evaluate every
    agent on ``eval_scenario`` with random initialization.

    Returns ``{pipeline: [success rate per seed]}``.
    """
    from .config import apply_overrides
    from .evalkit import evaluate_agent
    results = {name: [] for name in pipelines}
    for seed in seeds:
        for name, over in pipelines.items():
            pcfg = apply_overrides(cfg, {**over, "train.seed": str(seed)})
            sub = None if out_dir is None else Path(out_dir) / f"{name}_seed{seed}"
            _, trainer = train(pcfg, sub)
            tc = pcfg.train
            rep = evaluate_agent(trainer.agent, eval_scenario, "random", tc.num_uavs, eval_episodes,
                                 seed=30_000 + seed, episode_cfg=trainer.episode_cfg, reward_cfg=pcfg.reward)
            results[name].append(rep.success_rate)
            if progress is not None:
                progress(name, seed, rep)
    return results
