"""Named configuration presets for runs that fit on a single desktop CPU.

Each preset is a dict of ``section.key`` overrides applied on top of the
defaults, so ``crdnav train --set`` and INI files can reproduce them.
"""
from __future__ import annotations

from .config import RunConfig, apply_overrides

PRESETS = {
    # tiny networks, a handful of episodes: plumbing and determinism checks
    "smoke": {
        "train.max_episodes": 5, "train.num_uavs": 2, "train.updates_per_episode": 50,
        "train.warmup": 32, "sensor.height": 32, "sensor.width": 32,
        "sac.batch_size": 32, "sac.hidden": 64,
        "latent.channels": "8,16,16", "latent.feature_dim": 32,
    },
    # one UAV in an empty playground; full pipeline at 16px, converges in well under an hour
    "sanity": {
        "train.max_episodes": 150, "train.num_uavs": 1, "train.obstacle_density": 0.0,
        "train.scenario": "playground", "train.init_pattern": "random",
        "train.updates_per_episode": 100, "train.warmup": 500,
        "sensor.height": 16, "sensor.width": 16,
        "sac.batch_size": 32, "sac.hidden": 64,
        "sac.critic_lr": 1e-3, "sac.actor_lr": 1e-3, "sac.encoder_lr": 1e-3,
        "latent.channels": "8,16", "latent.feature_dim": 32,
    },
    # four UAVs in the obstacle playground for 300 episodes; trained once per pipeline and seed
    "transfer": {
        "train.max_episodes": 300, "train.num_uavs": 4,
        "train.scenario": "playground", "train.init_pattern": "random",
        "train.updates_per_episode": 100, "train.warmup": 1000,
        "sensor.height": 16, "sensor.width": 16,
        "sac.batch_size": 32, "sac.hidden": 64,
        "sac.critic_lr": 1e-3, "sac.actor_lr": 1e-3, "sac.encoder_lr": 1e-3,
        "latent.channels": "8,16", "latent.feature_dim": 32,
    },
}


def preset(name: str, **extra) -> RunConfig:
    """Defaults plus the named preset plus ``extra`` overrides (``section__key=value``)."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    over = {k: str(v) for k, v in PRESETS[name].items()}
    over.update({k.replace("__", "."): str(v) for k, v in extra.items()})
    return apply_overrides(RunConfig(), over)
