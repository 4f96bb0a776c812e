"""Soft actor-critic over the partitioned latent: replay buffer, squashed-normal
actor, twin critics, learned temperature, and soft target updates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import latent as L
from .diffcore import Module, Tensor
from .errors import ConfigError, DimensionError, NotReadyError, NumericError
from .vision import InterventionConfig, intervene_batch
from .world.sim import ACTION_HIGH, ACTION_LOW

ACTION_DIM = 3
_MID = 0.5 * (ACTION_HIGH + ACTION_LOW)
_HALF = 0.5 * (ACTION_HIGH - ACTION_LOW)
_LOG2 = math.log(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SACConfig:
    gamma: float = 0.99
    batch_size: int = 128
    critic_lr: float = 1e-4
    actor_lr: float = 1e-4
    encoder_lr: float = 1e-4
    alpha_lr: float = 1e-4
    tau_q: float = 0.01
    tau_enc: float = 0.05
    critic_target_update_frequency: int = 2
    actor_update_frequency: int = 2
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    init_alpha: float = 0.1
    target_entropy: float = -3.0
    twin_critics: bool = True
    hidden: int = 256
    depth: int = 2
    goal_scale: float = 0.5          # o_goal is multiplied by this before entering the networks
    policy_input: str = "mu"         # latent fed to actor/critic during updates: "mu" or "z" (sampled)

    def validate(self) -> "SACConfig":
        for name in ("critic_lr", "actor_lr", "encoder_lr", "alpha_lr", "tau_q", "tau_enc"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"sac.{name} must lie in (0, 1], got {v}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"sac.gamma must lie in [0, 1], got {self.gamma}")
        for name in ("batch_size", "critic_target_update_frequency", "actor_update_frequency",
                     "hidden", "depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"sac.{name} must be >= 1")
        if not self.log_std_min < self.log_std_max:
            raise ConfigError("sac.log_std_min must be below sac.log_std_max")
        if self.init_alpha <= 0:
            raise ConfigError("sac.init_alpha must be positive")
        if self.policy_input not in ("z", "mu"):
            raise ConfigError(f"sac.policy_input must be 'z' or 'mu', got {self.policy_input!r}")
        return self


# -- replay buffer -------------------------------------------------------------------
@dataclass
class Transition:
    x: np.ndarray            # raw depth image in meters
    o_goal: np.ndarray
    o_vel: np.ndarray
    action: np.ndarray
    reward: float
    next_x: np.ndarray
    next_o_goal: np.ndarray
    next_o_vel: np.ndarray
    done: bool


@dataclass
class Batch:
    x: np.ndarray
    o_goal: np.ndarray
    o_vel: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_x: np.ndarray
    next_o_goal: np.ndarray
    next_o_vel: np.ndarray
    done: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)


BUFFER_FIELDS = ("x", "o_goal", "o_vel", "action", "reward", "next_x", "next_o_goal", "next_o_vel", "done")


class ReplayBuffer:
    """FIFO ring of transitions.  Images are kept as float32 to halve memory."""

    def __init__(self, capacity: int, image_shape: tuple):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.image_shape = tuple(image_shape)
        c = self.capacity
        self.x = np.zeros((c,) + self.image_shape, np.float32)
        self.next_x = np.zeros((c,) + self.image_shape, np.float32)
        self.o_goal = np.zeros((c, 3))
        self.o_vel = np.zeros((c, 3))
        self.action = np.zeros((c, 3))
        self.reward = np.zeros(c)
        self.next_o_goal = np.zeros((c, 3))
        self.next_o_vel = np.zeros((c, 3))
        self.done = np.zeros(c)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        k = self.cursor
        x = np.asarray(t.x)
        if x.shape != self.image_shape:
            raise DimensionError(f"transition image {x.shape} vs buffer {self.image_shape}")
        self.x[k] = x
        self.next_x[k] = np.asarray(t.next_x)
        self.o_goal[k] = t.o_goal
        self.o_vel[k] = t.o_vel
        self.action[k] = t.action
        self.reward[k] = t.reward
        self.next_o_goal[k] = t.next_o_goal
        self.next_o_vel[k] = t.next_o_vel
        self.done[k] = float(t.done)
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _slot(self, age: int) -> int:
        """Storage slot of the ``age``-th oldest stored transition."""
        start = self.cursor if self.size == self.capacity else 0
        return (start + age) % self.capacity

    def stored(self) -> list:
        """Transitions oldest first."""
        out = []
        for a in range(self.size):
            k = self._slot(a)
            out.append(Transition(*(getattr(self, f)[k].copy() if getattr(self, f)[k].ndim else
                                    getattr(self, f)[k].item() for f in BUFFER_FIELDS)))
        for t in out:
            t.done = bool(t.done)
        return out

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size or self.size == 0:
            raise NotReadyError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        slots = np.array([self._slot(int(i)) for i in idx]) if self.size == self.capacity else idx
        return Batch(
            x=self.x[slots].astype(np.float64),
            o_goal=self.o_goal[slots], o_vel=self.o_vel[slots], action=self.action[slots],
            reward=self.reward[slots],
            next_x=self.next_x[slots].astype(np.float64),
            next_o_goal=self.next_o_goal[slots], next_o_vel=self.next_o_vel[slots],
            done=self.done[slots], indices=slots,
        )


# -- networks --------------------------------------------------------------------------
def to_env_action(y):
    """Map a squashed action in [-1, 1]^3 to command bounds."""
    return _MID + _HALF * np.asarray(y)


def to_unit_action(a):
    return (np.asarray(a, dtype=np.float64) - _MID) / _HALF


class Actor(Module):
    """Gaussian policy head; log_std is squashed into [log_std_min, log_std_max]."""

    def __init__(self, n_in: int, hidden: int, depth: int, rng, log_std_min=-10.0, log_std_max=2.0):
        self.net = dc.MLP(n_in, hidden, 2 * ACTION_DIM, depth, rng)
        self.n_in = n_in
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max

    def __call__(self, obs: Tensor):
        if obs.shape[-1] != self.n_in:
            raise DimensionError(f"actor expects {self.n_in} inputs, got {obs.shape[-1]}")
        out = self.net(obs)
        mu = dc.take_slice(out, 1, 0, ACTION_DIM)
        raw = dc.tanh(dc.take_slice(out, 1, ACTION_DIM, 2 * ACTION_DIM))
        span = self.log_std_max - self.log_std_min
        log_std = (raw + 1.0) * (0.5 * span) + self.log_std_min
        return mu, log_std


def squashed_sample(mu: Tensor, log_std: Tensor, eps: np.ndarray):
    """Reparameterized tanh-normal sample.

    Returns ``(y, log_prob)`` where ``y`` in (-1, 1)^3 is the squashed action
    and ``log_prob`` (B,) is the log-density of the bounded command, i.e. it
    includes the tanh Jacobian and the affine map to command bounds.
    """
    eps = Tensor(np.asarray(eps, dtype=np.float64))
    u = mu + dc.exp(log_std) * eps
    y = dc.tanh(u)
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    log_jac = (-u - dc.softplus(u * -2.0) + _LOG2) * 2.0
    per_dim = dc.square(eps) * -0.5 - log_std - _LOG_SQRT_2PI - log_jac
    log_prob = dc.tsum(per_dim, axis=1) - float(np.sum(np.log(_HALF)))
    return y, log_prob


def squashed_log_prob(mu, log_std, action) -> np.ndarray:
    """Closed-form log-density of bounded commands under the squashed policy (no grad)."""
    y = np.clip(to_unit_action(action), -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(y)
    mu = np.asarray(mu)
    ls = np.asarray(log_std)
    z = (u - mu) / np.exp(ls)
    lp = -0.5 * z * z - ls - _LOG_SQRT_2PI - np.log1p(-y * y)
    return lp.sum(axis=-1) - np.sum(np.log(_HALF))


class Critic(Module):
    """Q(o, a) with an optional second head for twin-critic pessimism."""

    def __init__(self, n_obs: int, hidden: int, depth: int, rng, twin: bool = True):
        self.q1 = dc.MLP(n_obs + ACTION_DIM, hidden, 1, depth, rng)
        self.q2 = dc.MLP(n_obs + ACTION_DIM, hidden, 1, depth, rng) if twin else None
        self.n_obs = n_obs

    def __call__(self, obs: Tensor, y) -> tuple:
        """``y`` is the action in squashed units [-1, 1]."""
        if obs.shape[-1] != self.n_obs:
            raise DimensionError(f"critic expects {self.n_obs} observation inputs, got {obs.shape[-1]}")
        inp = dc.concat([obs, dc.as_tensor(y)], axis=1)
        q1 = dc.reshape(self.q1(inp), (-1,))
        if self.q2 is None:
            return (q1,)
        return q1, dc.reshape(self.q2(inp), (-1,))

    def min_q(self, obs: Tensor, y) -> Tensor:
        qs = self(obs, y)
        return qs[0] if len(qs) == 1 else dc.minimum(qs[0], qs[1])


def soft_update(online, target, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise, in place."""
    src = online.parameters() if isinstance(online, Module) else list(online)
    dst = target.parameters() if isinstance(target, Module) else list(target)
    if len(src) != len(dst):
        raise DimensionError(f"soft_update: {len(src)} online vs {len(dst)} target parameters")
    for s, d in zip(src, dst):
        if s.shape != d.shape:
            raise DimensionError(f"soft_update: shape {s.shape} vs {d.shape}")
    for s, d in zip(src, dst):
        d.data[...] = tau * s.data + (1.0 - tau) * d.data


# -- losses as pure functions ------------------------------------------------------------
def td_target(reward, done, gamma: float, next_value) -> np.ndarray:
    """y = r + gamma * (1 - done) * V(o')."""
    reward = np.asarray(reward, dtype=np.float64)
    done = np.asarray(done, dtype=np.float64)
    return reward + gamma * (1.0 - done) * np.asarray(next_value, dtype=np.float64)


def critic_loss(critic: Critic, obs: Tensor, y_action, target: np.ndarray) -> Tensor:
    """Sum over heads of the mean squared error to the (constant) target."""
    tgt = Tensor(target)
    total = None
    for q in critic(obs, y_action):
        term = dc.mean(dc.square(q - tgt))
        total = term if total is None else total + term
    return total


def actor_loss(actor: Actor, obs: Tensor, q_fn, alpha: float, eps: np.ndarray):
    """mean(alpha * log pi(a|o) - Q(o, a)) with reparameterized a.  Returns (loss, log_prob)."""
    mu, log_std = actor(obs)
    y, log_prob = squashed_sample(mu, log_std, eps)
    q = q_fn(obs, y)
    return dc.mean(log_prob * alpha - q), log_prob


def temperature_loss(log_alpha: Tensor, log_prob, target_entropy: float) -> Tensor:
    """mean(-alpha * (log pi + target_entropy)) with log pi held constant."""
    lp = np.asarray(log_prob.data if isinstance(log_prob, Tensor) else log_prob, dtype=np.float64)
    return dc.mean(dc.exp(log_alpha) * Tensor(-(lp + target_entropy)))


# -- agent ---------------------------------------------------------------------------------
@dataclass
class AgentConfig:
    layout: L.LatentLayout = field(default_factory=L.LatentLayout)
    net: L.NetConfig = field(default_factory=L.NetConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    intervention: InterventionConfig = field(default_factory=InterventionConfig)
    interventions: bool = True          # False disables augmentation and alignment
    mask: tuple = L.DEFAULT_MASK
    max_range: float = 20.0

    def __post_init__(self):
        self.mask = L.check_mask(self.mask)
        self.sac.validate()
        if self.interventions:
            self.intervention.validate()


class SACAgent:
    """Encoder, decoder, actor, critics, their targets, temperature and optimizers."""

    def __init__(self, cfg: AgentConfig, rng: np.random.Generator):
        self.cfg = cfg
        sac = cfg.sac
        self.layout = cfg.layout
        self.repr = L.RepresentationModel(cfg.layout, cfg.net, rng=rng)
        self.encoder = self.repr.encoder
        self.target_encoder = self.repr.target_encoder
        self.decoder = self.repr.decoder
        width = cfg.layout.view_width(cfg.mask)
        self.actor = Actor(width, sac.hidden, sac.depth, rng, sac.log_std_min, sac.log_std_max)
        self.critic = Critic(width, sac.hidden, sac.depth, rng, sac.twin_critics)
        self.critic_target = Critic(width, sac.hidden, sac.depth, rng, sac.twin_critics)
        self.critic_target.copy_from(self.critic)
        self.log_alpha = Tensor(np.array(math.log(sac.init_alpha)), requires_grad=True)
        self.critic_opt = dc.Adam([(self.critic.parameters(), sac.critic_lr),
                                   (self.encoder.parameters() + self.decoder.parameters(), sac.encoder_lr)])
        self.actor_opt = dc.Adam([(self.actor.parameters(), sac.actor_lr)])
        self.alpha_opt = dc.Adam([([self.log_alpha], sac.alpha_lr)])
        self.update_count = 0

    # -- bookkeeping --------------------------------------------------------------
    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    @property
    def input_width(self) -> int:
        return self.actor.n_in

    def modules(self) -> dict:
        return {"encoder": self.encoder, "target_encoder": self.target_encoder, "decoder": self.decoder,
                "actor": self.actor, "critic": self.critic, "critic_target": self.critic_target}

    def optimizers(self) -> dict:
        return {"critic_opt": self.critic_opt, "actor_opt": self.actor_opt, "alpha_opt": self.alpha_opt}

    def named_parameters(self):
        for mname, m in self.modules().items():
            for pname, p in m.named_parameters():
                yield f"{mname}.{pname}", p
        yield "log_alpha", self.log_alpha

    # -- observation path -----------------------------------------------------------
    def _normalize(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        return x / self.cfg.max_range

    def view(self, z, o_goal, o_vel) -> Tensor:
        g = np.asarray(o_goal, dtype=np.float64) * self.cfg.sac.goal_scale
        return L.policy_view(z, g, o_vel, self.layout, self.cfg.mask)

    def select_actions(self, images, o_goal, o_vel, deterministic: bool = True, rng=None) -> np.ndarray:
        """One command per row; each row depends only on that row's own observation."""
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 2
        if single:
            images = images[None]
            o_goal, o_vel = np.atleast_2d(o_goal), np.atleast_2d(o_vel)
        with dc.no_grad():
            mu_z = L.encode_mean(self.encoder, self._normalize(images))
            obs = self.view(mu_z, o_goal, o_vel)
            mu, log_std = self.actor(obs)
            if deterministic:
                y = np.tanh(mu.data)
            else:
                if rng is None:
                    raise ConfigError("stochastic action selection needs an rng")
                y, _ = squashed_sample(mu, log_std, rng.standard_normal(mu.shape))
                y = y.data
        if not np.all(np.isfinite(y)):
            raise NumericError("actor produced a non-finite action")
        a = np.clip(to_env_action(y), ACTION_LOW, ACTION_HIGH)
        return a[0] if single else a

    def select_action(self, image, o_goal, o_vel, deterministic: bool = True, rng=None) -> np.ndarray:
        return self.select_actions(np.asarray(image)[None], np.atleast_2d(o_goal), np.atleast_2d(o_vel),
                                   deterministic, rng)[0]

    def q_values(self, images, o_goal, o_vel, actions) -> tuple:
        with dc.no_grad():
            mu_z = L.encode_mean(self.encoder, self._normalize(images))
            obs = self.view(mu_z, o_goal, o_vel)
            return tuple(q.data for q in self.critic(obs, Tensor(to_unit_action(actions))))

    # -- updates ------------------------------------------------------------------------
    def update(self, batch: Batch, rng: np.random.Generator) -> dict:
        """One gradient step: critic + representation, then actor/temperature and
        target updates at their configured frequencies."""
        cfg, sac = self.cfg, self.cfg.sac
        self.update_count += 1
        stats = self.critic_update(batch, rng)
        if self.update_count % sac.actor_update_frequency == 0:
            stats.update(self.actor_update(stats.pop("_z"), batch, rng))
        else:
            stats.pop("_z")
        if self.update_count % sac.critic_target_update_frequency == 0:
            soft_update(self.critic, self.critic_target, sac.tau_q)
            soft_update(self.encoder, self.target_encoder, sac.tau_enc)
        for k, v in stats.items():
            if not math.isfinite(v):
                raise NumericError(f"non-finite {k} at update {self.update_count}")
        return stats

    def critic_update(self, batch: Batch, rng: np.random.Generator) -> dict:
        cfg, sac = self.cfg, self.cfg.sac
        b = len(batch)
        x = self._normalize(batch.x)
        x_aug = None
        if cfg.interventions:
            x_aug = intervene_batch(batch.x, cfg.intervention, rng, cfg.max_range) / cfg.max_range
        weights = cfg.weights if cfg.interventions else L.LossWeights(
            cfg.weights.w_vae, cfg.weights.w_rec, 0.0, cfg.weights.align_on)
        eps = rng.standard_normal((b, self.layout.total))
        eps_next = rng.standard_normal((b, self.layout.total))
        eps_act = rng.standard_normal((b, ACTION_DIM))

        with dc.no_grad():
            nout = L.encode(self.target_encoder, self._normalize(batch.next_x), eps=eps_next)
            nz = nout.mu if sac.policy_input == "mu" else nout.z
            nobs = self.view(nz, batch.next_o_goal, batch.next_o_vel)
            nmu, nls = self.actor(nobs)
            ny, nlogp = squashed_sample(nmu, nls, eps_act)
            v_next = self.critic_target.min_q(nobs, ny).data - self.alpha * nlogp.data
            target = td_target(batch.reward, batch.done, sac.gamma, v_next)

        repr_total, bundle, out = L.representation_losses(self.encoder, self.decoder, x, x_aug, weights, eps)
        z = out.mu if sac.policy_input == "mu" else out.z
        obs = self.view(z, batch.o_goal, batch.o_vel)
        l_q = critic_loss(self.critic, obs, Tensor(to_unit_action(batch.action)), target)
        loss = l_q + repr_total
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        return {"l_vae": bundle.l_vae, "l_rec": bundle.l_rec, "l_align": bundle.l_align,
                "l_q": l_q.item(), "_z": z.data.copy()}

    def actor_update(self, z: np.ndarray, batch: Batch, rng: np.random.Generator) -> dict:
        """Actor and temperature step on detached latents; the encoder is untouched."""
        sac = self.cfg.sac
        obs = self.view(Tensor(z), batch.o_goal, batch.o_vel)
        eps = rng.standard_normal((len(batch), ACTION_DIM))
        loss, log_prob = actor_loss(self.actor, obs, self.critic.min_q, self.alpha, eps)
        self.actor_opt.zero_grad()
        loss.backward()
        self.actor_opt.step()
        self.critic.zero_grad()
        l_alpha = temperature_loss(self.log_alpha, log_prob, sac.target_entropy)
        self.alpha_opt.zero_grad()
        l_alpha.backward()
        self.alpha_opt.step()
        return {"l_pi": loss.item(), "l_alpha": l_alpha.item()}
