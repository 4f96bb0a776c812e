"""Partitioned variational encoder/decoder and its three representation losses.

The latent vector is split into three blocks ``z = [z1, z2, z3]``:

* ``z1`` task-irrelevant content, trained by reconstruction only,
* ``z2`` task-relevant but scenario-specific content,
* ``z3`` task-relevant and scenario-invariant content, additionally pulled
  together across background interventions by the alignment loss.

Which blocks reach the actor and critics is decided by ``policy_view``; the
default mask drops ``z1``, so task gradients never touch it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Module, Tensor
from .errors import ConfigError, DimensionError, NumericError

BLOCKS = ("z1", "z2", "z3")
DEFAULT_MASK = ("z2", "z3")
LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0


@dataclass(frozen=True)
class LatentLayout:
    n1: int = 16
    n2: int = 16
    n3: int = 32

    def __post_init__(self):
        for name in ("n1", "n2", "n3"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"latent.{name} must be an integer >= 1, got {v!r}")

    @property
    def total(self) -> int:
        return self.n1 + self.n2 + self.n3

    def block_range(self, block: str) -> tuple:
        if block == "z1":
            return 0, self.n1
        if block == "z2":
            return self.n1, self.n1 + self.n2
        if block == "z3":
            return self.n1 + self.n2, self.total
        raise ConfigError(f"unknown latent block {block!r}; expected one of {BLOCKS}")

    def split(self, z):
        """(z1, z2, z3) slices along the last axis; works for arrays and Tensors."""
        out = []
        for b in BLOCKS:
            lo, hi = self.block_range(b)
            out.append(dc.take_slice(z, -1, lo, hi) if isinstance(z, Tensor) else z[..., lo:hi])
        return tuple(out)

    def view_width(self, mask=DEFAULT_MASK) -> int:
        mask = check_mask(mask)
        return sum(getattr(self, "n" + b[1]) for b in mask) + 6


def check_mask(mask) -> tuple:
    """Normalize an ablation mask to block order; rejects empty or unknown masks."""
    names = set(mask)
    unknown = names - set(BLOCKS)
    if unknown:
        raise ConfigError(f"unknown latent block(s) in mask: {sorted(unknown)}")
    if not names:
        raise ConfigError("ablation mask must select at least one latent block")
    return tuple(b for b in BLOCKS if b in names)


@dataclass(frozen=True)
class NetConfig:
    """Encoder/decoder sizes.  Image sides must be divisible by 2**len(channels)."""
    image_size: int = 64
    channels: tuple = (16, 32, 32, 32)
    feature_dim: int = 128

    def __post_init__(self):
        depth = len(self.channels)
        if depth < 1 or any(c < 1 for c in self.channels) or self.feature_dim < 1:
            raise ConfigError("latent network sizes must be positive")
        if self.image_size % (2 ** depth) or self.image_size < 2 ** depth:
            raise ConfigError(f"image size {self.image_size} is not divisible by 2**{depth}")

    @property
    def grid(self) -> int:
        return self.image_size // (2 ** len(self.channels))


@dataclass
class EncoderOutput:
    h: Tensor
    mu: Tensor
    log_std: Tensor
    z: Tensor
    h_rec: Tensor
    eps: np.ndarray


def _check_finite(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation after {layer}")
    return t


class Encoder(Module):
    """Convolutional trunk, feature map ``h``, bottleneck to (mu, log_std) and its inverse."""

    def __init__(self, layout: LatentLayout, net: NetConfig, rng: np.random.Generator):
        self.layout = layout
        self.net = net
        chans = (1,) + tuple(net.channels)
        self.convs = [dc.Conv2d(a, b, 4, 2, 1, rng) for a, b in zip(chans[:-1], chans[1:])]
        flat = chans[-1] * net.grid * net.grid
        self.fc = dc.Linear(flat, net.feature_dim, rng)
        self.to_stats = dc.Linear(net.feature_dim, 2 * layout.total, rng)
        self.from_z = dc.Linear(layout.total, net.feature_dim, rng)

    def features(self, x) -> Tensor:
        x = _as_batch(x, self.net.image_size)
        for i, conv in enumerate(self.convs):
            x = _check_finite(dc.relu(conv(x)), f"encoder.conv{i}")
        x = dc.reshape(x, (x.shape[0], -1))
        return _check_finite(dc.tanh(self.fc(x)), "encoder.fc")

    def stats(self, h: Tensor):
        s = _check_finite(self.to_stats(h), "encoder.bottleneck")
        n = self.layout.total
        mu = dc.take_slice(s, 1, 0, n)
        log_std = dc.clamp(dc.take_slice(s, 1, n, 2 * n), LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def __call__(self, x, eps=None, rng=None) -> EncoderOutput:
        return encode(self, x, eps=eps, rng=rng)


class Decoder(Module):
    """Mirror of the encoder trunk: full z -> fc -> transposed convs -> sigmoid image."""

    def __init__(self, layout: LatentLayout, net: NetConfig, rng: np.random.Generator):
        self.layout = layout
        self.net = net
        chans = tuple(reversed(net.channels)) + (1,)
        self.fc = dc.Linear(layout.total, chans[0] * net.grid * net.grid, rng)
        self.deconvs = [dc.ConvTranspose2d(a, b, 4, 2, 1, rng) for a, b in zip(chans[:-1], chans[1:])]
        self._c0 = chans[0]

    def __call__(self, z) -> Tensor:
        return decode(self, z)


def _as_batch(x, size: int) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim == 2:
        data = data[None, None]
    elif data.ndim == 3:
        data = data[:, None]
    if data.ndim != 4 or data.shape[1] != 1 or data.shape[2:] != (size, size):
        raise DimensionError(f"expected images of shape (B, {size}, {size}), got {np.shape(data)}")
    return x if isinstance(x, Tensor) and x.ndim == 4 else Tensor(data)


def encode(encoder: Encoder, x, eps=None, rng: np.random.Generator | None = None) -> EncoderOutput:
    """Encode normalized images (B, H, W) in [0, 1].

    ``eps`` (B, n) fixes the reparameterization noise; otherwise it is drawn
    from ``rng``.  Passing ``eps = 0`` yields the posterior mean.
    """
    h = encoder.features(x)
    mu, log_std = encoder.stats(h)
    b, n = mu.shape
    if eps is None:
        if rng is None:
            raise ConfigError("encode needs either eps or rng")
        eps = rng.standard_normal((b, n))
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (b, n))
    z = mu + dc.exp(log_std) * Tensor(eps)
    h_rec = _check_finite(dc.tanh(encoder.from_z(z)), "encoder.inverse_bottleneck")
    return EncoderOutput(h=h, mu=mu, log_std=log_std, z=z, h_rec=h_rec, eps=np.array(eps))


def encode_mean(encoder: Encoder, x) -> Tensor:
    """Posterior mean only (used for action selection)."""
    return encoder.stats(encoder.features(x))[0]


def decode(decoder: Decoder, z) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(np.asarray(z, dtype=np.float64)))
    if z.ndim != 2 or z.shape[1] != decoder.layout.total:
        raise DimensionError(f"decode expects z of length {decoder.layout.total}, got shape {z.shape}")
    g = decoder.net.grid
    x = dc.reshape(dc.relu(decoder.fc(z)), (z.shape[0], decoder._c0, g, g))
    last = len(decoder.deconvs) - 1
    for i, layer in enumerate(decoder.deconvs):
        x = layer(x)
        x = dc.sigmoid(x) if i == last else dc.relu(x)
        _check_finite(x, f"decoder.deconv{i}")
    return dc.reshape(x, (z.shape[0], decoder.net.image_size, decoder.net.image_size))


# -- losses ------------------------------------------------------------------------
def kl_divergence(mu: Tensor, log_std: Tensor) -> Tensor:
    """Per-sample KL(N(mu, sigma^2) || N(0, I)), summed over latent coordinates."""
    mu = dc.as_tensor(mu)
    log_std = dc.as_tensor(log_std)
    if mu.ndim == 1:
        mu, log_std = dc.reshape(mu, (1, -1)), dc.reshape(log_std, (1, -1))
    # expm1 keeps sigma^2 - 1 - log sigma^2 non-negative when log_std is tiny
    terms = dc.square(mu) + (dc.expm1(log_std * 2.0) - log_std * 2.0)
    return dc.tsum(terms, axis=1) * 0.5


def vae_terms(x, x_hat: Tensor, out: EncoderOutput):
    """(reconstruction, kl) as batch means of per-sample sums, before pixel scaling."""
    x = dc.as_tensor(x)
    if x.shape != x_hat.shape:
        raise DimensionError(f"image {x.shape} vs reconstruction {x_hat.shape}")
    b = x.shape[0]
    sq = dc.reshape(dc.square(x - x_hat), (b, -1))
    return dc.mean(dc.tsum(sq, axis=1)), dc.mean(kl_divergence(out.mu, out.log_std))


def loss_vae(x, x_hat: Tensor, out: EncoderOutput) -> Tensor:
    """Negative evidence lower bound per pixel: (sum sq. error + KL) / (H*W), batch mean."""
    rec, kl = vae_terms(x, x_hat, out)
    pixels = x_hat.shape[-1] * x_hat.shape[-2]
    return (rec + kl) * (1.0 / pixels)


def loss_rec(h, h_rec) -> Tensor:
    h, h_rec = dc.as_tensor(h), dc.as_tensor(h_rec)
    if h.shape != h_rec.shape:
        raise DimensionError(f"h {h.shape} vs h_rec {h_rec.shape}")
    return dc.mean(dc.square(h - h_rec))


def loss_align(z3, z3_aug) -> Tensor:
    """Mean over C augmentations of ||z3 - z3_aug_i||^2, averaged over the batch.

    ``z3`` is (n3,) or (B, n3); ``z3_aug`` is a sequence of C such blocks.
    """
    z3_aug = list(z3_aug)
    if not z3_aug:
        raise ConfigError("alignment needs at least one augmented block (C >= 1)")
    z3 = dc.as_tensor(z3)
    if z3.ndim == 1:
        z3 = dc.reshape(z3, (1, -1))
    total = None
    for a in z3_aug:
        a = dc.as_tensor(a)
        if a.ndim == 1:
            a = dc.reshape(a, (1, -1))
        if a.shape != z3.shape:
            raise DimensionError(f"z3 {z3.shape} vs augmented block {a.shape}")
        d = dc.tsum(dc.square(z3 - a), axis=1)
        total = d if total is None else total + d
    return dc.mean(total) * (1.0 / len(z3_aug))


@dataclass
class LossBundle:
    l_vae: float
    l_rec: float
    l_align: float
    w_vae: float = 1.0
    w_rec: float = 0.1
    w_align: float = 1.0

    def __post_init__(self):
        for name in ("l_vae", "l_rec", "l_align"):
            if not math.isfinite(getattr(self, name)):
                raise NumericError(f"{name} is not finite")

    @property
    def total(self) -> float:
        return self.w_vae * self.l_vae + self.w_rec * self.l_rec + self.w_align * self.l_align


@dataclass(frozen=True)
class LossWeights:
    w_vae: float = 1.0
    w_rec: float = 0.1
    w_align: float = 1.0
    align_on: str = "z"        # "z" (sampled, shared eps) or "mu"

    def __post_init__(self):
        if min(self.w_vae, self.w_rec, self.w_align) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.align_on not in ("z", "mu"):
            raise ConfigError(f"align_on must be 'z' or 'mu', got {self.align_on!r}")


def representation_losses(encoder: Encoder, decoder: Decoder, x, x_aug, weights: LossWeights,
                          eps: np.ndarray):
    """Encode originals and C variants with shared ``eps``; returns (total Tensor, bundle, out).

    ``x`` is (B, H, W) normalized, ``x_aug`` is (C, B, H, W) normalized or None
    (alignment then contributes zero).
    """
    out = encode(encoder, x, eps=eps)
    x_hat = decode(decoder, out.z)
    l_vae = loss_vae(x, x_hat, out)
    l_rec = loss_rec(out.h, out.h_rec)
    total = l_vae * weights.w_vae + l_rec * weights.w_rec
    l_align_val = 0.0
    if x_aug is not None and len(x_aug) and weights.w_align > 0:
        layout = encoder.layout
        c, b = x_aug.shape[0], x_aug.shape[1]
        aug = encode(encoder, np.asarray(x_aug).reshape((c * b,) + x_aug.shape[2:]),
                     eps=np.tile(eps, (c, 1)))
        src, src_aug = (out.z, aug.z) if weights.align_on == "z" else (out.mu, aug.mu)
        z3 = layout.split(src)[2]
        z3_aug_all = layout.split(src_aug)[2]
        blocks = [dc.take_slice(z3_aug_all, 0, i * b, (i + 1) * b) for i in range(c)]
        l_align = loss_align(z3, blocks)
        total = total + l_align * weights.w_align
        l_align_val = l_align.item()
    bundle = LossBundle(l_vae.item(), l_rec.item(), l_align_val,
                        weights.w_vae, weights.w_rec, weights.w_align)
    return total, bundle, out


# -- policy observation ---------------------------------------------------------------
def policy_view(z, o_goal, o_vel, layout: LatentLayout, mask=DEFAULT_MASK) -> Tensor:
    """Concatenate the masked latent blocks with the goal and velocity observations.

    Works on single vectors or batches; always returns a 2-D Tensor (B, width).
    """
    mask = check_mask(mask)
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    if z.ndim == 1:
        z = dc.reshape(z, (1, -1))
    if z.shape[1] != layout.total:
        raise DimensionError(f"z has length {z.shape[1]}, layout expects {layout.total}")
    parts = []
    for b in mask:
        lo, hi = layout.block_range(b)
        parts.append(dc.take_slice(z, 1, lo, hi))
    for extra, name in ((o_goal, "o_goal"), (o_vel, "o_vel")):
        e = np.asarray(extra.data if isinstance(extra, Tensor) else extra, dtype=np.float64)
        e = e.reshape(-1, 3) if e.ndim == 1 else e
        if e.shape != (z.shape[0], 3):
            raise DimensionError(f"{name} must have shape ({z.shape[0]}, 3), got {e.shape}")
        parts.append(Tensor(e))
    return dc.concat(parts, axis=1)


@dataclass
class RepresentationModel:
    """Online encoder, its slow-moving target copy, and the decoder."""
    layout: LatentLayout
    net: NetConfig
    encoder: Encoder = field(init=False)
    target_encoder: Encoder = field(init=False)
    decoder: Decoder = field(init=False)
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        rng = self.rng if self.rng is not None else np.random.default_rng(0)
        self.encoder = Encoder(self.layout, self.net, rng)
        self.decoder = Decoder(self.layout, self.net, rng)
        self.target_encoder = Encoder(self.layout, self.net, rng)
        self.target_encoder.copy_from(self.encoder)
        self.rng = None
