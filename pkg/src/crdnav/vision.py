"""Depth images, Fourier amplitude/phase decomposition and background interventions.

Every augmentation exists in two forms: a public one taking and returning a
``DepthImage`` and an array form operating on the trailing two axes, which the
trainer uses on whole batches.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParameterError

AUGMENTATIONS = ("amplitude", "noise", "blur", "contrast")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class DepthImage:
    data: np.ndarray
    max_range: float = 20.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ConfigError(f"depth image must be 2-D, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def is_valid(self) -> bool:
        return bool(np.all(self.data >= 0.0) and np.all(self.data <= self.max_range)
                    and _is_pow2(self.height) and _is_pow2(self.width))

    def copy(self) -> "DepthImage":
        return DepthImage(self.data.copy(), self.max_range)


@dataclass
class Spectrum:
    amplitude: np.ndarray
    phase: np.ndarray


@dataclass
class InterventionConfig:
    lambda_low: float = 0.5
    lambda_high: float = 1.5
    noise_sigma: float = 0.4            # 0.02 * max_range for the default 20 m sensor
    blur_kernel_length: int = 5
    contrast_low: float = 0.7
    contrast_high: float = 1.3
    enabled: tuple = field(default=AUGMENTATIONS)

    def __post_init__(self):
        self.enabled = tuple(self.enabled)
        self.validate()

    @property
    def augmentation_count(self) -> int:
        return len(self.enabled)

    def validate(self) -> None:
        if not (0 < self.lambda_low <= self.lambda_high):
            raise ParameterError(f"need 0 < lambda_low <= lambda_high, got "
                                 f"{self.lambda_low}, {self.lambda_high}")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if self.blur_kernel_length < 1 or self.blur_kernel_length % 2 == 0:
            raise ParameterError("blur_kernel_length must be odd and >= 1")
        if not (0 < self.contrast_low <= self.contrast_high):
            raise ParameterError("need 0 < contrast_low <= contrast_high")
        unknown = set(self.enabled) - set(AUGMENTATIONS)
        if unknown:
            raise ParameterError(f"unknown augmentation(s): {sorted(unknown)}")
        if len(self.enabled) < 1 or len(set(self.enabled)) != len(self.enabled):
            raise ParameterError("enabled augmentations must be a non-empty set")


# -- Fourier -------------------------------------------------------------------
def _check_pow2(shape) -> None:
    h, w = shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ConfigError(f"image dimensions must be powers of two, got {h}x{w}")


def _wrap_phase(p: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    return np.where(p <= -np.pi, p + 2 * np.pi, p)


def fft2(image: DepthImage) -> Spectrum:
    _check_pow2(image.data.shape)
    f = np.fft.fft2(image.data)
    return Spectrum(np.abs(f), _wrap_phase(np.angle(f)))


def ifft2(spec: Spectrum, max_range: float = 20.0, clamp: bool = False) -> DepthImage:
    x = np.fft.ifft2(spec.amplitude * np.exp(1j * spec.phase)).real
    if clamp:
        x = np.clip(x, 0.0, max_range)
    return DepthImage(x, max_range)


def amplitude_perturb_raw(x: np.ndarray, lam) -> tuple:
    """Scale the amplitude spectrum of ``x`` (trailing two axes) by ``lam``.

    Returns the real part of the inverse transform before clamping and the
    largest imaginary residue.  ``lam`` may be a scalar or broadcast over the
    leading axes (one ratio per image).
    """
    _check_pow2(x.shape)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise ParameterError(f"lambda must be > 0, got {lam}")
    f = np.fft.fft2(x)
    amp, phase = np.abs(f), np.angle(f)
    lam = lam.reshape(lam.shape + (1, 1)) if lam.ndim else lam
    out = np.fft.ifft2(lam * amp * np.exp(1j * phase))
    return out.real, float(np.max(np.abs(out.imag))) if out.size else 0.0


def amplitude_perturb(image: DepthImage, lam: float) -> DepthImage:
    raw, _ = amplitude_perturb_raw(image.data, lam)
    return DepthImage(np.clip(raw, 0.0, image.max_range), image.max_range)


def phase_drift(before: np.ndarray, after: np.ndarray, amp_floor: float = 1e-9) -> float:
    """Largest per-bin phase change between two images, over bins with amplitude > floor."""
    fa, fb = np.fft.fft2(before), np.fft.fft2(after)
    mask = (np.abs(fa) > amp_floor) & (np.abs(fb) > amp_floor)
    if not np.any(mask):
        return 0.0
    d = np.angle(fb[mask]) - np.angle(fa[mask])
    d = np.angle(np.exp(1j * d))
    return float(np.max(np.abs(d)))


# -- classical augmentations -------------------------------------------------------
def noise_raw(x: np.ndarray, sigma, rng: np.random.Generator, max_range: float) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ParameterError("sigma must be >= 0")
    if sigma.ndim:
        sigma = sigma.reshape(sigma.shape + (1, 1))
    return np.clip(x + sigma * rng.standard_normal(x.shape), 0.0, max_range)


def line_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized ``length x length`` kernel: a rasterized line through the center."""
    if length < 1 or length % 2 == 0:
        raise ParameterError(f"kernel_length must be odd and >= 1, got {length}")
    k = np.zeros((length, length))
    c = length // 2
    for s in np.linspace(-c, c, 4 * length + 1):
        i = int(round(c - s * math.sin(angle)))
        j = int(round(c + s * math.cos(angle)))
        k[i, j] = 1.0
    return k / k.sum()


def blur_raw(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate the trailing axes with ``kernel`` using edge-replicate padding."""
    c = kernel.shape[0] // 2
    if c == 0:
        return x.copy()
    pad = [(0, 0)] * (x.ndim - 2) + [(c, c), (c, c)]
    xp = np.pad(x, pad, mode="edge")
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    for i, j in zip(*np.nonzero(kernel)):
        out += kernel[i, j] * xp[..., i:i + h, j:j + w]
    return out


def contrast_raw(x: np.ndarray, factor, max_range: float) -> np.ndarray:
    factor = np.asarray(factor, dtype=np.float64)
    if np.any(factor <= 0):
        raise ParameterError("contrast factor must be > 0")
    if factor.ndim:
        factor = factor.reshape(factor.shape + (1, 1))
    mid = 0.5 * max_range
    return np.clip(mid + factor * (x - mid), 0.0, max_range)


def random_noise(image: DepthImage, sigma: float, rng: np.random.Generator) -> DepthImage:
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if sigma == 0:
        return image.copy()
    return DepthImage(noise_raw(image.data, sigma, rng, image.max_range), image.max_range)


def motion_blur(image: DepthImage, kernel_length: int, angle: float | None = None,
                rng: np.random.Generator | None = None) -> DepthImage:
    if angle is None:
        angle = float(rng.uniform(0.0, math.pi))
    k = line_kernel(kernel_length, angle)
    return DepthImage(np.clip(blur_raw(image.data, k), 0.0, image.max_range), image.max_range)


def contrast_stretch(image: DepthImage, factor: float, rng: np.random.Generator | None = None) -> DepthImage:
    return DepthImage(contrast_raw(image.data, factor, image.max_range), image.max_range)


# -- intervention sets -------------------------------------------------------------------
def intervene_batch(x: np.ndarray, cfg: InterventionConfig, rng: np.random.Generator,
                    max_range: float) -> np.ndarray:
    """Augment a batch ``(B, H, W)`` with every enabled type.  Returns ``(C, B, H, W)``.

    Each image draws its own random parameters for every augmentation type.
    """
    cfg.validate()
    _check_pow2(x.shape)
    b = x.shape[0]
    out = np.empty((cfg.augmentation_count,) + x.shape)
    for ci, name in enumerate(cfg.enabled):
        if name == "amplitude":
            lam = rng.uniform(cfg.lambda_low, cfg.lambda_high, size=b)
            raw, _ = amplitude_perturb_raw(x, lam)
            out[ci] = np.clip(raw, 0.0, max_range)
        elif name == "noise":
            out[ci] = noise_raw(x, cfg.noise_sigma, rng, max_range)
        elif name == "blur":
            angles = rng.uniform(0.0, math.pi, size=b)
            for bi in range(b):
                k = line_kernel(cfg.blur_kernel_length, angles[bi])
                out[ci, bi] = blur_raw(x[bi], k)
        elif name == "contrast":
            f = rng.uniform(cfg.contrast_low, cfg.contrast_high, size=b)
            out[ci] = contrast_raw(x, f, max_range)
    return out


def intervene_set(image: DepthImage, cfg: InterventionConfig, rng: np.random.Generator) -> list:
    """One augmented variant per enabled augmentation type; the input is left untouched."""
    variants = intervene_batch(image.data[None], cfg, rng, image.max_range)
    return [DepthImage(v[0], image.max_range) for v in variants]


def normalize(image: DepthImage) -> np.ndarray:
    return image.data / image.max_range


# -- PGM ------------------------------------------------------------------------------
_PGM_MAXVAL = 65535


def write_pgm(path, image: DepthImage) -> None:
    """16-bit binary PGM; meters are scaled so ``max_range`` maps to 65535."""
    q = np.rint(np.clip(image.data / image.max_range, 0.0, 1.0) * _PGM_MAXVAL).astype(">u2")
    header = (f"P5\n# max_range {image.max_range!r}\n"
              f"{image.width} {image.height}\n{_PGM_MAXVAL}\n").encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def read_pgm(path, default_max_range: float = 20.0) -> DepthImage:
    raw = Path(path).read_bytes()
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(raw, pos)
        if m is None:
            raise ConfigError(f"{path}: truncated PGM header")
        tok = m.group(1)
        pos = m.end()
        if tok.startswith(b"#"):
            comments.append(tok.decode("ascii", "replace"))
        else:
            tokens.append(tok)
    if tokens[0] != b"P5":
        raise ConfigError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    n = width * height
    payload = np.frombuffer(raw, dtype=dtype, count=n, offset=pos) if len(raw) - pos >= n * np.dtype(dtype).itemsize else None
    if payload is None:
        raise ConfigError(f"{path}: truncated PGM payload")
    max_range = default_max_range
    for c in comments:
        m = re.match(r"#\s*max_range\s+([0-9.eE+-]+)", c)
        if m:
            max_range = float(m.group(1))
    data = payload.reshape(height, width).astype(np.float64) / maxval * max_range
    return DepthImage(data, max_range)
