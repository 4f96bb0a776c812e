"""Procedural scenario generation for the four domain styles and scenario (de)serialization."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError

DOMAINS = ("playground", "grassland", "snow_mountain", "forest")
SCENARIO_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder; ``center`` is the centroid, so it spans center.z +/- height/2."""
    center: tuple
    radius: float
    height: float

    @property
    def z_lo(self) -> float:
        return self.center[2] - 0.5 * self.height

    @property
    def z_hi(self) -> float:
        return self.center[2] + 0.5 * self.height


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple


@dataclass(frozen=True)
class Texture:
    """World-anchored sinusoidal depth perturbation on every hit surface."""
    amplitude: float = 0.0
    frequency: float = 1.0
    phases: tuple = (0.0, 0.0, 0.0)


@dataclass
class Heightfield:
    """Bilinear terrain over a regular grid; heights[i, j] sits at (x0 + j*cell, y0 + i*cell)."""
    x0: float
    y0: float
    cell: float
    heights: np.ndarray

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        h = self.heights
        gx = np.max(np.abs(np.diff(h, axis=1))) / self.cell if h.shape[1] > 1 else 0.0
        gy = np.max(np.abs(np.diff(h, axis=0))) / self.cell if h.shape[0] > 1 else 0.0
        self.lipschitz = float(math.hypot(gx, gy))
        self.h_max = float(h.max())
        self.h_min = float(h.min())

    @property
    def is_flat(self) -> bool:
        return self.h_max == self.h_min

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.is_flat:
            return np.full(np.broadcast(x, y).shape, self.h_max)
        ny, nx = self.heights.shape
        u = np.clip((x - self.x0) / self.cell, 0.0, nx - 1.0)
        v = np.clip((y - self.y0) / self.cell, 0.0, ny - 1.0)
        j = np.minimum(np.floor(u).astype(np.int64), nx - 2)
        i = np.minimum(np.floor(v).astype(np.int64), ny - 2)
        fu = u - j
        fv = v - i
        h = self.heights
        return ((1 - fv) * ((1 - fu) * h[i, j] + fu * h[i, j + 1])
                + fv * ((1 - fu) * h[i + 1, j] + fu * h[i + 1, j + 1]))

    def __eq__(self, other):
        return (isinstance(other, Heightfield) and (self.x0, self.y0, self.cell) == (other.x0, other.y0, other.cell)
                and np.array_equal(self.heights, other.heights))


@dataclass
class ScenarioSpec:
    domain_name: str
    seed: int | None
    bounds: tuple | None                 # ((xlo, ylo, zlo), (xhi, yhi, zhi)); None = unbounded
    terrain: Heightfield | None          # None = no terrain at all
    cylinders: tuple = ()
    boxes: tuple = ()
    obstacle_density: float = 0.0        # obstacles per 100 m^2 of footprint
    obstacle_radius_range: tuple = (0.0, 0.0)
    terrain_roughness: float = 0.0       # peak hill height in meters
    texture: Texture = field(default_factory=Texture)

    @property
    def obstacles(self) -> tuple:
        return tuple(self.cylinders) + tuple(self.boxes)

    def without_obstacles(self) -> "ScenarioSpec":
        return replace(self, cylinders=(), boxes=())


@dataclass(frozen=True)
class DomainStyle:
    density: float
    radius_range: tuple
    height_range: tuple
    roughness: float
    hill_sigma: tuple
    texture_amplitude: float
    texture_frequency: float
    kind: str                    # "cylinder" or "box"


DOMAIN_STYLES = {
    "playground": DomainStyle(0.35, (1.0, 2.0), (5.0, 9.0), 0.0, (4.0, 8.0), 0.05, 0.8, "cylinder"),
    "grassland": DomainStyle(0.2, (0.5, 1.2), (0.6, 1.5), 0.8, (4.0, 8.0), 0.25, 2.0, "box"),
    "snow_mountain": DomainStyle(0.6, (0.5, 1.2), (3.0, 7.0), 3.0, (2.0, 4.0), 0.6, 3.0, "cylinder"),
    "forest": DomainStyle(2.5, (0.2, 0.45), (8.0, 10.0), 0.0, (4.0, 8.0), 0.3, 1.5, "cylinder"),
}

DEFAULT_BOUNDS = ((-20.0, -20.0, 0.0), (20.0, 20.0, 12.0))
TERRAIN_CELL = 1.0
HILL_COUNT = 8


def _terrain(style: DomainStyle, bounds, rng: np.random.Generator) -> Heightfield:
    (xlo, ylo, _), (xhi, yhi, _) = bounds
    nx = int(round((xhi - xlo) / TERRAIN_CELL)) + 1
    ny = int(round((yhi - ylo) / TERRAIN_CELL)) + 1
    heights = np.zeros((ny, nx))
    if style.roughness > 0:
        xs = xlo + TERRAIN_CELL * np.arange(nx)
        ys = ylo + TERRAIN_CELL * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys)
        for _ in range(HILL_COUNT):
            cx = rng.uniform(xlo, xhi)
            cy = rng.uniform(ylo, yhi)
            amp = rng.uniform(0.3, 1.0) * style.roughness
            s = rng.uniform(*style.hill_sigma)
            heights += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * s * s))
        heights = np.minimum(heights, style.roughness)
    return Heightfield(xlo, ylo, TERRAIN_CELL, heights)


def generate_scenario(domain_name: str, seed: int, **overrides) -> ScenarioSpec:
    """Pure function of ``(domain_name, seed, overrides)``.

    ``overrides`` may replace ``obstacle_density`` or ``texture_amplitude``.
    """
    if domain_name not in DOMAIN_STYLES:
        raise ConfigError(f"unknown domain {domain_name!r}; expected one of {DOMAINS}")
    style = DOMAIN_STYLES[domain_name]
    unknown = set(overrides) - {"obstacle_density", "texture_amplitude"}
    if unknown:
        raise ConfigError(f"unknown scenario override(s): {sorted(unknown)}")
    density = float(overrides.get("obstacle_density", style.density))
    rng = np.random.default_rng([int(seed), DOMAINS.index(domain_name)])
    bounds = DEFAULT_BOUNDS
    terrain = _terrain(style, bounds, rng)
    (xlo, ylo, _), (xhi, yhi, zhi) = bounds
    area = (xhi - xlo) * (yhi - ylo)
    count = int(round(density * area / 100.0))

    cylinders, boxes = [], []
    for _ in range(count):
        r = rng.uniform(*style.radius_range)
        height = rng.uniform(*style.height_range)
        cx = rng.uniform(xlo + r, xhi - r)
        cy = rng.uniform(ylo + r, yhi - r)
        ring = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        foot = terrain.height(cx + r * np.cos(ring), cy + r * np.sin(ring))
        base = float(min(foot.min(), terrain.height(cx, cy)))
        height = min(height, zhi - base)
        if style.kind == "cylinder":
            cylinders.append(Cylinder((cx, cy, base + 0.5 * height), r, height))
        else:
            half = (r, r * rng.uniform(0.6, 1.0), 0.5 * height)
            boxes.append(Box((cx, cy, base + half[2]), half))

    tex_amp = float(overrides.get("texture_amplitude", style.texture_amplitude))
    texture = Texture(tex_amp, style.texture_frequency, tuple(float(p) for p in rng.uniform(0, 2 * np.pi, 3)))
    return ScenarioSpec(
        domain_name=domain_name,
        seed=int(seed),
        bounds=bounds,
        terrain=terrain,
        cylinders=tuple(cylinders),
        boxes=tuple(boxes),
        obstacle_density=density,
        obstacle_radius_range=tuple(style.radius_range),
        terrain_roughness=style.roughness,
        texture=texture,
    )


def obstacles_within_bounds(spec: ScenarioSpec) -> bool:
    if spec.bounds is None:
        return True
    (xlo, ylo, zlo), (xhi, yhi, zhi) = spec.bounds
    eps = 1e-9
    for c in spec.cylinders:
        x, y, _ = c.center
        if not (xlo - eps <= x - c.radius and x + c.radius <= xhi + eps
                and ylo - eps <= y - c.radius and y + c.radius <= yhi + eps
                and zlo - eps <= c.z_lo and c.z_hi <= zhi + eps):
            return False
    for b in spec.boxes:
        lo = np.subtract(b.center, b.half_extents)
        hi = np.add(b.center, b.half_extents)
        if np.any(lo < np.array([xlo, ylo, zlo]) - eps) or np.any(hi > np.array([xhi, yhi, zhi]) + eps):
            return False
    return True


# -- serialization ---------------------------------------------------------------
def scenario_to_dict(spec: ScenarioSpec) -> dict:
    """Documented key set: format_version, domain_name, seed, bounds, terrain{x0,y0,cell,heights},
    cylinders[{center,radius,height}], boxes[{center,half_extents}], obstacle_density,
    obstacle_radius_range, terrain_roughness, texture{amplitude,frequency,phases}."""
    terrain = None
    if spec.terrain is not None:
        t = spec.terrain
        terrain = {"x0": t.x0, "y0": t.y0, "cell": t.cell, "heights": t.heights.tolist()}
    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "domain_name": spec.domain_name,
        "seed": spec.seed,
        "bounds": None if spec.bounds is None else [list(spec.bounds[0]), list(spec.bounds[1])],
        "terrain": terrain,
        "cylinders": [asdict(c) for c in spec.cylinders],
        "boxes": [asdict(b) for b in spec.boxes],
        "obstacle_density": spec.obstacle_density,
        "obstacle_radius_range": list(spec.obstacle_radius_range),
        "terrain_roughness": spec.terrain_roughness,
        "texture": asdict(spec.texture),
    }


def scenario_from_dict(d: dict) -> ScenarioSpec:
    version = d.get("format_version")
    if version != SCENARIO_FORMAT_VERSION:
        raise ConfigError(f"unsupported scenario format_version {version!r}")
    t = d.get("terrain")
    terrain = None if t is None else Heightfield(t["x0"], t["y0"], t["cell"], np.array(t["heights"]))
    bounds = None if d.get("bounds") is None else (tuple(d["bounds"][0]), tuple(d["bounds"][1]))
    return ScenarioSpec(
        domain_name=d["domain_name"],
        seed=d.get("seed"),
        bounds=bounds,
        terrain=terrain,
        cylinders=tuple(Cylinder(tuple(c["center"]), c["radius"], c["height"]) for c in d.get("cylinders", [])),
        boxes=tuple(Box(tuple(b["center"]), tuple(b["half_extents"])) for b in d.get("boxes", [])),
        obstacle_density=d.get("obstacle_density", 0.0),
        obstacle_radius_range=tuple(d.get("obstacle_radius_range", (0.0, 0.0))),
        terrain_roughness=d.get("terrain_roughness", 0.0),
        texture=Texture(**{**d.get("texture", {}), "phases": tuple(d.get("texture", {}).get("phases", (0, 0, 0)))}),
    )


def save_scenario(path, spec: ScenarioSpec) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(spec), indent=2))


def load_scenario(path) -> ScenarioSpec:
    return scenario_from_dict(json.loads(Path(path).read_text()))
