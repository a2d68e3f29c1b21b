"""World geometry, air-to-ground channel models and coverage computation.

Positions are horizontal coordinates in meters inside the square region
``[0, L]^2``. GUs sit at ground level; ABSs fly at the common altitude
``RadioParams.altitude``. Buildings are axis-aligned cuboids standing on the
ground.
"""

from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

SPEED_OF_LIGHT = 3e8


class PlacementError(RuntimeError):
    """Rejection sampling could not place the requested objects."""


class InfeasibleAltitudeError(ValueError):
    """The altitude is too high for any GU to reach the gain threshold."""


class ChannelModel(str, enum.Enum):
    DISK = "disk"
    TERRAIN = "terrain"


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


@dataclass(frozen=True)
class Building:
    cx: float
    cy: float
    hx: float
    hy: float
    height: float

    def __post_init__(self):
        if not (self.height > 0 and self.hx > 0 and self.hy > 0):
            raise ValueError(f"degenerate building {self}")

    @property
    def x_bounds(self) -> tuple[float, float]:
        return self.cx - self.hx, self.cx + self.hx

    @property
    def y_bounds(self) -> tuple[float, float]:
        return self.cy - self.hy, self.cy + self.hy

    def footprint_contains(self, x: float, y: float) -> bool:
        """Closed footprint test (faces count as inside)."""
        x0, x1 = self.x_bounds
        y0, y1 = self.y_bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def overlaps(self, other: Building) -> bool:
        """True if the two footprints share interior area."""
        return (abs(self.cx - other.cx) < self.hx + other.hx
                and abs(self.cy - other.cy) < self.hy + other.hy)


@dataclass(frozen=True)
class TerrainMap:
    region_side: float
    buildings: tuple[Building, ...] = ()

    def __post_init__(self):
        if self.region_side <= 0:
            raise ValueError("region_side must be positive")
        object.__setattr__(self, "buildings", tuple(self.buildings))
        for b in self.buildings:
            x0, x1 = b.x_bounds
            y0, y1 = b.y_bounds
            if x0 < 0 or y0 < 0 or x1 > self.region_side or y1 > self.region_side:
                raise ValueError(f"building footprint leaves the region: {b}")

    @cached_property
    def boxes(self) -> np.ndarray:
        """(B, 5) array of ``x0, x1, y0, y1, height`` rows."""
        if not self.buildings:
            return np.zeros((0, 5))
        return np.array([[*b.x_bounds, *b.y_bounds, b.height] for b in self.buildings])

    def inside_any_footprint(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.buildings:
            return np.zeros(len(points), dtype=bool)
        b = self.boxes
        x = points[:, 0:1]
        y = points[:, 1:2]
        inside = (x >= b[:, 0]) & (x <= b[:, 1]) & (y >= b[:, 2]) & (y <= b[:, 3])
        return inside.any(axis=1)


@dataclass(frozen=True)
class RadioParams:
    """Link budget parameters.

    The defaults reproduce the evaluation setup: 2 GHz carrier, 90 m
    altitude and a -93 dB channel-gain threshold (P = 0.1 W, sigma^2 =
    -83 dBm, SNR threshold 10 dB).
    """

    carrier_freq: float = 2e9
    altitude: float = 90.0
    tx_power: float = 0.1
    noise_power: float = 10.0 ** -11.3
    snr_threshold: float = 10.0
    nlos_excess_db: float = 20.0

    def __post_init__(self):
        for name in ("carrier_freq", "altitude", "tx_power", "noise_power", "snr_threshold"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value}")
        if not (math.isfinite(self.nlos_excess_db) and self.nlos_excess_db >= 0):
            raise ValueError("nlos_excess_db must be finite and non-negative")

    @property
    def beta0(self) -> float:
        """Channel power gain at the 1 m reference distance."""
        return (4.0 * math.pi * self.carrier_freq / SPEED_OF_LIGHT) ** -2

    @property
    def gain_threshold(self) -> float:
        return self.snr_threshold * self.noise_power / self.tx_power

    @property
    def nlos_factor(self) -> float:
        return db_to_linear(-self.nlos_excess_db)

    @classmethod
    def with_gain_threshold_db(cls, threshold_db: float, **kwargs) -> RadioParams:
        """Build params whose gain threshold is ``threshold_db`` by solving for noise power."""
        params = cls(**kwargs)
        noise = db_to_linear(threshold_db) * params.tx_power / params.snr_threshold
        return replace(params, noise_power=noise)

    @classmethod
    def for_coverage_range(cls, reach: float, **kwargs) -> RadioParams:
        """Params whose LoS coverage range is ``reach`` meters."""
        params = cls(**kwargs)
        gbar = params.beta0 / (reach * reach + params.altitude * params.altitude)
        return cls.with_gain_threshold_db(linear_to_db(gbar), **kwargs)

    def to_dict(self) -> dict[str, float]:
        return {
            "fc_hz": self.carrier_freq,
            "H_m": self.altitude,
            "P_w": self.tx_power,
            "sigma2_w": self.noise_power,
            "gamma_db": linear_to_db(self.snr_threshold),
            "nlos_db": self.nlos_excess_db,
        }

    @classmethod
    def from_dict(cls, d: dict[str, float]) -> RadioParams:
        return cls(
            carrier_freq=float(d["fc_hz"]),
            altitude=float(d["H_m"]),
            tx_power=float(d["P_w"]),
            noise_power=float(d["sigma2_w"]),
            snr_threshold=db_to_linear(float(d["gamma_db"])),
            nlos_excess_db=float(d.get("nlos_db", 20.0)),
        )


def _as_points(points: Any) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    return arr.reshape(-1, 2)


@dataclass
class Scenario:
    gus: np.ndarray
    abss: np.ndarray
    terrain: TerrainMap
    radio: RadioParams = field(default_factory=RadioParams)
    grid_k: int = 20
    delta: float = 10.0
    network: list[dict] | None = None

    def __post_init__(self):
        self.gus = _as_points(self.gus)
        self.abss = _as_points(self.abss)
        if len(self.gus) < 1:
            raise ValueError("a scenario needs at least one GU")
        if self.grid_k < 1:
            raise ValueError("grid_k must be >= 1")
        L = self.terrain.region_side
        if not np.all(np.isfinite(self.gus)) or np.any(self.gus < 0) or np.any(self.gus > L):
            raise ValueError("GU positions must lie inside the region")
        if np.any(self.terrain.inside_any_footprint(self.gus)):
            raise ValueError("GU positions must lie outside building footprints")

    @property
    def region_side(self) -> float:
        return self.terrain.region_side

    @property
    def n_gus(self) -> int:
        return len(self.gus)

    @property
    def n_abs(self) -> int:
        return len(self.abss)

    def with_placement(self, abss: Any) -> Scenario:
        # GUs and terrain are unchanged, so skip re-validation
        out = copy.copy(self)
        out.abss = _as_points(np.array(abss, dtype=float))
        return out

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "region_side": self.region_side,
            "buildings": [
                {"cx": b.cx, "cy": b.cy, "hx": b.hx, "hy": b.hy, "h": b.height}
                for b in self.terrain.buildings
            ],
            "gus": self.gus.tolist(),
            "abss": self.abss.tolist(),
            "radio": self.radio.to_dict(),
            "K": self.grid_k,
            "delta_m": self.delta,
        }
        if self.network is not None:
            d["network"] = self.network
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Scenario:
        terrain = TerrainMap(
            float(d["region_side"]),
            tuple(Building(float(b["cx"]), float(b["cy"]), float(b["hx"]),
                           float(b["hy"]), float(b["h"])) for b in d.get("buildings", [])),
        )
        return cls(
            gus=d["gus"],
            abss=d.get("abss", []),
            terrain=terrain,
            radio=RadioParams.from_dict(d["radio"]),
            grid_k=int(d["K"]),
            delta=float(d.get("delta_m", 10.0)),
            network=d.get("network"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_terrain(
    seed: int,
    region_side: float = 3000.0,
    n_buildings: int = 30,
    footprint: float = 150.0,
    height_range: Sequence[float] = (30.0, 70.0),
    max_attempts: int | None = None,
) -> TerrainMap:
    """Scatter ``n_buildings`` non-overlapping square cuboids over the region.

    Centers are drawn uniformly so that each footprint fits in the region;
    candidates overlapping an accepted building are rejected. Heights are
    uniform in ``height_range``.
    """
    lo, hi = map(float, height_range)
    if not 0 < footprint <= region_side:
        raise ValueError("footprint must be positive and fit in the region")
    if not 0 < lo <= hi:
        raise ValueError("height_range must be ordered and positive")
    if n_buildings < 0:
        raise ValueError("n_buildings must be >= 0")
    rng = np.random.default_rng(seed)
    half = footprint / 2.0
    budget = max_attempts if max_attempts is not None else 1000 * max(n_buildings, 1)
    buildings: list[Building] = []
    attempts = 0
    while len(buildings) < n_buildings:
        if attempts >= budget:
            raise PlacementError(
                f"placed {len(buildings)} of {n_buildings} buildings in {budget} attempts")
        attempts += 1
        cx, cy = rng.uniform(half, region_side - half, size=2)
        cand = Building(float(cx), float(cy), half, half, float(rng.uniform(lo, hi)))
        if any(cand.overlaps(b) for b in buildings):
            continue
        buildings.append(cand)
    return TerrainMap(float(region_side), tuple(buildings))


def place_gus(rng: np.random.Generator, n_gus: int, terrain: TerrainMap,
              max_attempts: int | None = None) -> np.ndarray:
    """Uniformly place GUs in the region, outside every building footprint."""
    if n_gus < 1:
        raise ValueError("n_gus must be >= 1")
    budget = max_attempts if max_attempts is not None else 1000 * n_gus
    out = np.zeros((n_gus, 2))
    count = 0
    for _ in range(budget):
        p = rng.uniform(0.0, terrain.region_side, size=2)
        if terrain.inside_any_footprint(p)[0]:
            continue
        out[count] = p
        count += 1
        if count == n_gus:
            return out
    raise PlacementError(f"placed {count} of {n_gus} GUs in {budget} attempts")


def generate_scenario(
    seed: int,
    n_gus: int = 80,
    n_abs: int = 10,
    region_side: float = 3000.0,
    n_buildings: int = 30,
    footprint: float = 150.0,
    height_range: Sequence[float] = (30.0, 70.0),
    radio: RadioParams | None = None,
    grid_k: int = 20,
    delta: float = 10.0,
) -> Scenario:
    """Random terrain, GUs outside footprints, and uniformly random ABS positions."""
    if n_abs < 1:
        raise ValueError("n_abs must be >= 1")
    terrain = generate_terrain(seed, region_side, n_buildings, footprint, height_range)
    rng = np.random.default_rng([seed, 1])
    gus = place_gus(rng, n_gus, terrain)
    abss = rng.uniform(0.0, region_side, size=(n_abs, 2))
    return Scenario(gus, abss, terrain, radio or RadioParams(), grid_k, delta)


def reference_scenario(seed: int = 0) -> Scenario:
    """M=10, N=80, H=90 m, L=3 km, K=20, delta=10 m, 30 buildings."""
    return generate_scenario(seed)


# --- channel -----------------------------------------------------------------

def horizontal_distance(abs_xy: Any, gu_xy: Any) -> np.ndarray | float:
    a = np.asarray(abs_xy, dtype=float)
    g = np.asarray(gu_xy, dtype=float)
    diff = a - g
    return np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1])


def gain_los(abs_xy: Any, gu_xy: Any, radio: RadioParams) -> np.ndarray | float:
    """Free-space gain ``beta0 / (d^2 + H^2)``; broadcasts over leading axes."""
    d = horizontal_distance(abs_xy, gu_xy)
    return radio.beta0 / (d * d + radio.altitude * radio.altitude)


def coverage_range(radio: RadioParams) -> float:
    """Largest horizontal distance at which the LoS gain still meets the threshold."""
    h2 = radio.altitude ** 2
    sq = radio.beta0 / radio.gain_threshold - h2
    # the feasibility boundary itself gives D = 0; allow for rounding there
    if sq < -1e-9 * h2:
        raise InfeasibleAltitudeError(
            f"altitude {radio.altitude} m is too high for threshold "
            f"{linear_to_db(radio.gain_threshold):.2f} dB")
    return math.sqrt(max(sq, 0.0))


def _slab(origin, direction, lo, hi):
    """Open parameter interval where ``lo < origin + t*direction < hi``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / direction
        t2 = (hi - origin) / direction
    moving = direction != 0
    inside = (lo < origin) & (origin < hi)
    t_lo = np.where(moving, np.minimum(t1, t2), np.where(inside, -np.inf, np.inf))
    t_hi = np.where(moving, np.maximum(t1, t2), np.where(inside, np.inf, -np.inf))
    return t_lo, t_hi


def _blocked_matrix(abs_xy: np.ndarray, altitude: float, gus: np.ndarray,
                    boxes: np.ndarray) -> np.ndarray:
    """(N, B) booleans: segment from GU n (ground) to the ABS enters box b."""
    gx = gus[:, 0:1]
    gy = gus[:, 1:2]
    dx = abs_xy[0] - gx
    dy = abs_xy[1] - gy
    x_lo, x_hi = _slab(gx, dx, boxes[:, 0], boxes[:, 1])
    y_lo, y_hi = _slab(gy, dy, boxes[:, 2], boxes[:, 3])
    # the segment rises from z=0 to z=altitude, so the z-slab is (0, h/altitude)
    z_hi = boxes[:, 4] / altitude
    t_enter = np.maximum(np.maximum(x_lo, y_lo), 0.0)
    t_exit = np.minimum(np.minimum(x_hi, y_hi), np.minimum(z_hi, 1.0))
    return t_enter < t_exit


def los_blocked(abs_xy: Any, altitude: float, gu_xy: Any, terrain: TerrainMap) -> bool:
    """Exact test: does the ground-to-ABS segment pass through a building interior?"""
    if not terrain.buildings:
        return False
    a = np.asarray(abs_xy, dtype=float)
    g = np.asarray(gu_xy, dtype=float).reshape(1, 2)
    return bool(_blocked_matrix(a, altitude, g, terrain.boxes).any())


def los_blocked_many(abs_xy: Any, altitude: float, gus: Any, terrain: TerrainMap) -> np.ndarray:
    gus = _as_points(gus)
    if not terrain.buildings:
        return np.zeros(len(gus), dtype=bool)
    return _blocked_matrix(np.asarray(abs_xy, dtype=float), altitude, gus,
                           terrain.boxes).any(axis=1)


def gain_site_specific(abs_xy: Any, gu_xy: Any, radio: RadioParams,
                       terrain: TerrainMap) -> float:
    """LoS gain, attenuated by the NLoS excess loss when a building blocks the path."""
    g = float(gain_los(abs_xy, gu_xy, radio))
    if los_blocked(abs_xy, radio.altitude, gu_xy, terrain):
        return g * radio.nlos_factor
    return g


# --- coverage ----------------------------------------------------------------

def coverage_indicator_disk(gu_index: int, scenario: Scenario) -> int:
    if scenario.n_abs == 0:
        return 0
    d = horizontal_distance(scenario.abss, scenario.gus[gu_index])
    return int(d.min() <= coverage_range(scenario.radio))


def coverage_indicators(scenario: Scenario, model: ChannelModel | str) -> np.ndarray:
    """Per-GU coverage flags, checking ABSs from nearest to farthest.

    The search for GU n stops at the first ABS that covers it. Because the
    LoS gain falls with distance and NLoS only attenuates it, the search
    also stops once an ABS is beyond the coverage range (disk) or its LoS
    gain is already below threshold (terrain): no farther ABS can succeed.
    """
    model = ChannelModel(model)
    gus, abss, radio = scenario.gus, scenario.abss, scenario.radio
    covered = np.zeros(len(gus), dtype=np.int64)
    if len(abss) == 0:
        return covered
    dist = horizontal_distance(abss[None, :, :], gus[:, None, :])
    order = np.argsort(dist, axis=1, kind="stable")
    if model is ChannelModel.DISK:
        reach = coverage_range(radio)
        nearest = dist[np.arange(len(gus)), order[:, 0]]
        covered[nearest <= reach] = 1
        return covered

    gbar = radio.gain_threshold
    terrain = scenario.terrain
    g_los = gain_los(abss[None, :, :], gus[:, None, :], radio)
    for n in range(len(gus)):
        for m in order[n]:
            if g_los[n, m] < gbar:
                break
            if gain_site_specific(abss[m], gus[n], radio, terrain) >= gbar:
                covered[n] = 1
                break
    return covered


def grid_cells(points: np.ndarray, region_side: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.floor(_as_points(points) * (k / region_side)).astype(np.int64)
    idx = np.clip(idx, 0, k - 1)
    return idx[:, 0], idx[:, 1]


def bitmap_from_indicators(scenario: Scenario, covered: np.ndarray) -> np.ndarray:
    k = scenario.grid_k
    bitmap = np.zeros((k, k), dtype=np.int64)
    i, j = grid_cells(scenario.gus, scenario.region_side, k)
    np.add.at(bitmap, (i, j), covered)
    return bitmap


def coverage_bitmap(scenario: Scenario, model: ChannelModel | str) -> np.ndarray:
    """K x K matrix of covered-GU counts per grid cell."""
    return bitmap_from_indicators(scenario, coverage_indicators(scenario, model))


def gu_count_map(scenario: Scenario) -> np.ndarray:
    return bitmap_from_indicators(scenario, np.ones(scenario.n_gus, dtype=np.int64))


def coverage_rate(bitmap: np.ndarray, n_gus: int) -> float:
    total = int(np.sum(bitmap))
    if total > n_gus:
        raise ValueError(f"bitmap counts {total} covered GUs but only {n_gus} exist")
    return total / n_gus


def best_gains(scenario: Scenario, model: ChannelModel | str) -> np.ndarray:
    """Per-GU best channel gain over all ABSs (0 when there are no ABSs)."""
    model = ChannelModel(model)
    n = scenario.n_gus
    if scenario.n_abs == 0:
        return np.zeros(n)
    g = gain_los(scenario.abss[None, :, :], scenario.gus[:, None, :], scenario.radio)
    if model is ChannelModel.TERRAIN and scenario.terrain.buildings:
        for m, a in enumerate(scenario.abss):
            blocked = los_blocked_many(a, scenario.radio.altitude, scenario.gus, scenario.terrain)
            g[blocked, m] *= scenario.radio.nlos_factor
    return g.max(axis=1)
