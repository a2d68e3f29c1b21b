"""Aerial base station placement by deep reinforcement learning."""

from .terrain import (
    Building,
    ChannelModel,
    RadioParams,
    Scenario,
    TerrainMap,
    coverage_bitmap,
    coverage_range,
    coverage_rate,
    generate_scenario,
    generate_terrain,
    los_blocked,
)

__all__ = [
    "Building",
    "ChannelModel",
    "RadioParams",
    "Scenario",
    "TerrainMap",
    "coverage_bitmap",
    "coverage_range",
    "coverage_rate",
    "generate_scenario",
    "generate_terrain",
    "los_blocked",
]

__version__ = "0.1.0"
