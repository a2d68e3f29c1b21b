"""Placement MDP: ABSs move on the plane, the state is the coverage bitmap."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .terrain import (
    ChannelModel,
    Scenario,
    bitmap_from_indicators,
    coverage_indicators,
)

# unit displacement for up, down, left, right
MOVES = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])
N_DIRECTIONS = len(MOVES)
DEFAULT_JOINT_CAP = 4 ** 6


class ActionMode(str, enum.Enum):
    FACTORED = "factored"   # one (abs, direction) pair per step
    JOINT = "joint"         # every ABS moves every step


def enumerate_actions(n_abs: int, mode: ActionMode | str = ActionMode.FACTORED,
                      joint_cap: int = DEFAULT_JOINT_CAP) -> int:
    if n_abs < 1:
        raise ValueError("need at least one ABS")
    mode = ActionMode(mode)
    if mode is ActionMode.FACTORED:
        return N_DIRECTIONS * n_abs
    n = N_DIRECTIONS ** n_abs
    if n > joint_cap:
        raise ValueError(f"joint action space 4^{n_abs} = {n} exceeds cap {joint_cap}")
    return n


def decode_action(action: int, n_abs: int, mode: ActionMode | str) -> np.ndarray:
    """(M, 2) unit displacements; ABSs that do not move get a zero row."""
    mode = ActionMode(mode)
    moves = np.zeros((n_abs, 2))
    if mode is ActionMode.FACTORED:
        if not 0 <= action < N_DIRECTIONS * n_abs:
            raise ValueError(f"action {action} out of range")
        m, direction = divmod(int(action), N_DIRECTIONS)
        moves[m] = MOVES[direction]
        return moves
    if not 0 <= action < N_DIRECTIONS ** n_abs:
        raise ValueError(f"action {action} out of range")
    a = int(action)
    for m in range(n_abs):
        a, direction = divmod(a, N_DIRECTIONS)
        moves[m] = MOVES[direction]
    return moves


def reward(coverage: float, target: float, out_of_border: bool, alpha: float = 1.0) -> float:
    if out_of_border:
        return -1.0
    if coverage >= target:
        return 1.0
    return -alpha * (coverage - 1.0) ** 2


@dataclass
class EnvState:
    bitmap: np.ndarray
    abs_positions: np.ndarray
    target: float
    t: int
    coverage: float


@dataclass
class StepResult:
    state: EnvState
    reward: float
    terminal: bool
    coverage: float
    out_of_border: bool
    n_exits: int


class PlacementEnv:
    """Environment over a fixed scenario.

    ``initial_positions`` defaults to a uniform random placement drawn once
    from ``seed``; every ``reset`` returns to it.
    """

    def __init__(
        self,
        scenario: Scenario,
        model: ChannelModel | str = ChannelModel.DISK,
        target: float = 0.7,
        alpha: float = 1.0,
        mode: ActionMode | str = ActionMode.FACTORED,
        initial_positions: Any = None,
        seed: int = 0,
        joint_cap: int = DEFAULT_JOINT_CAP,
        delta: float | None = None,
    ):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.scenario = scenario
        self.model = ChannelModel(model)
        self.target = float(target)
        self.alpha = float(alpha)
        self.mode = ActionMode(mode)
        self.delta = float(scenario.delta if delta is None else delta)
        n_abs = scenario.n_abs
        if initial_positions is None:
            rng = np.random.default_rng(seed)
            initial_positions = rng.uniform(0.0, scenario.region_side, size=(n_abs, 2))
        self.initial_positions = np.array(initial_positions, dtype=float).reshape(-1, 2)
        if len(self.initial_positions) < 1:
            raise ValueError("need at least one ABS")
        self.n_abs = len(self.initial_positions)
        self.n_actions = enumerate_actions(self.n_abs, self.mode, joint_cap)
        self.state: EnvState | None = None

    def evaluate(self, positions: np.ndarray) -> tuple[np.ndarray, float]:
        """Bitmap and coverage rate of a placement under the active model."""
        scen = self.scenario.with_placement(positions)
        covered = coverage_indicators(scen, self.model)
        return bitmap_from_indicators(scen, covered), int(covered.sum()) / scen.n_gus

    def reset(self, target: float | None = None) -> EnvState:
        if target is not None:
            self.target = float(target)
        pos = self.initial_positions.copy()
        bitmap, cov = self.evaluate(pos)
        self.state = EnvState(bitmap, pos, self.target, 0, cov)
        return self.state

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        result = self.transition(self.state, action)
        self.state = result.state
        return result

    def transition(self, state: EnvState, action: int) -> StepResult:
        """Pure transition function; does not touch ``self.state``."""
        L = self.scenario.region_side
        attempted = state.abs_positions + self.delta * decode_action(action, self.n_abs, self.mode)
        outside = np.any((attempted < 0.0) | (attempted > L), axis=1)
        n_exits = int(outside.sum())
        pos = np.clip(attempted, 0.0, L)
        bitmap, cov = self.evaluate(pos)
        out_of_border = n_exits >= 2
        r = reward(cov, state.target, out_of_border, self.alpha)
        terminal = (not out_of_border) and cov >= state.target
        nxt = EnvState(bitmap, pos, state.target, state.t + 1, cov)
        return StepResult(nxt, r, terminal, cov, out_of_border, n_exits)


class TraceWriter:
    """Append one JSON line per step to an episode trace file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def write(self, step: int, action: int, result: StepResult) -> None:
        rec = {
            "step": step,
            "action": int(action),
            "reward": result.reward,
            "coverage": result.coverage,
            "positions": result.state.abs_positions.tolist(),
        }
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")
