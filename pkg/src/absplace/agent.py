"""Prioritized-replay double DQN training with phased target coverage."""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .env import ActionMode, PlacementEnv
from .qnet import (
    Adam,
    QNetwork,
    default_architecture,
    load_network,
    loss_and_grad,
    save_network,
    sync_target,
)
from .replay import ReplayBuffer
from .terrain import ChannelModel, Scenario, gu_count_map

log = logging.getLogger(__name__)

LOG_FIELDS = ["stage", "phase", "target", "episode", "step", "epsilon", "loss",
              "coverage", "reward"]


class Algorithm(str, enum.Enum):
    DDQN = "ddqn"
    DQN = "dqn"


@dataclass
class AgentConfig:
    discount: float = 0.95
    batch_size: int = 64
    steps_per_episode: int = 100
    episodes: int = 900
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    target_sync: int = 200
    target_start: float = 0.70
    target_step: float = 0.05
    patience: int = 50
    advance_after: int = 5
    algorithm: Algorithm = Algorithm.DDQN
    buffer_size: int = 40000
    mu: float = 0.6
    nu: float = 0.4
    lr: float = 1e-4
    clip_norm: float = 10.0
    alpha: float = 1.0
    action_mode: ActionMode = ActionMode.FACTORED
    architecture: list[dict] | None = None
    seed: int = 0

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.action_mode = ActionMode(self.action_mode)
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.batch_size > self.buffer_size:
            raise ValueError("batch_size cannot exceed buffer_size")
        if min(self.batch_size, self.steps_per_episode, self.episodes, self.target_sync,
               self.patience, self.advance_after) < 1:
            raise ValueError("counts must be positive")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["algorithm"] = self.algorithm.value
        d["action_mode"] = self.action_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AgentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)


def target_schedule(start: float, step: float, upper: float = 1.0) -> list[float]:
    out = []
    k = 0
    while True:
        value = round(start + k * step, 10)
        if value > upper + 1e-12:
            return out
        out.append(value)
        k += 1


def select_action(net: QNetwork, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(net.forward(obs)[0]))


def dqn_targets_from_q(rewards, q_next_target, terminals, discount: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    boot = np.max(q_next_target, axis=-1)
    return np.where(terminals, rewards, rewards + discount * boot)


def ddqn_targets_from_q(rewards, q_next_online, q_next_target, terminals,
                        discount: float) -> np.ndarray:
    """Online network picks the next action, target network scores it."""
    rewards = np.asarray(rewards, dtype=float)
    q_next_target = np.asarray(q_next_target)
    best = np.argmax(q_next_online, axis=-1)
    boot = np.take_along_axis(q_next_target, best[..., None], axis=-1)[..., 0]
    return np.where(terminals, rewards, rewards + discount * boot)


def target_dqn(reward, next_obs, terminal, target_net: QNetwork, discount: float):
    q_t = target_net.forward(next_obs)
    out = dqn_targets_from_q(np.atleast_1d(reward), q_t, np.atleast_1d(terminal), discount)
    return out if np.ndim(reward) else float(out[0])


def target_ddqn(reward, next_obs, terminal, online: QNetwork, target_net: QNetwork,
                discount: float):
    q_o = online.forward(next_obs)
    q_t = target_net.forward(next_obs)
    out = ddqn_targets_from_q(np.atleast_1d(reward), q_o, q_t, np.atleast_1d(terminal), discount)
    return out if np.ndim(reward) else float(out[0])


@dataclass
class PhaseResult:
    target: float
    success: bool
    episodes: int
    successes: int
    train_steps: int


@dataclass
class TrainReport:
    episodes: list[dict[str, Any]] = field(default_factory=list)
    phases: list[PhaseResult] = field(default_factory=list)
    log_rows: list[list[Any]] = field(default_factory=list)
    best_positions: np.ndarray | None = None
    best_coverage: float = -1.0
    initial_coverage: float = 0.0
    achieved_target: float | None = None

    @property
    def losses(self) -> list[float]:
        return [r[6] for r in self.log_rows if r[6] != ""]

    def write_csv(self, path: str | Path) -> None:
        write_log(path, self.log_rows)

    def summary(self) -> dict[str, Any]:
        return {
            "best_coverage": self.best_coverage,
            "initial_coverage": self.initial_coverage,
            "achieved_target": self.achieved_target,
            "best_positions": None if self.best_positions is None
            else self.best_positions.tolist(),
            "phases": [dataclasses.asdict(p) for p in self.phases],
            "episodes": self.episodes,
        }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_log(path: str | Path, rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class Trainer:
    """Owns the online/target networks, optimizer and RNG across phases and stages."""

    def __init__(self, config: AgentConfig, n_actions: int, grid_k: int,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        arch = config.architecture or default_architecture()
        self.online = QNetwork.build(arch, (grid_k, grid_k, 1), n_actions, self.rng)
        self.target = sync_target(self.online)
        self.optimizer = Adam(self.online.n_params, lr=config.lr, clip_norm=config.clip_norm)
        self.train_steps = 0
        self.syncs = 0
        self.buffer: ReplayBuffer | None = None

    @property
    def prioritized(self) -> bool:
        return self.config.mu > 0 or self.config.nu > 0

    def epsilon(self, phase_step: int) -> float:
        c = self.config
        horizon = c.eps_decay_fraction * c.episodes * c.steps_per_episode
        if horizon <= 0:
            return c.eps_end
        frac = min(1.0, phase_step / horizon)
        return c.eps_start + frac * (c.eps_end - c.eps_start)

    def train_step(self, scale: float) -> float:
        c = self.config
        batch = self.buffer.sample(c.batch_size, self.rng)
        s = batch.states / scale
        s2 = batch.next_states / scale
        q_next_t = self.target.forward(s2)
        if c.algorithm is Algorithm.DDQN:
            q_next_o = self.online.forward(s2)
            y = ddqn_targets_from_q(batch.rewards, q_next_o, q_next_t, batch.terminals,
                                    c.discount)
        else:
            y = dqn_targets_from_q(batch.rewards, q_next_t, batch.terminals, c.discount)
        loss, grads, td = loss_and_grad(self.online, s, batch.actions, y, batch.weights)
        self.optimizer.step(self.online.flat, self.online.flat_grad(grads))
        self.buffer.update_priorities(batch.indices, td)
        self.train_steps += 1
        if self.train_steps % c.target_sync == 0:
            self.target = sync_target(self.online)
            self.syncs += 1
            log.debug("target network synced at training step %d", self.train_steps)
        return loss

    def train_phase(self, env: PlacementEnv, target: float, report: TrainReport,
                    stage: str = "preliminary", phase: int = 0) -> PhaseResult:
        """Run one phase toward coverage ``target`` with a fresh replay memory."""
        c = self.config
        scale = float(max(1, gu_count_map(env.scenario).max()))
        self.buffer = ReplayBuffer(c.buffer_size, (env.scenario.grid_k,) * 2, c.mu, c.nu)
        phase_step = 0
        successes = 0
        fail_streak = 0
        start_steps = self.train_steps
        episodes_run = 0
        for episode in range(c.episodes):
            state = env.reset(target)
            self._track(report, state.coverage, state.abs_positions)
            reward_sum = 0.0
            losses = []
            reached = False
            trained = self.buffer.full
            max_cov = state.coverage
            t = 0
            for t in range(1, c.steps_per_episode + 1):
                eps = self.epsilon(phase_step)
                obs = state.bitmap / scale
                action = select_action(self.online, obs, eps, self.rng)
                res = env.step(action)
                self.buffer.push(state.bitmap, action, res.reward, res.state.bitmap, res.terminal)
                self._track(report, res.coverage, res.state.abs_positions)
                loss: Any = ""
                if self.buffer.full:
                    trained = True
                    loss = self.train_step(scale)
                    losses.append(loss)
                report.log_rows.append([stage, phase, target, episode, t, eps, loss,
                                        res.coverage, res.reward])
                reward_sum += res.reward
                max_cov = max(max_cov, res.coverage)
                phase_step += 1
                state = res.state
                if res.terminal:
                    reached = True
                    if self.buffer.full:
                        break
            episodes_run += 1
            report.episodes.append({
                "stage": stage, "phase": phase, "target": target, "episode": episode,
                "steps": t, "final_coverage": state.coverage, "max_coverage": max_cov,
                "reward_sum": reward_sum,
                "mean_loss": float(np.mean(losses)) if losses else None,
                "success": reached,
            })
            if not trained:
                continue
            if reached:
                successes += 1
                fail_streak = 0
            else:
                fail_streak += 1
            if successes >= c.advance_after or fail_streak >= c.patience:
                break
        result = PhaseResult(target, successes >= c.advance_after, episodes_run, successes,
                             self.train_steps - start_steps)
        report.phases.append(result)
        if result.success:
            report.achieved_target = target
        log.info("%s phase %d target %.2f: %s after %d episodes (best coverage %.4f)",
                 stage, phase, target, "reached" if result.success else "failed",
                 episodes_run, report.best_coverage)
        return result

    @staticmethod
    def _track(report: TrainReport, coverage: float, positions: np.ndarray) -> None:
        if coverage > report.best_coverage:
            report.best_coverage = coverage
            report.best_positions = positions.copy()

    def run_stage(self, env: PlacementEnv, report: TrainReport, stage: str,
                  start_phase: int = 0, checkpoint_dir: Path | None = None,
                  max_phases: int | None = None, prior_rows: list | None = None,
                  extra: dict[str, Any] | None = None) -> tuple[bool, int]:
        """Escalate the target until a phase fails or full coverage is reached.

        Returns ``(completed, phases_run)``; ``completed`` is False when
        ``max_phases`` stopped the stage early.
        """
        c = self.config
        if start_phase == 0:
            report.initial_coverage = env.reset().coverage
            self._track(report, report.initial_coverage, env.initial_positions)
        # targets already met by the starting placement teach nothing
        targets = [t for t in target_schedule(c.target_start, c.target_step)
                   if t > report.initial_coverage]
        ran = 0
        for phase in range(start_phase, len(targets)):
            if max_phases is not None and ran >= max_phases:
                return False, ran
            result = self.train_phase(env, targets[phase], report, stage, phase)
            ran += 1
            finished = not result.success or phase == len(targets) - 1
            if checkpoint_dir is not None:
                snapshot = dataclasses.replace(
                    report, log_rows=list(prior_rows or []) + report.log_rows)
                self.save_checkpoint(checkpoint_dir, stage, phase + 1, snapshot,
                                     finished=finished, extra=extra)
            if finished:
                break
        return True, ran

    # --- checkpoints -------------------------------------------------------

    def save_checkpoint(self, directory: Path, stage: str, next_phase: int,
                        report: TrainReport, finished: bool = False,
                        extra: dict[str, Any] | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_network(self.online, directory / "online.qnet")
        save_network(self.target, directory / "target.qnet")
        np.savez(directory / "adam.npz", m=self.optimizer.m, v=self.optimizer.v)
        write_log(directory / "train_log.csv", report.log_rows)
        state = {
            "stage": stage,
            "next_phase": next_phase,
            "stage_finished": finished,
            "train_steps": self.train_steps,
            "syncs": self.syncs,
            "adam_t": self.optimizer.t,
            "rng": self.rng.bit_generator.state,
            "config": self.config.to_dict(),
            "report": report.summary(),
            "extra": extra or {},
        }
        (directory / "progress.json").write_text(json.dumps(state, indent=1))

    @classmethod
    def load_checkpoint(cls, directory: Path):
        directory = Path(directory)
        state = json.loads((directory / "progress.json").read_text())
        config = AgentConfig.from_dict(state["config"])
        online = load_network(directory / "online.qnet")
        trainer = cls.__new__(cls)
        trainer.config = config
        trainer.rng = np.random.default_rng()
        trainer.rng.bit_generator.state = state["rng"]
        trainer.online = online
        trainer.target = load_network(directory / "target.qnet")
        trainer.optimizer = Adam(online.n_params, lr=config.lr, clip_norm=config.clip_norm)
        with np.load(directory / "adam.npz") as z:
            trainer.optimizer.m[:] = z["m"]
            trainer.optimizer.v[:] = z["v"]
        trainer.optimizer.t = state["adam_t"]
        trainer.train_steps = state["train_steps"]
        trainer.syncs = state["syncs"]
        trainer.buffer = None
        report = _report_from_summary(state["report"])
        report.log_rows = read_log(directory / "train_log.csv")
        return trainer, report, state


def _report_from_summary(d: dict[str, Any]) -> TrainReport:
    r = TrainReport()
    r.episodes = d["episodes"]
    r.phases = [PhaseResult(**p) for p in d["phases"]]
    r.best_coverage = d["best_coverage"]
    r.initial_coverage = d["initial_coverage"]
    r.achieved_target = d["achieved_target"]
    if d["best_positions"] is not None:
        r.best_positions = np.array(d["best_positions"], dtype=float)
    return r


def read_log(path: Path) -> list[list[Any]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for r in reader:
            rows.append([r[0], int(r[1]), float(r[2]), int(r[3]), int(r[4]), float(r[5]),
                         float(r[6]) if r[6] else "", float(r[7]), float(r[8])])
    return rows


def train_phase(env: PlacementEnv, config: AgentConfig, target: float,
                trainer: Trainer | None = None) -> tuple[Trainer, TrainReport]:
    """Single phase at a fixed coverage target (convenience wrapper)."""
    trainer = trainer or Trainer(config, env.n_actions, env.scenario.grid_k)
    report = TrainReport()
    report.initial_coverage = env.reset(target).coverage
    trainer.train_phase(env, target, report)
    return trainer, report


def greedy_rollout(net: QNetwork, env: PlacementEnv, steps: int,
                   stop_at: float | None = 1.0) -> tuple[float, np.ndarray, int]:
    """Follow the greedy policy from the env's start; returns (best coverage, placement, steps)."""
    scale = float(max(1, gu_count_map(env.scenario).max()))
    state = env.reset()
    best, best_pos = state.coverage, state.abs_positions.copy()
    for t in range(1, steps + 1):
        if stop_at is not None and best >= stop_at:
            return best, best_pos, t - 1
        action = int(np.argmax(net.forward(state.bitmap / scale)[0]))
        state = env.step(action).state
        if state.coverage > best:
            best, best_pos = state.coverage, state.abs_positions.copy()
    return best, best_pos, steps


@dataclass
class TwoLevelResult:
    preliminary: np.ndarray
    advanced: np.ndarray | None
    preliminary_disk: float
    preliminary_terrain: float
    advanced_terrain: float | None
    preliminary_report: TrainReport
    advanced_report: TrainReport | None

    def write_log(self, path: str | Path) -> None:
        rows = list(self.preliminary_report.log_rows)
        if self.advanced_report is not None:
            rows += self.advanced_report.log_rows
        write_log(path, rows)

    def summary(self) -> dict[str, Any]:
        return {
            "preliminary_positions": self.preliminary.tolist(),
            "advanced_positions": None if self.advanced is None else self.advanced.tolist(),
            "preliminary_disk_coverage": self.preliminary_disk,
            "preliminary_terrain_coverage": self.preliminary_terrain,
            "advanced_terrain_coverage": self.advanced_terrain,
            "preliminary": self.preliminary_report.summary(),
            "advanced": None if self.advanced_report is None
            else self.advanced_report.summary(),
        }


def run_two_level(scenario: Scenario, config: AgentConfig, advanced: bool = True,
                  checkpoint_dir: str | Path | None = None, resume: bool = False,
                  max_phases: int | None = None) -> TwoLevelResult | None:
    """Preliminary design on the disk model, then refinement on the terrain model.

    The preliminary stage starts from ``scenario.abss``; the advanced stage
    starts from the best preliminary placement and keeps the trained network.
    With ``checkpoint_dir`` a checkpoint is written after every phase and
    ``resume`` continues from it. ``max_phases`` stops after that many phases
    and returns None.
    """
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if scenario.n_abs < 1:
        raise ValueError("scenario needs initial ABS positions")

    stage, start_phase = "preliminary", 0
    prelim_report = TrainReport()
    adv_report = TrainReport()
    trainer: Trainer | None = None
    if resume:
        if ckpt is None:
            raise ValueError("resume requires checkpoint_dir")
        trainer, report, state = Trainer.load_checkpoint(ckpt)
        config = trainer.config
        stage, start_phase = state["stage"], state["next_phase"]
        finished = state["stage_finished"]
        if stage == "preliminary":
            prelim_report = report
            if finished:
                stage, start_phase = "advanced", 0
        else:
            n_pre = state["extra"]["preliminary_rows"]
            prelim_report = _report_from_summary(state["extra"]["preliminary"])
            prelim_report.log_rows = report.log_rows[:n_pre]
            adv_report = report
            adv_report.log_rows = report.log_rows[n_pre:]
            if finished:
                start_phase = -1

    def make_env(model, start):
        return PlacementEnv(scenario, model, target=config.target_start, alpha=config.alpha,
                            mode=config.action_mode, initial_positions=start)

    disk_env = make_env(ChannelModel.DISK, scenario.abss)
    if trainer is None:
        trainer = Trainer(config, disk_env.n_actions, scenario.grid_k)

    budget = max_phases
    if stage == "preliminary":
        done, ran = trainer.run_stage(disk_env, prelim_report, "preliminary", start_phase,
                                      ckpt, budget)
        if not done:
            return None
        if budget is not None:
            budget -= ran
        start_phase = 0

    prelim_pos = prelim_report.best_positions.copy()
    terrain_env = make_env(ChannelModel.TERRAIN, prelim_pos)
    prelim_disk = disk_env.evaluate(prelim_pos)[1]
    prelim_terrain = terrain_env.evaluate(prelim_pos)[1]
    if not advanced:
        return TwoLevelResult(prelim_pos, None, prelim_disk, prelim_terrain, None,
                              prelim_report, None)

    if start_phase >= 0:
        extra = {"preliminary": prelim_report.summary(),
                 "preliminary_rows": len(prelim_report.log_rows)}
        done, _ = trainer.run_stage(terrain_env, adv_report, "advanced", start_phase, ckpt,
                                    budget, prior_rows=prelim_report.log_rows, extra=extra)
        if not done:
            return None
    adv_pos = adv_report.best_positions.copy()
    adv_terrain = terrain_env.evaluate(adv_pos)[1]
    return TwoLevelResult(prelim_pos, adv_pos, prelim_disk, prelim_terrain, adv_terrain,
                          prelim_report, adv_report)
