"""Command-line entry point: generate, train, evaluate and render."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .agent import AgentConfig, run_two_level
from .baselines import dqn_variant, kmeans_place
from .qnet import DivergenceError
from .terrain import (
    ChannelModel,
    RadioParams,
    Scenario,
    best_gains,
    bitmap_from_indicators,
    coverage_indicators,
    coverage_range,
    coverage_rate,
    generate_scenario,
    linear_to_db,
)

log = logging.getLogger("absplace")

LOG_ENV = "ABSPLACE_LOG_LEVEL"
ALGOS = ("pddqn", "dqn", "kmeans")

DEFAULT_GENERATE = {"n_gus": 80, "n_abs": 10, "region_side": 3000.0, "n_buildings": 30,
                  "footprint": 150.0, "height_min": 30.0, "height_max": 70.0,
                  "grid_k": 20, "delta": 10.0, "altitude": 90.0, "gain_threshold_db": -93.0}


@dataclass
class RunConfig:
    """Everything that determines a training run.

    ``model='terrain'`` runs the disk preliminary stage followed by the
    terrain stage; ``model='disk'`` stops after the preliminary stage.
    ``agent`` holds AgentConfig overrides, ``radio`` holds overrides keyed
    like the scenario file's radio block (``H_m``, ``gamma_db`` ...).
    """

    scenario: str
    out: str
    model: str = "terrain"
    algo: str = "pddqn"
    seed: int = 0
    agent: dict[str, Any] = field(default_factory=dict)
    radio: dict[str, Any] = field(default_factory=dict)
    resume: bool = False
    max_phases: int | None = None

    def __post_init__(self):
        ChannelModel(self.model)
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if not Path(self.scenario).is_file():
            raise FileNotFoundError(f"scenario file not found: {self.scenario}")

    def load_scenario(self) -> Scenario:
        scen = Scenario.load(self.scenario)
        if self.radio:
            merged = scen.radio.to_dict()
            unknown = set(self.radio) - set(merged)
            if unknown:
                raise ValueError(f"unknown radio keys: {sorted(unknown)}")
            merged.update(self.radio)
            scen = dataclasses.replace(scen, radio=RadioParams.from_dict(merged))
        return scen

    def agent_config(self, scenario: Scenario) -> AgentConfig:
        d = dict(self.agent)
        d["seed"] = self.seed
        if "architecture" not in d and scenario.network is not None:
            d["architecture"] = scenario.network
        cfg = AgentConfig.from_dict(d)
        return dqn_variant(cfg) if self.algo == "dqn" else cfg


# --- commands ------------------------------------------------------------------

def cmd_generate(seed: int, out: str | Path, **params) -> Scenario:
    p = {**DEFAULT_GENERATE, **{k: v for k, v in params.items() if v is not None}}
    if p["n_gus"] < 1:
        raise ValueError("n_gus must be >= 1")
    radio = RadioParams.with_gain_threshold_db(p["gain_threshold_db"], altitude=p["altitude"])
    scen = generate_scenario(seed, n_gus=p["n_gus"], n_abs=p["n_abs"],
                             region_side=p["region_side"], n_buildings=p["n_buildings"],
                             footprint=p["footprint"],
                             height_range=(p["height_min"], p["height_max"]),
                             radio=radio, grid_k=p["grid_k"], delta=p["delta"])
    scen.save(out)
    return scen


def _coverage(scen: Scenario, model) -> float:
    covered = coverage_indicators(scen, model)
    return coverage_rate(bitmap_from_indicators(scen, covered), scen.n_gus)


def cmd_train(cfg: RunConfig) -> dict[str, Any]:
    """Run one training job; writes placements, report and logs under ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    scen = cfg.load_scenario()
    run = dataclasses.asdict(cfg)

    if cfg.algo == "kmeans":
        km = kmeans_place(scen.gus, scen.n_abs, seed=cfg.seed)
        placed = scen.with_placement(km.centroids)
        placed.save(out / "kmeans.json")
        report = {"run": run, "algo": "kmeans", "iterations": km.iterations,
                  "inertia": km.inertia, "positions": km.centroids.tolist(),
                  "disk_coverage": _coverage(placed, "disk"),
                  "terrain_coverage": _coverage(placed, "terrain")}
        _write_json(out / "report.json", report)
        return report

    agent = cfg.agent_config(scen)
    advanced = ChannelModel(cfg.model) is ChannelModel.TERRAIN
    result = run_two_level(scen, agent, advanced=advanced, checkpoint_dir=out / "checkpoints",
                           resume=cfg.resume, max_phases=cfg.max_phases)
    if result is None:
        report = {"run": run, "stopped": True}
        _write_json(out / "report.json", report)
        return report
    scen.with_placement(result.preliminary).save(out / "preliminary.json")
    if result.advanced is not None:
        scen.with_placement(result.advanced).save(out / "advanced.json")
    result.write_log(out / "train_log.csv")
    report = {"run": run, "algo": cfg.algo, "agent": agent.to_dict(), **result.summary()}
    _write_json(out / "report.json", report)
    return report


def load_placement(path: str | Path) -> np.ndarray:
    """ABS positions from a scenario file, ``{"abss": [...]}`` or a bare list."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["abss"]
    return np.asarray(data, dtype=float).reshape(-1, 2)


def cmd_evaluate(scenario: Scenario, model, placement=None) -> dict[str, Any]:
    scen = scenario if placement is None else scenario.with_placement(placement)
    covered = coverage_indicators(scen, model)
    phi = coverage_rate(bitmap_from_indicators(scen, covered), scen.n_gus)
    gains = best_gains(scen, model)
    return {"coverage": phi, "covered": covered, "best_gain": gains}


def write_metrics(fh, scen: Scenario, metrics: dict[str, Any]) -> None:
    """Per-GU rows: index, position, covered flag, best gain in dB."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["gu", "x", "y", "covered", "best_gain_db"])
    for n, ((x, y), c, g) in enumerate(zip(scen.gus, metrics["covered"], metrics["best_gain"])):
        w.writerow([n, repr(float(x)), repr(float(y)), int(c),
                    repr(linear_to_db(g)) if g > 0 else "-inf"])


def render_svg(scenario: Scenario, model, placement=None, size: int = 600) -> str:
    """Top-down SVG of buildings, GUs coloured by coverage and ABS positions."""
    model = ChannelModel(model)
    scen = scenario if placement is None else scenario.with_placement(placement)
    L = scen.region_side
    s = size / L

    def px(v):
        return f"{v * s:.2f}"

    def py(v):
        return f"{(L - v) * s:.2f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect class="region" x="0" y="0" width="{size}" height="{size}" '
        'fill="#ffffff" stroke="#000000"/>',
    ]
    heights = [b.height for b in scen.terrain.buildings]
    lo, hi = (min(heights), max(heights)) if heights else (0.0, 0.0)
    for b in scen.terrain.buildings:
        frac = 0.5 if hi == lo else (b.height - lo) / (hi - lo)
        grey = int(round(200 - 140 * frac))
        lines.append(
            f'<rect class="building" x="{px(b.cx - b.hx)}" y="{py(b.cy + b.hy)}" '
            f'width="{2 * b.hx * s:.2f}" height="{2 * b.hy * s:.2f}" '
            f'fill="rgb({grey},{grey},{grey})"><title>{b.height:.1f} m</title></rect>')
    if model is ChannelModel.DISK and scen.n_abs:
        r = coverage_range(scen.radio) * s
        for x, y in scen.abss:
            lines.append(f'<circle class="range" cx="{px(x)}" cy="{py(y)}" r="{r:.2f}" '
                         'fill="none" stroke="#3060c0" stroke-dasharray="4 3"/>')
    covered = coverage_indicators(scen, model)
    for (x, y), c in zip(scen.gus, covered):
        cls, colour = ("gu-covered", "#2a9d3a") if c else ("gu-uncovered", "#d62828")
        lines.append(f'<circle class="{cls}" cx="{px(x)}" cy="{py(y)}" r="3" fill="{colour}"/>')
    for x, y in scen.abss:
        lines.append(f'<rect class="abs" x="{x * s - 4:.2f}" y="{(L - y) * s - 4:.2f}" '
                     'width="8" height="8" fill="#1d3557"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --- argument parsing ----------------------------------------------------------

def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_overrides(items: list[str]) -> tuple[dict[str, Any], dict[str, Any]]:
    agent: dict[str, Any] = {}
    radio: dict[str, Any] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override must look like key=value, got {item!r}")
        if key.startswith("radio."):
            radio[key[len("radio."):]] = _parse_value(value)
        else:
            agent[key] = _parse_value(value)
    return agent, radio


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absplace",
                                description="Aerial base station placement with deep RL.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random scenario file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--paper-defaults", action="store_true",
                   help="M=10, N=80, H=90 m, L=3000 m, K=20, delta=10 m, 30 buildings")
    g.add_argument("--n-gus", type=int)
    g.add_argument("--n-abs", type=int)
    g.add_argument("--region", dest="region_side", type=float)
    g.add_argument("--buildings", dest="n_buildings", type=int)
    g.add_argument("--footprint", type=float)
    g.add_argument("--height-min", type=float)
    g.add_argument("--height-max", type=float)
    g.add_argument("--grid-k", type=int)
    g.add_argument("--delta", type=float)
    g.add_argument("--altitude", type=float)
    g.add_argument("--gain-threshold-db", type=float)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a placement policy or run K-means")
    t.add_argument("--scenario", required=True)
    t.add_argument("--model", choices=[m.value for m in ChannelModel], default="terrain",
                   help="terrain: two-level design; disk: preliminary stage only")
    t.add_argument("--algo", choices=ALGOS, default="pddqn")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config", help="JSON file with 'agent' and 'radio' override blocks")
    t.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="agent override (e.g. lr=1e-3) or radio.<key>=value; repeatable")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--max-phases", type=int)
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="coverage metrics of a placement")
    e.add_argument("--scenario", required=True)
    e.add_argument("--placement", help="placement JSON (defaults to the scenario's ABSs)")
    e.add_argument("--model", choices=[m.value for m in ChannelModel], default="terrain")
    e.add_argument("--out", help="per-GU CSV (stdout when omitted)")

    r = sub.add_parser("render", help="SVG coverage map of a placement")
    r.add_argument("--scenario", required=True)
    r.add_argument("--placement")
    r.add_argument("--model", choices=[m.value for m in ChannelModel], default="terrain")
    r.add_argument("--out", required=True)
    return p


def _run_config(args) -> RunConfig:
    agent: dict[str, Any] = {}
    radio: dict[str, Any] = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        agent.update(data.get("agent", {}))
        radio.update(data.get("radio", {}))
    a, r = _parse_overrides(args.overrides)
    agent.update(a)
    radio.update(r)
    return RunConfig(scenario=args.scenario, out=args.out, model=args.model, algo=args.algo,
                     seed=args.seed, agent=agent, radio=radio, resume=args.resume,
                     max_phases=args.max_phases)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "generate":
        params = {k: getattr(args, k) for k in DEFAULT_GENERATE}
        given = [k for k, v in params.items() if v is not None]
        if args.paper_defaults and given:
            parser.error("--paper-defaults cannot be combined with "
                         + ", ".join("--" + k.replace("_", "-") for k in given))
        if params["n_gus"] is not None and params["n_gus"] < 1:
            parser.error("--n-gus must be at least 1")
        if params["n_abs"] is not None and params["n_abs"] < 1:
            parser.error("--n-abs must be at least 1")
        try:
            cmd_generate(args.seed, args.out, **params)
        except (ValueError, RuntimeError) as exc:
            print(f"absplace generate: {exc}", file=sys.stderr)
            return 1
        return 0

    try:
        if args.command == "train":
            cfg = _run_config(args)
            report = cmd_train(cfg)
            if report.get("stopped"):
                print(f"stopped after {cfg.max_phases} phase(s); continue with --resume")
            elif cfg.algo == "kmeans":
                print(f"disk coverage {report['disk_coverage']:.4f}  "
                      f"terrain coverage {report['terrain_coverage']:.4f}")
            else:
                print(f"preliminary: disk {report['preliminary_disk_coverage']:.4f}  "
                      f"terrain {report['preliminary_terrain_coverage']:.4f}")
                if report["advanced_terrain_coverage"] is not None:
                    print(f"advanced: terrain {report['advanced_terrain_coverage']:.4f}")
            return 0

        scen = Scenario.load(args.scenario)
        placement = load_placement(args.placement) if args.placement else None
        if args.command == "evaluate":
            metrics = cmd_evaluate(scen, args.model, placement)
            target = scen if placement is None else scen.with_placement(placement)
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    write_metrics(fh, target, metrics)
            else:
                write_metrics(sys.stdout, target, metrics)
            msg = f"coverage {metrics['coverage']!r} ({int(metrics['covered'].sum())}" \
                  f"/{scen.n_gus} GUs, {args.model} model)"
            print(msg, file=sys.stderr if args.out is None else sys.stdout)
            return 0
        if args.command == "render":
            Path(args.out).write_text(render_svg(scen, args.model, placement))
            return 0
    except DivergenceError as exc:
        print(f"absplace: training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"absplace {args.command}: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
