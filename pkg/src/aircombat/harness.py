"""Experiment orchestration, configuration files, CSV and trajectory output."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import nn
from .curriculum import CurriculumKind, TransferGate, stage
from .engagement import BLUE, RED, Engagement, EngagementConfig, Outcome, Reason
from .flightdyn import AircraftState, PhysicsConstants
from .missile import MissileConfig
from .policy import ActorCritic, scripted
from .ppo import Tally, TrainConfig, evaluate_outcomes, play, train

log = logging.getLogger(__name__)

RAW_COLUMNS = ("method", "seed", "iteration", "stage", "wins", "losses", "draws")
AGGREGATE_COLUMNS = (
    "method",
    "iteration",
    "seeds",
    "win_mean",
    "win_std",
    "loss_mean",
    "loss_std",
    "draw_mean",
    "draw_std",
)
TRAJECTORY_FIELDS = ("t", "id", "kind", "x", "y", "z", "v", "gamma", "psi", "phase", "status")

DEFAULT_CONFIG = """\
# Experiment configuration. Every key is optional; omitted keys take the
# values shown here. Command-line flags override this file.

# Curricula to run: angle, distance, hybrid, none
curricula: [angle, distance, hybrid, none]
# One independent training run per seed and curriculum
seeds: [0, 1, 2, 3, 4]
# Output directory for CSV files, checkpoints and the resolved config
out: runs/experiment
# Parallel training jobs (1 = single-worker deterministic mode)
workers: 1

train:
  batch_size: 1024            # transitions per side per cycle; also the minibatch size
  epochs: 8                   # passes over each cycle's data
  clip_ratio: 0.2
  iterations: 40
  cycles_per_iteration: 20    # collect -> update cycles per iteration
  entropy_coefficient: 0.01
  normalize_advantages: true
  actor_lr: 0.002
  critic_lr: 0.001
  max_grad_norm: 0.5
  envs_per_round: 1           # engagements simulated in lockstep while collecting
  gate_eval_episodes: 50      # curriculum transfer test size
  gate_decisive_threshold: 0.6  # required fraction of non-draw test outcomes
  check_invariants: true      # assert sparse-reward and return identities on every buffer

engagement:
  max_sim_time: 200.0         # s
  altitude_range: [3000.0, 10000.0]   # m
  speed_range: [250.0, 400.0]         # m/s
  radar_azimuth_limit: 1.0471975511965976   # rad (pi/3)
  radar_range: 80000.0        # m

missile:
  hit_radius: 12.0            # m
  max_flight_time: 120.0      # s
  midcourse_azimuth_limit: 1.0471975511965976  # rad (pi/3), relative to shooter nose
  terminal_azimuth_limit: 1.5707963267948966   # rad (pi/2), relative to missile axis
  seeker_activation_range: 20000.0  # m
  nav_constant: 4.0
  boost_duration: 6.0         # s
  boost_accel: 200.0          # m/s^2
  drag_coefficient: 2.5e-5    # 1/m
  max_lateral_accel: 300.0    # m/s^2

physics:
  g: 9.81
  dt_physics: 0.02            # s, RK4 step
  dt_decision: 0.2            # s, controls held constant
"""


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kinds: list[CurriculumKind] = field(default_factory=lambda: list(CurriculumKind))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: TrainConfig = field(default_factory=TrainConfig)
    engagement: EngagementConfig = field(default_factory=EngagementConfig)
    missile: MissileConfig = field(default_factory=MissileConfig)
    physics: PhysicsConstants = field(default_factory=PhysicsConstants)
    out: Path = Path("runs/experiment")
    workers: int = 1

    def __post_init__(self):
        if not self.kinds:
            raise ConfigError("at least one curriculum is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct: {self.seeds}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _build(cls, values: dict, section: str, exclude=()):
    known = {f.name for f in fields(cls)} - set(exclude)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    """Overlay ``data`` on the documented defaults."""
    base = yaml.safe_load(DEFAULT_CONFIG)
    data = data or {}
    unknown = set(data) - set(base)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    merged = {k: ({**base[k], **(data.get(k) or {})} if isinstance(base[k], dict) else data.get(k, base[k])) for k in base}
    t = dict(merged["train"])
    gate = TransferGate(t.pop("gate_eval_episodes"), t.pop("gate_decisive_threshold"))
    try:
        kinds = [CurriculumKind.parse(k) for k in merged["curricula"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    train_cfg = _build(TrainConfig, t, "train")
    train_cfg = replace(train_cfg, gate=gate)
    return ExperimentConfig(
        kinds=kinds,
        seeds=[int(s) for s in merged["seeds"]],
        train=train_cfg,
        engagement=_build(EngagementConfig, merged["engagement"], "engagement", exclude=("azimuth_range", "distance_range")),
        missile=_build(MissileConfig, merged["missile"], "missile"),
        physics=_build(PhysicsConstants, merged["physics"], "physics"),
        out=Path(merged["out"]),
        workers=int(merged["workers"]),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    try:
        return config_from_dict(data or {})
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_to_dict(cfg: ExperimentConfig) -> dict:
    t = asdict(cfg.train)
    gate = t.pop("gate")
    t["gate_eval_episodes"] = gate["eval_episodes"]
    t["gate_decisive_threshold"] = gate["decisive_threshold"]
    eng = asdict(cfg.engagement)
    eng.pop("azimuth_range")
    eng.pop("distance_range")
    listify = lambda d: {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}  # noqa: E731
    return {
        "curricula": [k.value for k in cfg.kinds],
        "seeds": list(cfg.seeds),
        "out": str(cfg.out),
        "workers": cfg.workers,
        "train": t,
        "engagement": listify(eng),
        "missile": asdict(cfg.missile),
        "physics": asdict(cfg.physics),
    }


@dataclass(frozen=True)
class IterationRecord:
    method: str
    seed: int
    iteration: int
    stage: int
    wins: int
    losses: int
    draws: int

    @property
    def episodes(self) -> int:
        return self.wins + self.losses + self.draws


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in records:
            w.writerow([getattr(r, c) for c in RAW_COLUMNS])


def read_records(path) -> list[IterationRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RAW_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}, expected {','.join(RAW_COLUMNS)}")
        return [IterationRecord(row["method"], *(int(row[c]) for c in RAW_COLUMNS[1:])) for row in reader]


def aggregate(records) -> list[dict]:
    """Per (method, iteration): mean and population std of wins/losses/draws across seeds."""
    groups: dict[tuple[str, int], list[IterationRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.iteration), []).append(r)
    rows = []
    for (method, it), rs in sorted(groups.items()):
        row = {"method": method, "iteration": it, "seeds": len(rs)}
        for name, attr in (("win", "wins"), ("loss", "losses"), ("draw", "draws")):
            vals = np.array([getattr(r, attr) for r in rs], dtype=float)
            row[f"{name}_mean"] = float(vals.mean())
            row[f"{name}_std"] = float(vals.std())
        rows.append(row)
    return rows


def write_aggregate(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, AGGREGATE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_aggregate(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != AGGREGATE_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            conv = {k: float(v) for k, v in row.items() if k.endswith(("_mean", "_std"))}
            out.append({"method": row["method"], "iteration": int(row["iteration"]), "seeds": int(row["seeds"]), **conv})
        return out


def _run_job(kind: CurriculumKind, seed: int, cfg: ExperimentConfig):
    ckpt = cfg.out / kind.abbrev / f"seed{seed}"
    stats, _ = train(kind, cfg.train, seed, cfg.engagement, cfg.missile, cfg.physics, checkpoint_dir=ckpt)
    return [IterationRecord(kind.abbrev, seed, s.iteration, s.stage, s.wins, s.losses, s.draws) for s in stats]


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train every (curriculum, seed) pair and write raw and aggregate CSVs.

    A failing seed is logged and listed under ``failures``; the rest continue.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
    jobs = [(kind, seed) for kind in cfg.kinds for seed in cfg.seeds]
    results: dict[tuple[str, int], list[IterationRecord]] = {}
    failures = []
    if cfg.workers == 1:
        for kind, seed in jobs:
            try:
                results[(kind.abbrev, seed)] = _run_job(kind, seed, cfg)
            except Exception as exc:  # a failed seed must not abort the sweep
                log.exception("%s seed %d failed", kind.abbrev, seed)
                failures.append({"method": kind.abbrev, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {(k, s): pool.submit(_run_job, k, s, cfg) for k, s in jobs}
            for (kind, seed), fut in futures.items():
                try:
                    results[(kind.abbrev, seed)] = fut.result()
                except Exception as exc:
                    log.error("%s seed %d failed: %s", kind.abbrev, seed, exc)
                    failures.append({"method": kind.abbrev, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})

    all_records = []
    raw_files = {}
    for kind in cfg.kinds:
        recs = [r for seed in cfg.seeds for r in results.get((kind.abbrev, seed), [])]
        path = out / f"raw_{kind.abbrev}.csv"
        write_records(path, recs)
        raw_files[kind.abbrev] = path
        all_records += recs
    agg_path = out / "aggregate.csv"
    write_aggregate(agg_path, aggregate(all_records))
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2))
    return {"raw": raw_files, "aggregate": agg_path, "records": all_records, "failures": failures}


def head_on_geometry(azimuth: float, distance: float, engagement: EngagementConfig) -> tuple[AircraftState, AircraftState]:
    """Agent (red) at the origin with the target at ``azimuth`` off its nose.

    The target starts ``distance`` metres away along +x and points at the agent.
    Both fly level at mid-range altitude and speed.
    """
    alt = float(np.mean(engagement.altitude_range))
    speed = float(np.mean(engagement.speed_range))
    red = AircraftState(0.0, 0.0, alt, speed, 0.0, float(-azimuth))
    blue = AircraftState(float(distance), 0.0, alt, speed, 0.0, math.pi)
    return red, blue


def write_trajectory(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in TRAJECTORY_FIELDS}) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class SimulationResult:
    outcome: Outcome
    reason: Reason
    duration: float
    trajectory: Path | None
    records: list[dict]


def simulate(
    params: nn.PolicyParameters,
    azimuth: float,
    distance: float,
    opponent: str = "straight-line",
    trajectory_path=None,
    seed: int = 0,
    engagement: EngagementConfig = EngagementConfig(),
    missile: MissileConfig = MissileConfig(),
    physics: PhysicsConstants = PhysicsConstants(),
) -> SimulationResult:
    """One deterministic engagement of the agent (red) against a scripted target."""
    if not -math.pi <= azimuth <= math.pi:
        raise ValueError(f"azimuth {azimuth} outside [-pi, pi]")
    if not 50_000.0 <= distance <= 150_000.0:
        raise ValueError(f"distance {distance} outside [50000, 150000] m")
    red, blue = head_on_geometry(azimuth, distance, engagement)
    eng = Engagement(red, blue, engagement, missile, physics)
    agent = ActorCritic(params).policy(deterministic=True)
    target = scripted(opponent, np.random.default_rng(seed))
    records = eng.records(0)
    while not eng.done[0]:
        obs_r, obs_b = eng.observations()
        eng.advance(agent(obs_r, eng.can_fire(RED)), target(obs_b, eng.can_fire(BLUE)))
        records += eng.records(0)
    if trajectory_path is not None:
        write_trajectory(trajectory_path, records)
    return SimulationResult(
        Outcome(int(eng.outcome[0])),
        Reason(int(eng.reason[0])),
        float(eng.time[0]),
        Path(trajectory_path) if trajectory_path is not None else None,
        records,
    )


def evaluate(
    params: nn.PolicyParameters,
    kind: CurriculumKind,
    stage_index: int,
    episodes: int,
    seed: int,
    opponent: str = "self",
    engagement: EngagementConfig = EngagementConfig(),
    missile: MissileConfig = MissileConfig(),
    physics: PhysicsConstants = PhysicsConstants(),
) -> Tally:
    """Deterministic evaluation at one curriculum stage; tallies from the agent's side."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    cfg = engagement.with_stage(stage(kind, stage_index))
    rng = np.random.default_rng(seed)
    if opponent == "self":
        outcomes = evaluate_outcomes(params, cfg, episodes, rng, missile_config=missile, consts=physics)
    else:
        target = scripted(opponent, np.random.default_rng([seed, 1]))
        eng = Engagement.sample(cfg, rng, episodes, missile_config=missile, consts=physics)
        play(eng, ActorCritic(params).policy(deterministic=True), target)
        outcomes = eng.outcome
    tally = Tally()
    for o in outcomes:
        tally.add(o)
    return tally
