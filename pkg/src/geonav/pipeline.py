"""Pipeline stages shared by the CLI and the reproduction scenarios.

Every stage writes into ``<out>/<run_id>/<stage>/``, drops a config snapshot
next to its outputs and indexes what it wrote in the run registry.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .baselines.metaheuristics import Method
from .baselines.navigator import MetaheuristicPolicy
from .core.config import RunConfig, Workbench, config_digest, write_snapshot
from .core.exceptions import ConfigError
from .core.models import EpisodeRecord, MetricsReport, NavTask
from .core.registry import Registry
from .core.seeding import derive_seed
from .eval.battery import ActorPolicy, NullPolicy, OraclePolicy, Policy, run_battery
from .eval.reports import write_box_stats, write_comparison, write_episode_records, write_metrics
from .learn.artifacts import ActorBundle, check_same_architecture, load_actor, save_actor
from .learn.distill import distill, save_dataset
from .learn.td3 import save_agent, teacher_bundle, train_teacher
from .sim.nav_env import calibrate_goal_radius, generate_tasks, task_at

logger = logging.getLogger(__name__)

OUT_ENV_VAR = "GEONAV_OUT"
TASK_COLUMNS = ["task_id", "origin_lon", "origin_lat", "dest_lon", "dest_lat", "zeta", "max_steps"]


def out_root(cfg: RunConfig) -> Path:
    """Output root: ``$GEONAV_OUT`` when set, else the config's ``out_dir``."""
    return Path(os.environ.get(OUT_ENV_VAR) or cfg.out_dir)


def run_dir(cfg: RunConfig) -> Path:
    return out_root(cfg) / cfg.run_id


@dataclass
class StageOutput:
    stage: str
    directory: Path
    files: Dict[str, Path] = field(default_factory=dict)
    report: Optional[MetricsReport] = None
    extra: dict = field(default_factory=dict)


def _finish(cfg: RunConfig, out: StageOutput) -> StageOutput:
    out.files["config"] = write_snapshot(cfg, out.directory / "config.toml")
    with Registry.for_run(run_dir(cfg)) as registry:
        registry.record_stage(cfg.run_id, out.stage, config_digest(cfg))
        for kind, path in sorted(out.files.items()):
            registry.register_artifact(cfg.run_id, out.stage, kind, path)
    return out


def teacher_stage_name(region: str, variant: Optional[str] = None, seed_index: int = 0) -> str:
    name = f"teacher_{region}"
    if variant:
        name += f"_{variant.upper()}"
    if seed_index:
        name += f"_s{seed_index}"
    return name


def train_stage(
    cfg: RunConfig,
    bench: Workbench,
    region: str,
    variant: Optional[str] = None,
    seed_index: int = 0,
    resume: bool = False,
    on_episode: Optional[Callable[[dict], None]] = None,
) -> StageOutput:
    """Train one teacher in ``region``; writes checkpoint, training log, reward curve."""
    box = cfg.region(region)
    stage = teacher_stage_name(region, variant, seed_index)
    directory = run_dir(cfg) / stage
    directory.mkdir(parents=True, exist_ok=True)
    td3_cfg = cfg.teacher_td3(region, seed_index)
    env = bench.env(region, variant)
    spec = cfg.env.task_spec()
    resume_path = directory / "resume.json"
    if resume and not resume_path.exists():
        raise ConfigError("resume", f"no resume checkpoint at {resume_path}")

    def task_for_episode(k: int) -> NavTask:
        return task_at(bench.provider, box, spec, td3_cfg.seed, "train", k)

    agent, log = train_teacher(
        env, td3_cfg, task_for_episode, name=region,
        checkpoint_path=resume_path if td3_cfg.checkpoint_interval else None,
        resume_path=resume_path if resume else None,
        on_episode=on_episode,
    )
    out = StageOutput(stage, directory)
    out.files["checkpoint"] = save_agent(directory / "teacher.json", agent, teacher_bundle(agent, env, region))
    out.files["checkpoint_data"] = directory / "teacher.bin"
    out.files["training_log"] = log.write_csv(directory / "training_log.csv")
    out.files["reward_curve"] = log.write_reward_curve(directory / "reward_curve.csv")
    out.extra.update(first_success_episode=log.first_success_episode, total_steps=log.total_steps,
                     episodes=len(log.rows))
    return _finish(cfg, out)


def distill_stage(
    cfg: RunConfig,
    bench: Workbench,
    teacher_paths: Sequence[Path],
    stage: str = "student",
    save_datasets: bool = True,
) -> StageOutput:
    """Distill a student from teacher checkpoints; each teacher collects in its own region."""
    if not teacher_paths:
        raise ConfigError("teachers", "at least one teacher checkpoint is required")
    bundles = [load_actor(p) for p in teacher_paths]
    check_same_architecture(bundles)
    regions = [b.name for b in bundles]
    envs = [bench.env(r) for r in regions]
    result, datasets = distill(bundles, envs, cfg.distill, cfg.env.task_spec(), regions)

    directory = run_dir(cfg) / stage
    out = StageOutput(stage, directory)
    student = ActorBundle(result.student, bench.normalizer, cfg.env.bounds, "student", "student")
    out.files["checkpoint"] = save_actor(
        directory / "student.json", student,
        extra={"teachers": regions, "distill": {"epochs": cfg.distill.epochs}},
    )
    out.files["checkpoint_data"] = directory / "student.bin"
    out.files["validation_log"] = result.write_log(directory / "validation_log.csv")
    if save_datasets:
        for ds in datasets:
            out.files[f"dataset_{ds.teacher_id}"] = save_dataset(ds, directory / "datasets" / f"{ds.teacher_id}.json")
    out.extra.update(final_val_mse=result.final_val_mse(), minibatches=result.minibatch_counts)
    return _finish(cfg, out)


def resolve_policy(cfg: RunConfig, spec: str) -> Tuple[Policy, str]:
    """Policy and report label for a checkpoint path, ``baseline:<method>``, ``oracle`` or ``null``."""
    if spec.startswith("baseline:"):
        method = spec.split(":", 1)[1].upper()
        if method not in {m.value for m in Method}:
            raise ConfigError("policy", f"unknown baseline method {method!r}")
        return MetaheuristicPolicy(cfg.baseline(method)), f"baseline_{method}"
    if spec == "oracle":
        return OraclePolicy(), "oracle"
    if spec == "null":
        return NullPolicy(), "null"
    path = Path(spec)
    if path.suffix != ".json" or not path.exists():
        raise ConfigError("policy", f"unknown policy spec {spec!r}")
    bundle = load_actor(path)
    label = "student" if bundle.role == "student" else f"teacher_{bundle.name}"
    return ActorPolicy(bundle, label), label


def battery_tasks(cfg: RunConfig, bench: Workbench, battery: str) -> List[NavTask]:
    """Tasks of a named battery; identical for every policy evaluated on it."""
    spec = cfg.battery(battery)
    task_spec = cfg.env.task_spec(spec.d_min_km, spec.d_max_km)
    return generate_tasks(
        bench.provider, cfg.region(spec.region), spec.n, task_spec.d_min_km, task_spec.d_max_km,
        seed=derive_seed(cfg.seed, "battery", spec.seed_stream or battery),
        zeta=task_spec.zeta, max_steps=task_spec.max_steps,
    )


def write_tasks(tasks: Sequence[NavTask], path: Path) -> Path:
    rows = [{
        "task_id": t.task_id, "origin_lon": t.origin.lon_deg, "origin_lat": t.origin.lat_deg,
        "dest_lon": t.destination.lon_deg, "dest_lat": t.destination.lat_deg,
        "zeta": t.zeta, "max_steps": t.max_steps,
    } for t in tasks]
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=TASK_COLUMNS).to_csv(path, index=False, float_format="%.10g")
    return path


def tasks_stage(cfg: RunConfig, bench: Workbench, battery: str, calibrate: bool = True) -> StageOutput:
    """Write a battery's task list and, optionally, its goal-radius calibration."""
    tasks = battery_tasks(cfg, bench, battery)
    directory = run_dir(cfg) / "tasks"
    out = StageOutput("tasks", directory)
    out.files[f"tasks_{battery}"] = write_tasks(tasks, directory / f"{battery}.csv")
    if calibrate:
        radius = calibrate_goal_radius(bench.provider, cfg.region(cfg.battery(battery).region), tasks)
        path = directory / f"{battery}_calibration.json"
        path.write_text(json.dumps({"battery": battery, "zeta": cfg.env.zeta, "goal_radius_km": radius},
                                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
        out.files[f"calibration_{battery}"] = path
        out.extra["goal_radius_km"] = radius
    out.extra["n_tasks"] = len(tasks)
    return _finish(cfg, out)


def eval_stage(
    cfg: RunConfig,
    bench: Workbench,
    policy_spec: str,
    battery: str,
    trajectories: bool = True,
    on_episode: Optional[Callable[[EpisodeRecord], None]] = None,
    workers: Optional[int] = None,
) -> StageOutput:
    """Run one battery through one policy and write its reports.

    ``workers`` overrides the config's task parallelism; the reports do not depend on it.
    """
    policy, label = resolve_policy(cfg, policy_spec)
    spec = cfg.battery(battery)
    tasks = battery_tasks(cfg, bench, battery)
    stage = f"eval_{label}_{battery}"
    directory = run_dir(cfg) / "eval" / f"{label}__{battery}"
    records, report = run_battery(
        policy, tasks, lambda: bench.env(spec.region),
        trajectory_dir=directory / "trajectories" if trajectories else None,
        on_episode=on_episode,
        workers=cfg.workers if workers is None else workers,
    )
    out = StageOutput(stage, directory, report=report)
    out.files["episodes"] = write_episode_records(records, directory / "episodes.csv")
    out.files["metrics"] = write_metrics(report, label, spec.region, battery, directory / "metrics.csv")
    out.files["box_stats"] = write_box_stats(records, directory / "box_stats.csv")
    with Registry.for_run(run_dir(cfg)) as registry:
        registry.record_metrics(cfg.run_id, label, spec.region, battery, report)
        rows = registry.comparison(cfg.run_id, battery)
    out.files[f"comparison_{battery}"] = write_comparison(rows, run_dir(cfg) / "eval" / f"comparison_{battery}.csv")
    out.extra["records"] = records
    out.extra["label"] = label
    return _finish(cfg, out)
