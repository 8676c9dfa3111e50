"""Reproduction scenarios: scripted desk-scale experiments with declarative checks.

A scenario file is TOML::

    name = "reward_ablation"
    kind = "reward_ablation"          # which pipeline produces the observations
    config = "../configs/desk.toml"   # run config, relative to the scenario file
    runtime_budget_s = 2700
    seeds = [0, 1, 2, 3, 4]

    [params]                          # kind-specific knobs
    region = "A"

    [overrides.td3]                   # merged into the run config before loading
    total_env_steps = 50000

    [[assertions]]
    field = "first_success.ST.median"
    op = "<="
    ref = "first_success.SR.median"   # compare against another observation ...
    scale = 0.5                       # ... as ref * scale + offset
    # or: value = 950

Every assertion must name an observation the pipeline emitted; a missing
one counts as a violation.
"""

import copy
import logging
import math
import operator
import statistics
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import pandas as pd

from ..core.config import RunConfig, Workbench, config_from_dict
from ..core.exceptions import ConfigError, ScenarioFailure
from ..core.seeding import substream
from .. import pipeline
from . import oracles

logger = logging.getLogger(__name__)

OPERATORS: Dict[str, Callable[[float, float], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}
SUMMARY_COLUMNS = ["scenario", "passed", "n_assertions", "n_violations", "runtime_s", "runtime_budget_s"]
DETERMINISM_SUFFIXES = (".csv", ".toml", ".json")
EXCLUDED_COLUMNS = ("wall_ms",)
# Snapshots name the output directory; resume checkpoints carry wall times.
UNCOMPARED_FILES = ("config.toml", "resume.json")


@dataclass(frozen=True)
class Assertion:
    """``observed[field] <op> value`` or ``observed[field] <op> observed[ref] * scale + offset``."""

    field: str
    op: str
    value: Optional[float] = None
    ref: Optional[str] = None
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ConfigError("assertions.op", f"unknown operator {self.op!r}")
        if (self.value is None) == (self.ref is None):
            raise ConfigError("assertions", f"{self.field}: give exactly one of value or ref")

    def describe(self) -> str:
        if self.ref is None:
            return f"{self.field} {self.op} {self.value:g}"
        rhs = self.ref
        if self.scale != 1.0:
            rhs = f"{self.scale:g} * {rhs}"
        if self.offset:
            rhs = f"{rhs} {'+' if self.offset > 0 else '-'} {abs(self.offset):g}"
        return f"{self.field} {self.op} {rhs}"

    def check(self, observed: Dict[str, float]) -> Optional[str]:
        """None when the assertion holds, else a one-line violation message."""
        if self.field not in observed:
            return f"{self.describe()}: field {self.field!r} was not emitted"
        left = observed[self.field]
        if self.ref is None:
            right = float(self.value)
        else:
            if self.ref not in observed:
                return f"{self.describe()}: field {self.ref!r} was not emitted"
            right = observed[self.ref] * self.scale + self.offset
        if isinstance(left, float) and math.isnan(left) or isinstance(right, float) and math.isnan(right):
            return f"{self.describe()}: observed {left:g} vs {right:g} (NaN)"
        if OPERATORS[self.op](left, right):
            return None
        return f"{self.describe()}: observed {left:g} vs {right:g}"


@dataclass
class ReproScenario:
    name: str
    kind: str
    config: Optional[Path] = None
    params: Dict[str, Any] = field(default_factory=dict)
    overrides: Dict[str, Any] = field(default_factory=dict)
    assertions: List[Assertion] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [0])
    runtime_budget_s: Optional[float] = None
    description: str = ""

    def run_config(self, out_dir: Path, seed: Optional[int] = None, run_id: Optional[str] = None) -> RunConfig:
        """Run config of the scenario: the referenced file with overrides merged in.

        ``seed`` replaces the root seed before loading, so every derived
        stream (teachers, distillation, baselines, batteries) follows it.
        """
        data: Dict[str, Any] = {}
        source = None
        if self.config is not None:
            if not self.config.exists():
                raise ConfigError("config", f"file not found: {self.config}")
            with open(self.config, "rb") as fh:
                data = tomllib.load(fh)
            source = str(self.config)
        data = _merge(data, self.overrides)
        if seed is not None:
            data["seed"] = seed
        data["run_id"] = run_id or f"scenario_{self.name}"
        data["out_dir"] = str(out_dir)
        return config_from_dict(data, source)


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def scenario_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> ReproScenario:
    known = {"name", "kind", "config", "params", "overrides", "assertions", "seeds", "runtime_budget_s", "description"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")
    for key in ("name", "kind"):
        if key not in data:
            raise ConfigError(key, "missing")
    if data["kind"] not in KINDS:
        raise ConfigError("kind", f"unknown scenario kind {data['kind']!r} (known: {', '.join(sorted(KINDS))})")
    config = data.get("config")
    if config is not None:
        config = Path(config)
        if not config.is_absolute() and base_dir is not None:
            config = base_dir / config
    assertions = []
    for i, item in enumerate(data.get("assertions", [])):
        try:
            assertions.append(Assertion(**item))
        except TypeError as e:
            raise ConfigError(f"assertions[{i}]", str(e))
    seeds = [int(s) for s in data.get("seeds", [0])]
    if not seeds:
        raise ConfigError("seeds", "at least one seed is required")
    return ReproScenario(
        name=str(data["name"]),
        kind=str(data["kind"]),
        config=config,
        params=dict(data.get("params", {})),
        overrides=dict(data.get("overrides", {})),
        assertions=assertions,
        seeds=seeds,
        runtime_budget_s=data.get("runtime_budget_s"),
        description=str(data.get("description", "")),
    )


def load_scenario(path: Union[str, Path]) -> ReproScenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError("scenario", f"file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("scenario", f"{path}: {e}")
    return scenario_from_dict(data, path.parent)


@dataclass
class ScenarioContext:
    scenario: ReproScenario
    out_dir: Path
    on_progress: Optional[Callable[[str], None]] = None

    @property
    def params(self) -> Dict[str, Any]:
        return self.scenario.params

    def config(self, seed: Optional[int] = None) -> RunConfig:
        run_id = f"scenario_{self.scenario.name}" + ("" if seed is None else f"_seed{seed}")
        return self.scenario.run_config(self.out_dir, seed, run_id)

    def note(self, message: str) -> None:
        logger.info("%s: %s", self.scenario.name, message)
        if self.on_progress is not None:
            self.on_progress(message)


def _median_fields(prefix: str, values: Sequence[float], observed: Dict[str, float]) -> None:
    finite = [v for v in values if not math.isnan(v)]
    observed[f"{prefix}.median"] = statistics.median(finite) if finite else math.nan
    observed[f"{prefix}.min"] = min(finite) if finite else math.nan
    observed[f"{prefix}.max"] = max(finite) if finite else math.nan


def _first_success(out: pipeline.StageOutput, cap: float) -> float:
    """First-success episode, or ``cap`` when the run never succeeded."""
    episode = out.extra["first_success_episode"]
    return float(cap if episode is None else episode)


def _element_identities(ctx: ScenarioContext) -> Dict[str, float]:
    cfg = ctx.config()
    return oracles.element_identities(int(ctx.params.get("n_vectors", 100_000)), substream(cfg.seed, "bench", "elements"))


def _gradient_check(ctx: ScenarioContext) -> Dict[str, float]:
    cfg = ctx.config()
    hidden = list(cfg.td3.hidden)
    architectures = [
        ([6, *hidden, 2], "tanh"),
        ([8, *hidden, 1], "identity"),
        ([3, 5, 4, 2], "tanh"),
    ]
    return oracles.gradient_check(architectures, int(ctx.params.get("n_params", 100)),
                                  substream(cfg.seed, "bench", "gradients"))


def _heading_oracle(ctx: ScenarioContext) -> Dict[str, float]:
    cfg = ctx.config()
    return oracles.heading_oracle(
        int(ctx.params.get("n_states", 1000)), substream(cfg.seed, "bench", "heading"),
        n_headings=int(ctx.params.get("n_headings", 3600)), zeta=cfg.env.zeta,
    )


def _objective_fixed_points(ctx: ScenarioContext) -> Dict[str, float]:
    cfg = ctx.config()
    bench = Workbench.from_config(cfg)
    tasks = []
    for battery in ctx.params.get("batteries", sorted(cfg.batteries)):
        tasks.extend(pipeline.battery_tasks(cfg, bench, battery))
    return oracles.objective_fixed_points(bench.provider, tasks)


def _metric_units(ctx: ScenarioContext) -> Dict[str, float]:
    observed = oracles.metric_unit_cases()
    comparison_csv = ctx.params.get("comparison_csv")
    if comparison_csv:
        frame = pd.read_csv(comparison_csv)
        observed["spl_above_sr_rows"] = float((frame["spl_permille"] > frame["sr_permille"]).sum())
    return observed


def _teacher_competence(ctx: ScenarioContext) -> Dict[str, float]:
    region = ctx.params.get("region", "A")
    battery = ctx.params["battery"]
    variant = ctx.params.get("variant", "ST")
    srs, firsts = [], []
    observed: Dict[str, float] = {}
    for seed in ctx.scenario.seeds:
        cfg = ctx.config(seed)
        bench = Workbench.from_config(cfg)
        ctx.note(f"training teacher {region} ({variant}) seed {seed}")
        trained = pipeline.train_stage(cfg, bench, region, variant)
        ctx.note(f"evaluating seed {seed} on {battery}")
        evaluated = pipeline.eval_stage(cfg, bench, str(trained.files["checkpoint"]), battery)
        srs.append(evaluated.report.sr_permille)
        firsts.append(_first_success(trained, trained.extra["episodes"]))
        observed[f"sr_permille.seed{seed}"] = evaluated.report.sr_permille
        observed[f"spl_le_sr.seed{seed}"] = float(evaluated.report.spl_permille <= evaluated.report.sr_permille)
    _median_fields("sr_permille", srs, observed)
    _median_fields("first_success", firsts, observed)
    return observed


def _reward_ablation(ctx: ScenarioContext) -> Dict[str, float]:
    region = ctx.params.get("region", "A")
    variants = [v.upper() for v in ctx.params.get("variants", ["SR", "ER", "ST"])]
    observed: Dict[str, float] = {}
    for variant in variants:
        firsts = []
        for seed in ctx.scenario.seeds:
            cfg = ctx.config(seed)
            bench = Workbench.from_config(cfg)
            ctx.note(f"training {variant} seed {seed}")
            trained = pipeline.train_stage(cfg, bench, region, variant)
            first = _first_success(trained, trained.extra["episodes"])
            firsts.append(first)
            observed[f"first_success.{variant}.seed{seed}"] = first
        _median_fields(f"first_success.{variant}", firsts, observed)
    return observed


def _distill_setup(ctx: ScenarioContext, cfg: RunConfig, bench: Workbench) -> Dict[str, str]:
    """Train every configured teacher and distill the student; returns policy specs by label."""
    teachers = ctx.params.get("teachers", list(cfg.teachers))
    if not teachers:
        raise ConfigError("params.teachers", "no teacher regions configured")
    paths = {}
    for region in teachers:
        ctx.note(f"training teacher {region}")
        paths[f"teacher_{region}"] = str(pipeline.train_stage(cfg, bench, region).files["checkpoint"])
    ctx.note("distilling student")
    student = pipeline.distill_stage(cfg, bench, [Path(p) for p in paths.values()],
                                     save_datasets=bool(ctx.params.get("save_datasets", False)))
    paths["student"] = str(student.files["checkpoint"])
    return paths


def _evaluate_all(ctx: ScenarioContext, cfg: RunConfig, bench: Workbench, policies: Dict[str, str],
                  batteries: Sequence[str], observed: Dict[str, float], seed: int) -> None:
    for label, spec in policies.items():
        for battery in batteries:
            ctx.note(f"evaluating {label} on {battery}")
            report = pipeline.eval_stage(cfg, bench, spec, battery).report
            observed[f"{label}.{battery}.sr_permille.seed{seed}"] = report.sr_permille
            observed[f"{label}.{battery}.spl_permille.seed{seed}"] = report.spl_permille


def _seed_medians(observed: Dict[str, float], seeds: Sequence[int]) -> None:
    keys = {k.rsplit(".seed", 1)[0] for k in observed if ".seed" in k}
    for key in sorted(keys):
        observed[key] = statistics.median(observed[f"{key}.seed{s}"] for s in seeds)


def _distill_generalization(ctx: ScenarioContext) -> Dict[str, float]:
    batteries = ctx.params["batteries"]
    observed: Dict[str, float] = {}
    for seed in ctx.scenario.seeds:
        cfg = ctx.config(seed)
        bench = Workbench.from_config(cfg)
        policies = _distill_setup(ctx, cfg, bench)
        _evaluate_all(ctx, cfg, bench, policies, batteries, observed, seed)
    _seed_medians(observed, ctx.scenario.seeds)
    return observed


def _baseline_comparison(ctx: ScenarioContext) -> Dict[str, float]:
    battery = ctx.params["battery"]
    methods = [m.upper() for m in ctx.params.get("methods", ["PSO", "DE", "GA", "AFSA"])]
    observed: Dict[str, float] = {}
    for seed in ctx.scenario.seeds:
        cfg = ctx.config(seed)
        bench = Workbench.from_config(cfg)
        policies = {"student": _distill_setup(ctx, cfg, bench)["student"]}
        policies.update({f"baseline_{m}": f"baseline:{m}" for m in methods})
        _evaluate_all(ctx, cfg, bench, policies, [battery], observed, seed)
    _seed_medians(observed, ctx.scenario.seeds)
    best = max(observed[f"baseline_{m}.{battery}.sr_permille"] for m in methods)
    observed["baselines.best_sr_permille"] = best
    observed["baselines.min_sr_permille"] = min(observed[f"baseline_{m}.{battery}.sr_permille"] for m in methods)
    return observed


def _strip_excluded(path: Path) -> bytes:
    if path.suffix == ".csv":
        frame = pd.read_csv(path)
        frame = frame.drop(columns=[c for c in EXCLUDED_COLUMNS if c in frame.columns])
        return frame.to_csv(index=False, float_format="%.10g").encode("utf-8")
    return path.read_bytes()


def compare_trees(left: Path, right: Path) -> List[str]:
    """Relative paths of report files that differ between two run directories.

    CSV, TOML and JSON files other than ``UNCOMPARED_FILES`` are compared;
    columns in ``EXCLUDED_COLUMNS`` are dropped first. Files present on one side only count as differing.
    """
    def files(root: Path) -> Dict[str, Path]:
        return {
            str(p.relative_to(root)): p
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.suffix in DETERMINISM_SUFFIXES and p.name not in UNCOMPARED_FILES
        }

    a, b = files(left), files(right)
    differing = sorted(set(a) ^ set(b))
    for rel in sorted(set(a) & set(b)):
        if _strip_excluded(a[rel]) != _strip_excluded(b[rel]):
            differing.append(rel)
    return sorted(differing)


def _determinism(ctx: ScenarioContext) -> Dict[str, float]:
    """Run the inner pipelines twice from the same root seed and compare every report."""
    inner = ctx.params.get("inner", ["teacher_competence"])
    inner = [inner] if isinstance(inner, str) else list(inner)
    for kind in inner:
        if kind not in KINDS or kind == "determinism":
            raise ConfigError("params.inner", f"cannot rerun kind {kind!r}")
    seed = ctx.scenario.seeds[0]
    roots = [ctx.out_dir / "first", ctx.out_dir / "second"]
    for root in roots:
        for kind in inner:
            sub = replace(ctx.scenario, kind=kind, seeds=[seed])
            ctx.note(f"{root.name} run of {kind}")
            KINDS[kind](ScenarioContext(sub, root / kind, ctx.on_progress))
    differing = compare_trees(*roots)
    for rel in differing:
        logger.warning("non-deterministic output: %s", rel)
    compared = sum(1 for p in roots[0].rglob("*")
                   if p.is_file() and p.suffix in DETERMINISM_SUFFIXES and p.name not in UNCOMPARED_FILES)
    return {"differing_files": float(len(differing)), "compared_files": float(compared)}


KINDS: Dict[str, Callable[[ScenarioContext], Dict[str, float]]] = {
    "element_identities": _element_identities,
    "gradient_check": _gradient_check,
    "heading_oracle": _heading_oracle,
    "objective_fixed_points": _objective_fixed_points,
    "teacher_competence": _teacher_competence,
    "reward_ablation": _reward_ablation,
    "distill_generalization": _distill_generalization,
    "baseline_comparison": _baseline_comparison,
    "metric_units": _metric_units,
    "determinism": _determinism,
}


@dataclass
class ScenarioResult:
    scenario: ReproScenario
    observed: Dict[str, float]
    violations: List[str]
    runtime_s: float
    diff_path: Optional[Path] = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary_row(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "passed": int(self.passed),
            "n_assertions": len(self.scenario.assertions),
            "n_violations": len(self.violations),
            "runtime_s": round(self.runtime_s, 3),
            "runtime_budget_s": self.scenario.runtime_budget_s,
        }


def diff_report(result: ScenarioResult) -> str:
    """Expected vs observed for every violated assertion; empty when everything holds."""
    lines = [f"- {v}" for v in result.violations]
    budget = result.scenario.runtime_budget_s
    if budget is not None and result.runtime_s > budget:
        lines.append(f"! runtime {result.runtime_s:.1f}s exceeds budget {budget:g}s")
    return "".join(f"{line}\n" for line in lines)


def write_summary(results: Sequence[ScenarioResult], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.summary_row() for r in results], columns=SUMMARY_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


def run_scenario(
    scenario: ReproScenario,
    out_root: Union[str, Path],
    on_progress: Optional[Callable[[str], None]] = None,
    raise_on_failure: bool = True,
) -> ScenarioResult:
    """Execute the scenario's pipeline, evaluate its assertions and write the diff report.

    Writes ``<out_root>/<name>/diff.txt``, ``observed.csv`` and ``summary.csv``.
    Raises ScenarioFailure listing every violated assertion unless
    ``raise_on_failure`` is false.
    """
    out_dir = Path(out_root) / scenario.name
    ctx = ScenarioContext(scenario, out_dir, on_progress)
    started = time.perf_counter()
    observed = KINDS[scenario.kind](ctx)
    runtime = time.perf_counter() - started
    violations = [v for v in (a.check(observed) for a in scenario.assertions) if v is not None]
    result = ScenarioResult(scenario, observed, violations, runtime)

    out_dir.mkdir(parents=True, exist_ok=True)
    result.diff_path = out_dir / "diff.txt"
    result.diff_path.write_text(diff_report(result), encoding="utf-8")
    pd.DataFrame(sorted(observed.items()), columns=["field", "value"]).to_csv(
        out_dir / "observed.csv", index=False, float_format="%.10g")
    write_summary([result], out_dir / "summary.csv")
    logger.info("scenario %s %s in %.1fs (%d violation(s))", scenario.name,
                "passed" if result.passed else "failed", runtime, len(violations))
    if violations and raise_on_failure:
        raise ScenarioFailure(violations)
    return result
