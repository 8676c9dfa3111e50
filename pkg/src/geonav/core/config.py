"""Declarative run configuration (TOML) and the objects built from it."""

import hashlib
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar, Union

import tomli_w

from ..baselines.metaheuristics import MetaConfig, Method
from ..learn.distill import DistillConfig
from ..learn.td3 import Td3Config
from ..sim.field_model import DipoleField, DipoleFieldSpec, FieldProvider, load_grid
from ..sim.nav_env import ActionBounds, NavEnv, ObservationNormalizer, TaskSpec
from ..sim.reward import RewardConfig, RewardVariant
from .exceptions import ConfigError
from .models import GeoBox, GeoPoint
from .seeding import derive_seed

logger = logging.getLogger(__name__)

T = TypeVar("T")

REGION_PRESETS = ("four_corners",)


@dataclass(frozen=True)
class FieldConfig:
    source: str = "dipole"
    path: Optional[str] = None
    moment_scale: float = 30000.0
    tilt_deg: float = 11.0
    center_lon: float = -72.0
    center_lat: float = 0.0
    gradient_step_km: float = 1.0

    def __post_init__(self):
        if self.source not in ("dipole", "grid"):
            raise ConfigError("field.source", f"expected 'dipole' or 'grid', got {self.source!r}")
        if self.source == "grid" and not self.path:
            raise ConfigError("field.path", "required when source = 'grid'")
        if self.moment_scale <= 0:
            raise ConfigError("field.moment_scale", "must be positive")
        if self.gradient_step_km <= 0:
            raise ConfigError("field.gradient_step_km", "must be positive")


@dataclass(frozen=True)
class EnvConfig:
    zeta: float = 0.05
    max_steps: int = 250
    psi_max: float = math.pi / 2.0
    dist_max_km: float = 50.0
    d_min_km: float = 30.0
    d_max_km: float = 50.0
    normalizer_nlon: int = 46
    normalizer_nlat: int = 26

    def __post_init__(self):
        if self.zeta <= 0:
            raise ConfigError("env.zeta", "must be positive")
        if self.max_steps < 1:
            raise ConfigError("env.max_steps", "must be positive")
        if not 0 < self.psi_max <= math.pi:
            raise ConfigError("env.psi_max", "must lie in (0, pi]")
        if self.dist_max_km <= 0:
            raise ConfigError("env.dist_max_km", "must be positive")
        if not 0 <= self.d_min_km <= self.d_max_km:
            raise ConfigError("env.d_min_km", "need 0 <= d_min_km <= d_max_km")
        if self.normalizer_nlon < 2 or self.normalizer_nlat < 2:
            raise ConfigError("env.normalizer_nlon", "lattice needs at least 2 x 2 points")

    @property
    def bounds(self) -> ActionBounds:
        return ActionBounds(self.psi_max, self.dist_max_km)

    def task_spec(self, d_min_km: Optional[float] = None, d_max_km: Optional[float] = None) -> TaskSpec:
        return TaskSpec(
            self.d_min_km if d_min_km is None else d_min_km,
            self.d_max_km if d_max_km is None else d_max_km,
            self.zeta, self.max_steps,
        )


@dataclass(frozen=True)
class BatterySpec:
    region: str
    n: int = 200
    d_min_km: Optional[float] = None
    d_max_km: Optional[float] = None
    seed_stream: Optional[str] = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("batteries.n", "must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs; loaded from TOML."""

    seed: int = 0
    run_id: str = "run"
    out_dir: str = "out"
    field: FieldConfig = FieldConfig()
    super_region: GeoBox = GeoBox(90.0, 135.0, -35.0, -10.0)
    regions: Dict[str, GeoBox] = None
    env: EnvConfig = EnvConfig()
    reward: RewardConfig = RewardConfig()
    td3: Td3Config = Td3Config()
    distill: DistillConfig = DistillConfig()
    teachers: Tuple[str, ...] = ()
    baselines: Dict[str, MetaConfig] = None
    batteries: Dict[str, BatterySpec] = None
    workers: int = 1
    source_path: Optional[str] = None

    def region(self, name: str) -> GeoBox:
        try:
            return self.regions[name]
        except KeyError:
            raise ConfigError("regions", f"unknown region {name!r} (known: {', '.join(sorted(self.regions))})")

    def battery(self, name: str) -> BatterySpec:
        try:
            return self.batteries[name]
        except KeyError:
            raise ConfigError("batteries", f"unknown battery {name!r} (known: {', '.join(sorted(self.batteries))})")

    def baseline(self, method: str) -> MetaConfig:
        key = method.upper()
        if key in self.baselines:
            return self.baselines[key]
        try:
            return MetaConfig(method=Method(key), seed=self.seed)
        except ValueError:
            raise ConfigError("baselines", f"unknown method {method!r}")

    def teacher_td3(self, region: str, seed_index: int = 0) -> Td3Config:
        """TD3 settings for the teacher of ``region`` with its own derived seed."""
        return replace(self.td3, seed=derive_seed(self.seed, "teacher", region, seed_index))

    def reward_for(self, variant: Optional[str]) -> RewardConfig:
        cfg = self.reward
        if variant:
            try:
                cfg = replace(cfg, variant=RewardVariant(variant.upper()))
            except ValueError:
                raise ConfigError("reward.variant", f"unknown variant {variant!r}")
        return replace(cfg, zeta=self.env.zeta)


def four_corner_regions(super_region: GeoBox, span_deg: float = 5.0) -> Dict[str, GeoBox]:
    """Regions A (north-west), B (north-east), C (south-west), D (south-east) and the middle.

    Each corner box spans ``span_deg`` in longitude and latitude; ``middle``
    is a box of the same size centred in the super-region.
    """
    s = super_region
    if s.lon_max - s.lon_min < 2 * span_deg or s.lat_max - s.lat_min < 2 * span_deg:
        raise ConfigError("regions_preset", f"super-region too small for {span_deg} degree corners")
    mid_lon = 0.5 * (s.lon_min + s.lon_max)
    half = 0.5 * span_deg
    return {
        "A": GeoBox(s.lon_min, s.lon_min + span_deg, s.lat_max - span_deg, s.lat_max),
        "B": GeoBox(s.lon_max - span_deg, s.lon_max, s.lat_max - span_deg, s.lat_max),
        "C": GeoBox(s.lon_min, s.lon_min + span_deg, s.lat_min, s.lat_min + span_deg),
        "D": GeoBox(s.lon_max - span_deg, s.lon_max, s.lat_min, s.lat_min + span_deg),
        "middle": GeoBox(mid_lon - half, mid_lon + half, s.mid_lat - half, s.mid_lat + half),
    }


def _build(cls: Type[T], data: Any, path: str, **overrides) -> T:
    """Construct a frozen config dataclass, naming the dotted path of any bad entry."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a table")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    kwargs = {**data, **overrides}
    try:
        return cls(**kwargs)
    except ConfigError as e:
        leaf = e.field.rsplit(".", 1)[-1]
        raise ConfigError(f"{path}.{leaf}" if leaf != path else path, e.message)
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e))


def _box(data: Any, path: str) -> GeoBox:
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a table with lon_min, lon_max, lat_min, lat_max")
    try:
        return GeoBox(float(data["lon_min"]), float(data["lon_max"]), float(data["lat_min"]), float(data["lat_max"]))
    except KeyError as e:
        raise ConfigError(f"{path}.{e.args[0]}", "missing")
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e))


def _reward(data: Dict[str, Any], zeta: float) -> RewardConfig:
    data = dict(data or {})
    if "variant" in data:
        try:
            data["variant"] = RewardVariant(str(data["variant"]).upper())
        except ValueError:
            raise ConfigError("reward.variant", f"expected SR, ER or ST, got {data['variant']!r}")
    if "heading_pair" in data:
        data["heading_pair"] = tuple(data["heading_pair"])
    if "zeta" in data:
        raise ConfigError("reward.zeta", "set the goal threshold in [env]")
    return _build(RewardConfig, data, "reward", zeta=zeta)


def config_from_dict(data: Dict[str, Any], source_path: Optional[str] = None) -> RunConfig:
    """Validate a parsed TOML document into a RunConfig."""
    top = {"seed", "run_id", "out_dir", "field", "super_region", "regions", "regions_preset", "env",
           "reward", "td3", "distill", "teachers", "baselines", "batteries", "workers"}
    for key in data:
        if key not in top:
            raise ConfigError(key, "unknown key")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
    workers = data.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ConfigError("workers", f"must be a positive integer, got {workers!r}")

    field_cfg = _build(FieldConfig, data.get("field"), "field")
    super_region = _box(data["super_region"], "super_region") if "super_region" in data else RunConfig.super_region
    regions: Dict[str, GeoBox] = {}
    preset = data.get("regions_preset")
    if preset is not None:
        if preset not in REGION_PRESETS:
            raise ConfigError("regions_preset", f"unknown preset {preset!r}")
        regions.update(four_corner_regions(super_region))
    for name, box in (data.get("regions") or {}).items():
        regions[name] = _box(box, f"regions.{name}")
    for name, box in regions.items():
        if not super_region.contains_box(box):
            raise ConfigError(f"regions.{name}", "lies outside the super-region")
    if not regions:
        raise ConfigError("regions", "at least one region is required")

    env = _build(EnvConfig, data.get("env"), "env")
    reward = _reward(data.get("reward"), env.zeta)
    td3_data = dict(data.get("td3") or {})
    if "hidden" in td3_data:
        td3_data["hidden"] = tuple(td3_data["hidden"])
    td3 = _build(Td3Config, td3_data, "td3", **({} if "seed" in td3_data else {"seed": seed}))
    distill_data = dict(data.get("distill") or {})
    distill = _build(DistillConfig, distill_data, "distill", **({} if "seed" in distill_data else {"seed": seed}))

    teachers = tuple(data.get("teachers", ()))
    for name in teachers:
        if name not in regions:
            raise ConfigError("teachers", f"unknown region {name!r}")

    raw_baselines = dict(data.get("baselines") or {})
    shared = {k: v for k, v in raw_baselines.items() if not isinstance(v, dict)}
    baselines: Dict[str, MetaConfig] = {}
    for method in Method:
        own = raw_baselines.get(method.value, {})
        baselines[method.value] = _build(
            MetaConfig, {**shared, **own}, f"baselines.{method.value}",
            method=method, **({} if "seed" in own or "seed" in shared else {"seed": seed}),
        )
    for key, value in raw_baselines.items():
        if isinstance(value, dict) and key not in baselines:
            raise ConfigError(f"baselines.{key}", "unknown method")

    batteries: Dict[str, BatterySpec] = {}
    for name, spec in (data.get("batteries") or {}).items():
        battery = _build(BatterySpec, spec, f"batteries.{name}")
        if battery.region not in regions:
            raise ConfigError(f"batteries.{name}.region", f"unknown region {battery.region!r}")
        batteries[name] = battery

    return RunConfig(
        seed=seed,
        run_id=str(data.get("run_id", "run")),
        out_dir=str(data.get("out_dir", "out")),
        field=field_cfg,
        super_region=super_region,
        regions=regions,
        env=env,
        reward=reward,
        td3=td3,
        distill=distill,
        teachers=teachers,
        baselines=baselines,
        batteries=batteries,
        workers=workers,
        source_path=source_path,
    )


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a run-config TOML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"{path}: {e}")
    return config_from_dict(data, str(path))


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value):
        return {k: _plain(v) for k, v in asdict(value).items() if v is not None}
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> Dict[str, Any]:
    """Fully resolved config document; loading it back yields an equal RunConfig."""
    field_data = _plain(cfg.field)
    if cfg.field.source == "grid" and cfg.source_path:
        field_data["path"] = str(resolve_path(cfg, cfg.field.path))
    reward = _plain(cfg.reward)
    reward.pop("zeta", None)
    baselines = {}
    for name, meta in cfg.baselines.items():
        entry = _plain(meta)
        entry.pop("method", None)
        baselines[name] = entry
    return {
        "seed": cfg.seed,
        "run_id": cfg.run_id,
        "out_dir": cfg.out_dir,
        "field": field_data,
        "super_region": _plain(cfg.super_region),
        "regions": {name: _plain(box) for name, box in cfg.regions.items()},
        "env": _plain(cfg.env),
        "reward": reward,
        "td3": _plain(cfg.td3),
        "distill": _plain(cfg.distill),
        "teachers": list(cfg.teachers),
        "baselines": baselines,
        "batteries": {name: _plain(b) for name, b in cfg.batteries.items()},
        "workers": cfg.workers,
    }


def snapshot_text(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def write_snapshot(cfg: RunConfig, path: Union[str, Path]) -> Path:
    """Write the resolved config next to an output set."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(snapshot_text(cfg), encoding="utf-8")
    return path


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(snapshot_text(cfg).encode("utf-8")).hexdigest()


def resolve_path(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    if p.is_absolute() or cfg.source_path is None:
        return p
    return Path(cfg.source_path).parent / p


def build_provider(cfg: RunConfig) -> FieldProvider:
    """Field provider for the run; every region must lie inside its coverage."""
    if cfg.field.source == "grid":
        provider = load_grid(resolve_path(cfg, cfg.field.path))
    else:
        spec = DipoleFieldSpec(cfg.field.moment_scale, cfg.field.tilt_deg,
                               GeoPoint(cfg.field.center_lon, cfg.field.center_lat))
        provider = DipoleField(spec, coverage=cfg.super_region)
    coverage = provider.coverage
    if not coverage.contains_box(cfg.super_region):
        raise ConfigError("super_region", f"not covered by the field ({coverage})")
    return provider


@dataclass
class Workbench:
    """Provider, normalizer and environment factory shared by every stage of a run."""

    cfg: RunConfig
    provider: FieldProvider
    normalizer: ObservationNormalizer

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Workbench":
        provider = build_provider(cfg)
        normalizer = ObservationNormalizer.from_provider(
            provider, cfg.super_region, cfg.env.normalizer_nlon, cfg.env.normalizer_nlat,
        )
        return cls(cfg, provider, normalizer)

    def env(self, region: str, reward_variant: Optional[str] = None) -> NavEnv:
        return NavEnv(
            self.provider, self.cfg.region(region), self.normalizer,
            self.cfg.reward_for(reward_variant), self.cfg.env.bounds,
            gradient_step_km=self.cfg.field.gradient_step_km,
        )
