"""Shared test fixtures and configuration for geonav tests."""

import math
from pathlib import Path

import numpy as np
import pytest
import tomli_w

from geonav.core.config import Workbench, config_from_dict, four_corner_regions
from geonav.core.models import FieldSample, GeoBox, GeoPoint, NavTask
from geonav.learn.artifacts import ActorBundle
from geonav.learn.neural import Mlp
from geonav.sim.field_model import DipoleField, DipoleFieldSpec, FieldGrid
from geonav.sim.nav_env import ActionBounds, NavEnv, ObservationNormalizer

REPO_ROOT = Path(__file__).resolve().parents[1]
SUPER_REGION = GeoBox(90.0, 135.0, -35.0, -10.0)


def make_sample(d: float, i: float, bh: float) -> FieldSample:
    """Field sample with the given observed elements; components are derived consistently."""
    bz = bh * math.tan(i)
    return FieldSample(
        bf=math.hypot(bh, bz), bh=bh, bx=bh * math.cos(d), by=bh * math.sin(d), bz=bz,
        decl_d=d, incl_i=i,
    )


@pytest.fixture(scope="session")
def repo_root():
    return REPO_ROOT


@pytest.fixture(scope="session")
def super_region():
    return SUPER_REGION


@pytest.fixture(scope="session")
def dipole():
    """Desk dipole covering the desk super-region."""
    return DipoleField(DipoleFieldSpec(), coverage=SUPER_REGION)


@pytest.fixture(scope="session")
def regions():
    return four_corner_regions(SUPER_REGION)


@pytest.fixture(scope="session")
def normalizer(dipole):
    return ObservationNormalizer.from_provider(dipole, SUPER_REGION, 10, 6)


@pytest.fixture
def env(dipole, regions, normalizer):
    """Environment over region A with the default ST reward."""
    return NavEnv(dipole, regions["A"], normalizer)


@pytest.fixture
def task_a():
    """A north-east task of roughly 32 km inside region A."""
    return NavTask(GeoPoint(91.0, -12.5), GeoPoint(91.2, -12.3), max_steps=20)


@pytest.fixture
def linear_grid():
    """5 x 4 grid over lon 90..94, lat -22..-19 with bx = 100 lon, by = 50 lat + 2000, bz = 40000."""
    lons = 90.0 + np.arange(5)
    lats = -22.0 + np.arange(4)
    lon_grid, lat_grid = np.meshgrid(lons, lats)
    cells = np.stack([100.0 * lon_grid, 50.0 * lat_grid + 2000.0, np.full_like(lon_grid, 40000.0)], axis=-1)
    return FieldGrid(GeoPoint(90.0, -22.0), 1.0, 1.0, 5, 4, cells)


@pytest.fixture
def actor_bundle(normalizer):
    """Small random actor used wherever a trained network is not needed."""
    rng = np.random.default_rng(3)
    return ActorBundle(Mlp([6, 8, 2], "tanh", rng), normalizer, ActionBounds(), "teacher", "A")


@pytest.fixture
def small_config_data(tmp_path):
    """Run config with budgets small enough for unit tests."""
    return {
        "seed": 0,
        "run_id": "test",
        "out_dir": str(tmp_path / "out"),
        "regions_preset": "four_corners",
        "teachers": ["A", "D"],
        "env": {"max_steps": 15, "normalizer_nlon": 10, "normalizer_nlat": 6},
        "td3": {
            "hidden": [8, 8], "batch": 8, "warmup_steps": 20, "total_env_steps": 50,
            "buffer_capacity": 200, "log_interval": 0,
        },
        "distill": {"samples_per_teacher": 40, "epochs": 2, "batch": 8},
        "baselines": {"population": 6, "iterations_per_step": 2},
        "batteries": {
            "A_small": {"region": "A", "n": 3, "seed_stream": "small-A"},
            "middle": {"region": "middle", "n": 2},
        },
    }


@pytest.fixture
def small_config(small_config_data):
    return config_from_dict(small_config_data)


@pytest.fixture
def bench(small_config):
    return Workbench.from_config(small_config)


@pytest.fixture
def config_file(tmp_path, small_config_data):
    """The small run config written as TOML."""
    path = tmp_path / "run.toml"
    path.write_text(tomli_w.dumps(small_config_data), encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def reset_environment(monkeypatch):
    """Keep a developer's output override out of the tests."""
    monkeypatch.delenv("GEONAV_OUT", raising=False)
    yield


# Pytest configuration
def pytest_collection_modifyitems(config, items):
    """Add markers based on file names."""
    for item in items:
        if "test_cli" in item.nodeid:
            item.add_marker(pytest.mark.cli)
        if any(keyword in item.nodeid for keyword in ["integration", "end_to_end", "pipeline"]):
            item.add_marker(pytest.mark.integration)
