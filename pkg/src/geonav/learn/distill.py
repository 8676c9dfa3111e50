"""Multi-teacher policy distillation by interleaved mean-squared-error regression."""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.exceptions import ConfigError, ShapeMismatchError
from ..core.seeding import substream
from ..sim.nav_env import ACT_DIM, OBS_DIM, NavEnv, TaskSpec, task_at
from .artifacts import ActorBundle
from .neural import AdamState, Mlp, adam_step, assert_finite, backward_from_cache, forward, forward_with_cache

logger = logging.getLogger(__name__)

DATASET_FORMAT = "geonav-distill-dataset"
RECORD_WIDTH = OBS_DIM + ACT_DIM
VALIDATION_LOG_COLUMNS = ["epoch", "teacher", "train_mse", "val_mse", "minibatches"]


@dataclass(frozen=True)
class DistillConfig:
    samples_per_teacher: int = 50_000
    epochs: int = 20
    batch: int = 256
    lr: float = 3e-4
    holdout: float = 0.1
    collection: str = "teacher"
    dagger_iterations: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("samples_per_teacher", "epochs", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"distill.{name}", "must be positive")
        if self.lr <= 0:
            raise ConfigError("distill.lr", "must be positive")
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigError("distill.holdout", f"must lie in [0, 1), got {self.holdout}")
        if self.collection not in ("teacher", "student"):
            raise ConfigError("distill.collection", f"expected 'teacher' or 'student', got {self.collection!r}")
        if self.dagger_iterations < 0:
            raise ConfigError("distill.dagger_iterations", "must be non-negative")


@dataclass
class DistillDataset:
    """State-action pairs labelled by one teacher; actions normalized to [-1, 1]^2."""

    teacher_id: str
    obs: np.ndarray = field(default_factory=lambda: np.zeros((0, OBS_DIM)))
    actions: np.ndarray = field(default_factory=lambda: np.zeros((0, ACT_DIM)))
    region: str = ""
    seed: int = 0

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64).reshape(-1, OBS_DIM)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, ACT_DIM)
        if self.obs.shape[0] != self.actions.shape[0]:
            raise ShapeMismatchError(f"{self.obs.shape[0]} observations vs {self.actions.shape[0]} actions")

    def __len__(self) -> int:
        return self.obs.shape[0]

    def merged(self, other: "DistillDataset") -> "DistillDataset":
        return DistillDataset(
            self.teacher_id, np.vstack([self.obs, other.obs]), np.vstack([self.actions, other.actions]),
            self.region, self.seed,
        )

    def records(self) -> np.ndarray:
        return np.hstack([self.obs, self.actions])


def collect_dataset(
    teacher: ActorBundle,
    env: NavEnv,
    n: int,
    seed: int,
    task_spec: TaskSpec = TaskSpec(),
    mode: str = "teacher",
    student: Optional[Mlp] = None,
    region_name: str = "",
) -> DistillDataset:
    """Roll out noiseless episodes and label every visited state with the teacher action.

    In ``teacher`` mode the teacher also drives; in ``student`` mode the
    given student drives and the teacher only relabels.
    """
    if mode == "student" and student is None:
        raise ValueError("student mode needs a student network")
    obs_rows: List[np.ndarray] = []
    act_rows: List[np.ndarray] = []
    episode = 0
    while len(obs_rows) < n:
        task = task_at(env.provider, env.region, task_spec, seed, f"distill-{mode}", episode)
        obs, _ = env.reset(options={"task": task})
        while len(obs_rows) < n:
            label = forward(teacher.actor, obs)
            obs_rows.append(obs)
            act_rows.append(label)
            driver = label if mode == "teacher" else forward(student, obs)
            obs, _, terminated, truncated, _ = env.step(driver)
            if terminated or truncated:
                break
        episode += 1
    logger.info("collected %d pairs from %s over %d episodes", n, teacher.name, episode)
    return DistillDataset(
        teacher.name,
        np.array(obs_rows).reshape(-1, OBS_DIM),
        np.array(act_rows).reshape(-1, ACT_DIM),
        region=region_name,
        seed=seed,
    )


def distill_loss(teacher_actions: np.ndarray, student_actions: np.ndarray) -> float:
    """Mean over pairs and action dimensions of squared differences."""
    t = np.asarray(teacher_actions, dtype=np.float64)
    s = np.asarray(student_actions, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeMismatchError(f"teacher actions {t.shape} vs student actions {s.shape}")
    if t.size == 0:
        return 0.0
    return float(np.mean((t - s) ** 2))


@dataclass
class _Split:
    train: np.ndarray
    val: np.ndarray


def _split(ds: DistillDataset, holdout: float, seed: int) -> _Split:
    order = substream(seed, "distill", "split", ds.teacher_id).permutation(len(ds))
    n_val = int(round(holdout * len(ds)))
    if len(ds) - n_val < 1:
        n_val = len(ds) - 1
    return _Split(train=order[n_val:], val=order[:n_val])


@dataclass
class DistillResult:
    student: Mlp
    log: List[dict]
    minibatch_counts: Dict[str, int]

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.log, columns=VALIDATION_LOG_COLUMNS)

    def write_log(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.log_frame().to_csv(path, index=False, float_format="%.10g")
        return path

    def final_val_mse(self) -> Dict[str, float]:
        last = max(row["epoch"] for row in self.log)
        return {row["teacher"]: row["val_mse"] for row in self.log if row["epoch"] == last}


def _mse(net: Mlp, ds: DistillDataset, idx: np.ndarray) -> float:
    if idx.size == 0:
        return math.nan
    return distill_loss(ds.actions[idx], forward(net, ds.obs[idx]))


def train_student(
    datasets: Sequence[DistillDataset],
    cfg: DistillConfig,
    layer_dims: Sequence[int],
    init: Optional[Mlp] = None,
    on_epoch: Optional[Callable[[int, Dict[str, float]], None]] = None,
) -> DistillResult:
    """Regress a student actor onto every teacher's labels.

    Each round draws one minibatch from every teacher in turn, so consumed
    minibatch counts never differ by more than one. Teachers with fewer
    training pairs wrap around their shuffled order. Epoch 0 of the log holds
    the losses before any update.
    """
    if not datasets:
        raise ValueError("train_student needs at least one dataset")
    if any(len(ds) < 2 for ds in datasets):
        raise ValueError("every dataset needs at least two pairs")
    names = [ds.teacher_id for ds in datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"teacher ids must be unique: {names}")
    student = init.copy() if init is not None else Mlp(layer_dims, "tanh", substream(cfg.seed, "distill", "init"))
    opt = AdamState.for_params(student.params(), cfg.lr)
    splits = [_split(ds, cfg.holdout, cfg.seed) for ds in datasets]
    rng = substream(cfg.seed, "distill", "batches")
    counts = {name: 0 for name in names}
    log: List[dict] = []

    def record(epoch: int):
        val = {}
        for ds, sp in zip(datasets, splits):
            val[ds.teacher_id] = _mse(student, ds, sp.val)
            log.append({
                "epoch": epoch, "teacher": ds.teacher_id, "train_mse": _mse(student, ds, sp.train),
                "val_mse": val[ds.teacher_id], "minibatches": counts[ds.teacher_id],
            })
        if on_epoch is not None:
            on_epoch(epoch, val)

    record(0)
    for epoch in range(1, cfg.epochs + 1):
        orders = [rng.permutation(sp.train) for sp in splits]
        rounds = max(math.ceil(o.size / cfg.batch) for o in orders)
        for r in range(rounds):
            for ds, order in zip(datasets, orders):
                take = np.arange(r * cfg.batch, (r + 1) * cfg.batch) % order.size
                idx = order[np.unique(take)] if order.size < cfg.batch else order[take]
                cache = forward_with_cache(student, ds.obs[idx])
                err = cache.output - ds.actions[idx]
                loss = float(np.mean(err ** 2))
                assert_finite(loss, "distillation loss", epoch=epoch, teacher_round=r)
                grads, _ = backward_from_cache(student, cache, 2.0 * err / err.size)
                adam_step(student.params(), grads.params(), opt)
                counts[ds.teacher_id] += 1
        record(epoch)
        logger.info("distill epoch %d: %s", epoch,
                    ", ".join(f"{row['teacher']}={row['val_mse']:.3g}" for row in log[-len(datasets):]))
    return DistillResult(student=student, log=log, minibatch_counts=counts)


def distill(
    teachers: Sequence[ActorBundle],
    envs: Sequence[NavEnv],
    cfg: DistillConfig,
    task_spec: TaskSpec = TaskSpec(),
    region_names: Optional[Sequence[str]] = None,
) -> Tuple[DistillResult, List[DistillDataset]]:
    """Collect one dataset per teacher in its own region and train the student.

    With ``collection = "student"`` the trained student then drives
    ``dagger_iterations`` more collection passes relabelled by the teachers,
    each followed by retraining on the aggregated data.
    """
    region_names = list(region_names or [""] * len(teachers))
    layer_dims = teachers[0].actor.layer_dims
    datasets = [
        collect_dataset(t, env, cfg.samples_per_teacher, cfg.seed, task_spec, "teacher", region_name=rn)
        for t, env, rn in zip(teachers, envs, region_names)
    ]
    result = train_student(datasets, cfg, layer_dims)
    if cfg.collection == "student":
        for it in range(cfg.dagger_iterations):
            extra = [
                collect_dataset(t, env, cfg.samples_per_teacher, cfg.seed + it + 1, task_spec, "student",
                                student=result.student, region_name=rn)
                for t, env, rn in zip(teachers, envs, region_names)
            ]
            datasets = [d.merged(e) for d, e in zip(datasets, extra)]
            result = train_student(datasets, cfg, layer_dims, init=result.student)
    return result, datasets


def save_dataset(ds: DistillDataset, path: Union[str, Path]) -> Path:
    """Write ``<path>`` (JSON manifest) and ``<path>.bin`` (8 little-endian float64 per record)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = ds.records().astype("<f8").tobytes()
    sidecar = path.with_suffix(".bin")
    sidecar.write_bytes(payload)
    manifest = {
        "format": DATASET_FORMAT,
        "teacher_id": ds.teacher_id,
        "count": len(ds),
        "record_width": RECORD_WIDTH,
        "region": ds.region,
        "seed": ds.seed,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_dataset(path: Union[str, Path]) -> DistillDataset:
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path} is not a distillation dataset manifest")
    payload = path.with_suffix(".bin").read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise ValueError(f"checksum mismatch for {path}")
    records = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(-1, RECORD_WIDTH)
    if records.shape[0] != manifest["count"]:
        raise ValueError(f"{path}: manifest count {manifest['count']} but {records.shape[0]} records")
    return DistillDataset(
        manifest["teacher_id"], records[:, :OBS_DIM], records[:, OBS_DIM:],
        region=manifest["region"], seed=manifest["seed"],
    )
