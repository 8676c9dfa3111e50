"""
Run registry for geonav.
Indexes every artifact and metrics report written under a run directory.
"""

import hashlib
import logging
import math
import sqlite3
from pathlib import Path
from typing import List, Optional

from .exceptions import RegistryError
from .models import MetricsReport

logger = logging.getLogger(__name__)

REGISTRY_FILE = "registry.db"
METRIC_FIELDS = (
    "sr_permille", "spl_permille", "heading_mae_rad", "heading_rmse_rad",
    "ne_km", "ne_success_km", "tnt_steps", "tnt_success_steps", "n_tasks",
)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _nullable(value: float) -> Optional[float]:
    return None if isinstance(value, float) and math.isnan(value) else value


class Registry:
    """SQLite index of a run directory."""

    def __init__(self, db_path: str):
        """Open (lazily) the registry database.

        Args:
            db_path: Path to the SQLite database file
        """
        self.db_path = str(db_path)
        self.connection: Optional[sqlite3.Connection] = None
        self._closed = False

    @classmethod
    def for_run(cls, run_dir: Path) -> "Registry":
        """Registry of ``run_dir``, created and initialized on first use."""
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        registry = cls(str(run_dir / REGISTRY_FILE))
        registry.initialize()
        return registry

    def connect(self) -> sqlite3.Connection:
        if self._closed:
            raise sqlite3.ProgrammingError("Cannot operate on a closed registry.")
        if self.connection is None:
            self.connection = sqlite3.connect(self.db_path)
            self.connection.row_factory = sqlite3.Row
        return self.connection

    def close(self):
        if self.connection:
            self.connection.close()
            self.connection = None
        self._closed = True

    def __enter__(self) -> "Registry":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def initialize(self):
        """Create the tables from schema.sql (idempotent)."""
        schema_path = Path(__file__).parent / "schema.sql"
        if not schema_path.exists():
            raise FileNotFoundError(f"Schema file not found: {schema_path}")
        conn = self.connect()
        cursor = conn.cursor()
        try:
            cursor.executescript(schema_path.read_text(encoding="utf-8"))
            conn.commit()
        except sqlite3.Error as e:
            conn.rollback()
            raise RegistryError(f"Failed to initialize registry: {e}")
        finally:
            cursor.close()

    def _write(self, sql: str, params: tuple, what: str) -> None:
        conn = self.connect()
        cursor = conn.cursor()
        try:
            cursor.execute(sql, params)
            conn.commit()
        except sqlite3.Error as e:
            conn.rollback()
            raise RegistryError(f"Failed to {what}: {e}")
        finally:
            cursor.close()

    def _read(self, sql: str, params: tuple, what: str) -> List[dict]:
        cursor = self.connect().cursor()
        try:
            cursor.execute(sql, params)
            return [dict(row) for row in cursor.fetchall()]
        except sqlite3.Error as e:
            raise RegistryError(f"Failed to {what}: {e}")
        finally:
            cursor.close()

    def record_stage(self, run_id: str, stage: str, config_sha256: Optional[str] = None) -> None:
        self._write(
            "INSERT OR REPLACE INTO stages (run_id, stage, config_sha256) VALUES (?, ?, ?)",
            (run_id, stage, config_sha256), "record stage",
        )

    def register_artifact(self, run_id: str, stage: str, kind: str, path: Path) -> str:
        """Index one written file and return its sha256.

        Args:
            run_id: Run the artifact belongs to
            stage: Pipeline stage that produced it (e.g. ``teacher_A``)
            kind: Artifact kind (checkpoint, training_log, metrics, ...)
            path: File path

        Returns:
            Hex digest of the file contents
        """
        digest = file_sha256(Path(path))
        self._write(
            "INSERT OR REPLACE INTO artifacts (run_id, stage, kind, path, sha256) VALUES (?, ?, ?, ?, ?)",
            (run_id, stage, kind, str(path), digest), "register artifact",
        )
        logger.debug("registered %s %s (%s)", kind, path, digest[:12])
        return digest

    def artifacts(self, run_id: str, stage: Optional[str] = None) -> List[dict]:
        if stage is None:
            return self._read(
                "SELECT stage, kind, path, sha256 FROM artifacts WHERE run_id = ? ORDER BY stage, path",
                (run_id,), "list artifacts",
            )
        return self._read(
            "SELECT stage, kind, path, sha256 FROM artifacts WHERE run_id = ? AND stage = ? ORDER BY path",
            (run_id, stage), "list artifacts",
        )

    def record_metrics(self, run_id: str, policy: str, region: str, battery: str, report: MetricsReport) -> None:
        row = report.as_row()
        self._write(
            f"INSERT OR REPLACE INTO metrics (run_id, policy, region, battery, {', '.join(METRIC_FIELDS)}) "
            f"VALUES (?, ?, ?, ?, {', '.join('?' * len(METRIC_FIELDS))})",
            (run_id, policy, region, battery, *(_nullable(row[k]) for k in METRIC_FIELDS)),
            "record metrics",
        )

    def comparison(self, run_id: str, battery: Optional[str] = None) -> List[dict]:
        """Metrics rows of a run, one per (policy, battery), ordered for tabulation."""
        columns = f"policy, region, battery, {', '.join(METRIC_FIELDS)}"
        if battery is None:
            return self._read(
                f"SELECT {columns} FROM metrics WHERE run_id = ? ORDER BY battery, policy",
                (run_id,), "query comparison",
            )
        return self._read(
            f"SELECT {columns} FROM metrics WHERE run_id = ? AND battery = ? ORDER BY policy",
            (run_id, battery), "query comparison",
        )
