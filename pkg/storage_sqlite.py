# storage_sqlite.py
from __future__ import annotations

import json
import logging
import sqlite3
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from models import RunRecord

logger = logging.getLogger(__name__)
DB_DEFAULT = Path("runs.db")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunRegistry:
    """SQLite ledger of runs: one row per run id with status and the stage log."""

    def __init__(self, db_path: str | Path = DB_DEFAULT):
        self.db_path = str(db_path)
        self._lock = threading.RLock()
        self._init_db()

    def _get_conn(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path, check_same_thread=False)
        conn.row_factory = sqlite3.Row
        return conn

    def _init_db(self) -> None:
        with self._lock:
            conn = self._get_conn()
            try:
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS runs (
                        run_id TEXT PRIMARY KEY,
                        experiment TEXT,
                        config_hash TEXT,
                        created_at TEXT,
                        status TEXT,
                        data TEXT
                    )
                    """
                )
                conn.commit()
            finally:
                conn.close()

    def _write(self, record: Dict[str, Any]) -> None:
        conn = self._get_conn()
        try:
            conn.execute(
                "INSERT OR REPLACE INTO runs(run_id, experiment, config_hash, created_at, status, data) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (
                    record["run_id"],
                    record.get("experiment"),
                    record.get("config_hash"),
                    record.get("created_at"),
                    record.get("status"),
                    json.dumps(record, default=str),
                ),
            )
            conn.commit()
        finally:
            conn.close()

    # -----------------------
    # Runs
    # -----------------------
    def reserve_run(self, run_id: str, experiment: str, config_hash: str) -> None:
        """Insert a 'running' row before the pipeline starts."""
        with self._lock:
            try:
                self._write({
                    "run_id": run_id,
                    "experiment": experiment,
                    "config_hash": config_hash,
                    "log": [],
                    "status": "running",
                    "error": None,
                    "created_at": _now_iso(),
                    "completed_at": None,
                })
            except Exception:
                logger.exception("reserve_run failed")
                raise

    def store_run(self, run: RunRecord) -> str:
        """Persist a finished run (status, stage log with durations)."""
        with self._lock:
            try:
                record = run.to_pydantic().model_dump(mode="json")
                if record.get("completed_at") is None:
                    record["completed_at"] = _now_iso()
                self._write(record)
                return run.run_id
            except Exception:
                logger.exception("store_run failed")
                raise

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        with self._lock:
            conn = self._get_conn()
            try:
                row = conn.execute("SELECT data FROM runs WHERE run_id = ?", (run_id,)).fetchone()
                if not row:
                    return None
                return json.loads(row["data"]) if row["data"] else {}
            finally:
                conn.close()

    def list_runs(self, experiment: Optional[str] = None) -> List[Dict[str, Any]]:
        with self._lock:
            conn = self._get_conn()
            try:
                if experiment is None:
                    rows = conn.execute("SELECT data FROM runs ORDER BY created_at").fetchall()
                else:
                    rows = conn.execute(
                        "SELECT data FROM runs WHERE experiment = ? ORDER BY created_at", (experiment,)
                    ).fetchall()
                return [json.loads(r["data"]) for r in rows]
            finally:
                conn.close()

    def mark_run_failed(self, run_id: str, error: Dict[str, Any]) -> None:
        """Mark a run failed and attach the machine-readable error record."""
        with self._lock:
            try:
                record = self.get_run(run_id)
                if record is None:
                    record = {"run_id": run_id, "log": [], "created_at": _now_iso()}
                record["status"] = "failed"
                record["error"] = error
                record["completed_at"] = _now_iso()
                self._write(record)
            except Exception:
                logger.exception("mark_run_failed failed")
                raise
