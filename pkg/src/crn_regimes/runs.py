"""SQLite registry of verification runs."""

import hashlib
import json
import logging
import sqlite3
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import registry_home


logger = logging.getLogger(__name__)

DB_NAME = "runs.db"


def _connect(home=None) -> sqlite3.Connection:
    root = registry_home(home)
    root.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(str(root / DB_NAME))
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA foreign_keys=ON")
    return conn


def init_db(home=None) -> None:
    """Create tables if they don't exist."""
    conn = _connect(home)
    try:
        conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                run_id         TEXT PRIMARY KEY,
                created_at     TEXT NOT NULL,
                config_digest  TEXT NOT NULL,
                config_path    TEXT NOT NULL DEFAULT '',
                output_dir     TEXT NOT NULL DEFAULT '',
                regime         TEXT NOT NULL,
                base_seed      INTEGER NOT NULL,
                monotone       INTEGER NOT NULL,
                passed         INTEGER NOT NULL
            );

            CREATE TABLE IF NOT EXISTS run_results (
                run_id          TEXT NOT NULL REFERENCES runs(run_id) ON DELETE CASCADE,
                n               INTEGER NOT NULL,
                slow_sup_mean   REAL NOT NULL,
                fast_tv         REAL NOT NULL,
                production_rel  REAL NOT NULL,
                passed          INTEGER NOT NULL,
                PRIMARY KEY (run_id, n)
            );

            CREATE INDEX IF NOT EXISTS idx_runs_digest
                ON runs(config_digest);
        """)
        conn.commit()
    finally:
        conn.close()


def config_digest(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of an experiment config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def record_run(report: Dict[str, Any], config_path: str = "", output_dir: str = "", home=None) -> str:
    """Insert a finished run and its per-N results. Returns the new run_id."""
    init_db(home)
    run_id = str(uuid.uuid4())
    now = datetime.now(timezone.utc).isoformat()
    conn = _connect(home)
    try:
        conn.execute(
            """
            INSERT INTO runs
                (run_id, created_at, config_digest, config_path, output_dir, regime, base_seed, monotone, passed)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """,
            (
                run_id,
                now,
                config_digest(report["config"]),
                str(config_path),
                str(output_dir),
                report["regime"],
                int(report["base_seed"]),
                int(bool(report["monotone"])),
                int(bool(report["passed"])),
            ),
        )
        conn.executemany(
            """
            INSERT INTO run_results (run_id, n, slow_sup_mean, fast_tv, production_rel, passed)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
            [
                (
                    run_id,
                    entry["N"],
                    entry["slow_sup_mean"],
                    entry["fast_tv"],
                    entry["production_rel_mean"],
                    int(all(entry["pass"].values())),
                )
                for entry in report.get("per_n", [])
            ],
        )
        conn.commit()
    finally:
        conn.close()
    logger.info("recorded run %s (%s)", run_id, report["regime"])
    return run_id


def list_runs(limit: int = 10, regime: Optional[str] = None, home=None) -> List[sqlite3.Row]:
    """Recent runs, newest first, with the number of N values each covered."""
    init_db(home)
    conn = _connect(home)
    try:
        return conn.execute(
            """
            SELECT r.*,
                   COUNT(x.n)  AS n_count,
                   MAX(x.n)    AS n_max
            FROM   runs r
            LEFT JOIN run_results x USING (run_id)
            WHERE  (? IS NULL OR r.regime = ?)
            GROUP  BY r.run_id
            ORDER  BY r.created_at DESC
            LIMIT  ?
            """,
            (regime, regime, limit),
        ).fetchall()
    finally:
        conn.close()


def get_run(run_id: str, home=None) -> Optional[Dict[str, Any]]:
    init_db(home)
    conn = _connect(home)
    try:
        row = conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
        if row is None:
            return None
        results = conn.execute(
            "SELECT * FROM run_results WHERE run_id = ? ORDER BY n ASC", (run_id,)
        ).fetchall()
        return {**dict(row), "results": [dict(r) for r in results]}
    finally:
        conn.close()


def runs_for_config(config: Dict[str, Any], home=None) -> List[sqlite3.Row]:
    """Earlier runs of an identical config, oldest first."""
    init_db(home)
    conn = _connect(home)
    try:
        return conn.execute(
            "SELECT * FROM runs WHERE config_digest = ? ORDER BY created_at ASC",
            (config_digest(config),),
        ).fetchall()
    finally:
        conn.close()


def registry_path(home=None) -> Path:
    return registry_home(home) / DB_NAME
