import json
import logging
import os
import sqlite3
from typing import Any, Dict, List, Optional

from config import Config

logger = logging.getLogger(__name__)


class DatabaseManager:
    """SQLite registry of runs and their ensemble members"""

    def __init__(self, db_path: str = None):
        self.db_path = db_path or Config.DATABASE_PATH
        self.ensure_database_exists()
        self.init_tables()

    def ensure_database_exists(self):
        """Ensure database directory exists"""
        directory = os.path.dirname(self.db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

    def get_connection(self):
        """Get database connection"""
        return sqlite3.connect(self.db_path)

    def init_tables(self):
        """Initialize database tables"""
        with self.get_connection() as conn:
            cursor = conn.cursor()

            cursor.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    experiment TEXT NOT NULL,
                    config_hash TEXT NOT NULL,
                    output_dir TEXT,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP
                )
            """)

            # one row per (seed, grid, load step) member of a run
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS members (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    grid INTEGER NOT NULL,
                    step_size REAL NOT NULL,
                    status TEXT NOT NULL,
                    curve TEXT NOT NULL,
                    metadata TEXT,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
                    UNIQUE(run_id, seed, grid, step_size)
                )
            """)

            conn.commit()

    # Runs
    def register_run(self, run_id: str, experiment: str, config_hash: str, output_dir: str = None):
        """Create or refresh a run entry"""
        with self.get_connection() as conn:
            conn.execute("""
                INSERT OR REPLACE INTO runs (run_id, experiment, config_hash, output_dir)
                VALUES (?, ?, ?, ?)
            """, (run_id, experiment, config_hash, output_dir))
            conn.commit()
        logger.debug("registered run %s (%s)", run_id, experiment)

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("""
                SELECT run_id, experiment, config_hash, output_dir, timestamp
                FROM runs WHERE run_id = ?
            """, (run_id,))
            row = cursor.fetchone()
        if row is None:
            return None
        return {
            "run_id": row[0],
            "experiment": row[1],
            "config_hash": row[2],
            "output_dir": row[3],
            "timestamp": row[4],
        }

    # Members
    def save_member(
        self,
        run_id: str,
        seed: int,
        grid: int,
        step_size: float,
        status: str,
        curve: List[Dict[str, Any]],
        metadata: Dict = None
    ):
        """Store the degradation curve of one ensemble member, replacing a previous attempt"""
        with self.get_connection() as conn:
            conn.execute("""
                INSERT OR REPLACE INTO members (run_id, seed, grid, step_size, status, curve, metadata)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, (
                run_id,
                int(seed),
                int(grid),
                float(step_size),
                status,
                json.dumps(curve),
                json.dumps(metadata) if metadata else None
            ))
            conn.commit()

    def get_members(self, run_id: str) -> List[Dict[str, Any]]:
        """All members of a run in (seed, grid, step size) order"""
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("""
                SELECT seed, grid, step_size, status, curve, metadata
                FROM members
                WHERE run_id = ?
                ORDER BY seed, grid, step_size
            """, (run_id,))

            return [
                {
                    "seed": row[0],
                    "grid": row[1],
                    "step_size": row[2],
                    "status": row[3],
                    "curve": json.loads(row[4]),
                    "metadata": json.loads(row[5]) if row[5] else {},
                }
                for row in cursor.fetchall()
            ]

    def clear_run(self, run_id: str):
        """Remove a run and its members"""
        with self.get_connection() as conn:
            conn.execute("DELETE FROM members WHERE run_id = ?", (run_id,))
            conn.execute("DELETE FROM runs WHERE run_id = ?", (run_id,))
            conn.commit()


# Singleton instance
_db_manager = None


def get_database_manager(db_path: str = None) -> DatabaseManager:
    """Get singleton database manager instance; a different path replaces it"""
    global _db_manager
    if _db_manager is None or (db_path and _db_manager.db_path != db_path):
        _db_manager = DatabaseManager(db_path)
    return _db_manager

