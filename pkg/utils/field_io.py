import hashlib
import json
import logging
import os
import platform
import sys
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from config import Config
from utils.exceptions import GridError
from utils.grid_fields import GridShape, QPField

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"
COMPONENT_NAMES = {0: ["value"], 2: ["xx", "yy", "sqrt2_xy"], 4: [f"B{i}{j}" for i in range(3) for j in range(3)]}


class RunDirectory:
    """Writes the outputs of one run into a directory: fields, tables, reports and the manifest"""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(self.path, exist_ok=True)
        self.files: List[str] = []

    def file(self, name: str) -> str:
        """Absolute path of a file inside the run directory, creating subdirectories"""
        full = os.path.join(self.path, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def _track(self, name: str) -> str:
        if name not in self.files:
            self.files.append(name)
        return self.file(name)

    def save_field(self, name: str, f: QPField, units: str = "") -> str:
        """NPY array shaped (ny, nx, nq, ncomp) plus a JSON sidecar describing it"""
        if not f.is_finite():
            raise GridError(f"refusing to write non-finite field {name}")
        path = self._track(f"{name}.npy")
        np.save(path, np.ascontiguousarray(f.data, dtype="<f8"))
        sidecar = {
            "grid": f.shape.to_dict(),
            "rank": f.rank,
            "components": COMPONENT_NAMES[f.rank],
            "units": units,
        }
        self.save_json(f"{name}.json", sidecar)
        return path

    def save_array(self, name: str, array: np.ndarray, meta: Optional[Dict[str, Any]] = None) -> str:
        path = self._track(f"{name}.npy")
        np.save(path, np.ascontiguousarray(array))
        if meta is not None:
            self.save_json(f"{name}.json", meta)
        return path

    def save_table(self, name: str, frame: pd.DataFrame) -> str:
        """CSV with a fixed float format and line terminator so reruns compare byte-wise"""
        path = self._track(f"{name}.csv")
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return path

    def append_table(self, name: str, rows: Iterable[Dict[str, Any]]) -> str:
        """Adds rows to a CSV; the first call of this run replaces a file left by an earlier run"""
        fresh = f"{name}.csv" not in self.files
        frame = pd.DataFrame(list(rows))
        path = self._track(f"{name}.csv")
        frame.to_csv(path, mode="w" if fresh else "a", header=fresh, index=False, float_format=FLOAT_FORMAT,
                     lineterminator="\n")
        return path

    def save_json(self, name: str, data: Any) -> str:
        path = self._track(name)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2, sort_keys=True, default=_json_default)
            handle.write("\n")
        return path

    def save_vtk(self, name: str, grid: GridShape, cell_data: Dict[str, np.ndarray]) -> str:
        """Legacy ASCII STRUCTURED_POINTS file with one scalar per pixel per entry"""
        path = self._track(f"{name}.vtk")
        lines = [
            "# vtk DataFile Version 3.0",
            name,
            "ASCII",
            "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1",
            "ORIGIN 0 0 0",
            f"SPACING {grid.hx:.12e} {grid.hy:.12e} 1",
            f"CELL_DATA {grid.n_pixels}",
        ]
        for key, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (grid.ny, grid.nx):
                raise GridError(f"VTK cell data {key} shaped {values.shape}, expected {(grid.ny, grid.nx)}")
            lines.append(f"SCALARS {key} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(" ".join(f"{v:.12e}" for v in row) for row in values)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")
        return path

    def write_manifest(self, config: Dict[str, Any], seed: int, wall_time: float,
                       extra: Optional[Dict[str, Any]] = None) -> str:
        manifest = {
            "app": Config.APP_NAME,
            "version": Config.APP_VERSION,
            "config": config,
            "config_hash": config_hash(config),
            "seed": seed,
            "wall_time_s": wall_time,
            "created": datetime.now().isoformat(timespec="seconds"),
            "versions": {
                "python": sys.version.split()[0],
                "platform": platform.platform(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
            },
            "files": sorted(self.files),
        }
        if extra:
            manifest.update(extra)
        return self.save_json("manifest.json", manifest)


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return str(value)


def calculate_hash(content: bytes) -> str:
    """SHA-256 hex digest"""
    return hashlib.sha256(content).hexdigest()


def config_hash(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_json_default)
    return calculate_hash(canonical.encode("utf-8"))


def load_field(path: str) -> QPField:
    """Read a field written by RunDirectory.save_field"""
    base, _ = os.path.splitext(path)
    with open(base + ".json", "r", encoding="utf-8") as handle:
        sidecar = json.load(handle)
    grid = GridShape.from_dict(sidecar["grid"])
    return QPField(grid, int(sidecar["rank"]), np.load(base + ".npy"))


def load_table(path: str) -> pd.DataFrame:
    return pd.read_csv(path)
