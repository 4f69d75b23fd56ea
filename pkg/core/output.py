"""
Run directory bookkeeping: tables, grid dumps and the JSON manifest.

Every file a scenario writes goes through a RunOutput so the manifest can
list it. CSV tables are written by pandas with a fixed float format, which
keeps reruns with the same seed byte-identical.
"""

from __future__ import annotations

import json
import os
import time
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from utils import env, logger

FLOAT_FORMAT = "%.12e"


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def resolve_output_dir(directory: Optional[str], scenario: str, seed: int) -> str:
    """
    Explicit directory wins; otherwise <output root>/<scenario>_seed<seed>,
    with the root taken from FLOCKUQ_OUT_DIR or <cwd>/output.
    """
    out = directory or os.path.join(env.output_root(), f"{scenario}_seed{seed}")
    os.makedirs(out, exist_ok=True)
    return out


class RunOutput:
    def __init__(self, directory: str, scenario: str, seed: int, version: str):
        self.directory = directory
        self.scenario = scenario
        self.seed = seed
        self.version = version
        self.files: List[str] = []
        self.diagnostics: Dict[str, Any] = {}
        self.started = _timestamp()
        self._t0 = time.perf_counter()

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def _record(self, name: str):
        if name not in self.files:
            self.files.append(name)
        logger.debug(f"Wrote {self.path(name)}")

    def table(self, name: str, rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
        df = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
        df.to_csv(self.path(name), index=False, float_format=FLOAT_FORMAT)
        self._record(name)
        return self.path(name)

    def dump(self, name: str, writer: Callable[[str], None]) -> str:
        """Hand a path to a module-level dump function (density, field, ensemble)."""
        writer(self.path(name))
        self._record(name)
        return self.path(name)

    def note(self, **diagnostics: Any):
        self.diagnostics.update(diagnostics)

    def manifest(self, config: Dict[str, Any]) -> str:
        data = {
            "scenario": self.scenario,
            "version": self.version,
            "seed": self.seed,
            "config": config,
            "started": self.started,
            "finished": _timestamp(),
            "wall_seconds": round(time.perf_counter() - self._t0, 3),
            "files": list(self.files),
            "diagnostics": self.diagnostics,
        }
        with open(self.path("manifest.json"), "w", encoding="utf8") as fp:
            json.dump(data, fp, indent=4, default=_jsonable)
        return self.path("manifest.json")


def _jsonable(obj):
    # numpy scalars and arrays inside diagnostics
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
