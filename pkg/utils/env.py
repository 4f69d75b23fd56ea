# utils/env.py
#
# Environment switches, read once at import:
# - FLOCKUQ_OUT_DIR   default output root (falls back to <cwd>/output)
# - FLOCKUQ_LOG_DIR   log directory (falls back to <repo root>/logs)
# - FLOCKUQ_THREADS   default worker count for sweeps / replicas
# - FLOCKUQ_DEBUG     mirror debug lines on the console

from __future__ import annotations

import os
from typing import Optional


def _env_true(name: str) -> bool:
    v = (os.environ.get(name) or "").strip().lower()
    return v in ("1", "true", "yes", "y", "on")


def _env_path(name: str) -> Optional[str]:
    v = (os.environ.get(name) or "").strip()
    if not v:
        return None
    return os.path.abspath(os.path.expanduser(v))


def _env_int(name: str, default: int) -> int:
    v = (os.environ.get(name) or "").strip()
    try:
        return max(1, int(v))
    except ValueError:
        return default


DEBUG = _env_true("FLOCKUQ_DEBUG")
LOG_DIR = _env_path("FLOCKUQ_LOG_DIR")
OUT_DIR = _env_path("FLOCKUQ_OUT_DIR")
THREADS = _env_int("FLOCKUQ_THREADS", 1)


def output_root() -> str:
    return OUT_DIR or os.path.join(os.getcwd(), "output")
