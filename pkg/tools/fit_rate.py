#!/usr/bin/env python3
# tools/fit_rate.py
#
# Purpose:
#   Fit the log-log convergence rate of a convergence.csv table written by
#   the convergence-M / convergence-N / convergence-S scenarios.
#
# Output:
#   - stdout: ONLY the fitted slope (e.g. -0.51)
#   - stderr: the rows used for the fit
#
# Notes:
#   For the S axis pass --total-particles N; the fit is then taken against
#   sqrt(1/S - 1/N) instead of S.

from __future__ import annotations

import argparse
import os
import sys
from typing import Any, List, Optional

import numpy as np
import pandas as pd

# --- Make repo root importable ---
_REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if _REPO_ROOT not in sys.path:
    sys.path.insert(0, _REPO_ROOT)


def _redirect_logs_to_stderr() -> None:
    from rich.console import Console
    import utils.logger as flock_logger

    flock_logger.cons = Console(file=sys.stderr)


_redirect_logs_to_stderr()

from core.errors import DomainError  # noqa: E402
from core.scenarios import fit_rate  # noqa: E402


def eprint(*args: Any) -> None:
    print(*args, file=sys.stderr)


def die(msg: str, code: int = 2) -> None:
    eprint(f"[fit_rate] ERROR: {msg}")
    raise SystemExit(code)


def main(argv: Optional[List[str]] = None) -> int:
    p = argparse.ArgumentParser(description="Log-log slope of a convergence table (stdout=slope).")
    p.add_argument("table", help="convergence.csv (columns: axis, value, error, stderr)")
    p.add_argument("--total-particles", dest="N", type=int, default=None, help="N for the S-axis abscissa")
    args = p.parse_args(argv)

    try:
        df = pd.read_csv(args.table)
    except (OSError, pd.errors.ParserError) as e:
        die(f"cannot read {args.table}: {e}")

    missing = {"value", "error"} - set(df.columns)
    if missing:
        die(f"{args.table} lacks column(s): {', '.join(sorted(missing))}")

    x = df["value"].to_numpy(dtype=float)
    if args.N is not None:
        x = np.sqrt(1.0 / x - 1.0 / args.N)

    for xi, yi in zip(x, df["error"]):
        eprint(f"[fit_rate] x={xi:.6g} error={yi:.6g}")

    try:
        slope = fit_rate(x, df["error"].to_numpy(dtype=float))
    except DomainError as e:
        die(str(e))

    print(f"{slope:.6f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
