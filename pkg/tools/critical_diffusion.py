#!/usr/bin/env python3
# tools/critical_diffusion.py
#
# Purpose:
#   Locate the diffusion strength at which the polarized stationary state
#   disappears, i.e. the root of G'(0; D) = 1, for a given self-propulsion alpha.
#
# Output:
#   - stdout: ONLY the critical D (e.g. 0.4569...)
#   - stderr: human-readable details (bracket, G'(0) at both ends)

from __future__ import annotations

import argparse
import os
import sys
from typing import Any, List, Optional


# --- Make repo root importable ---
_REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if _REPO_ROOT not in sys.path:
    sys.path.insert(0, _REPO_ROOT)


def _redirect_logs_to_stderr() -> None:
    from rich.console import Console
    import utils.logger as flock_logger

    flock_logger.cons = Console(file=sys.stderr)


_redirect_logs_to_stderr()

from core.errors import FlockError  # noqa: E402
from core.reference import critical_diffusion, slope_at_zero  # noqa: E402


def eprint(*args: Any) -> None:
    print(*args, file=sys.stderr)


def die(msg: str, code: int = 2) -> None:
    eprint(f"[critical_diffusion] ERROR: {msg}")
    raise SystemExit(code)


def main(argv: Optional[List[str]] = None) -> int:
    p = argparse.ArgumentParser(description="Critical diffusion of the homogeneous flocking model (stdout=D_c).")
    p.add_argument("--alpha", type=float, default=1.0, help="self-propulsion strength (default: 1)")
    p.add_argument("--lo", type=float, default=1e-3, help="lower end of the D bracket")
    p.add_argument("--hi", type=float, default=5.0, help="upper end of the D bracket")
    args = p.parse_args(argv)

    try:
        Dc = critical_diffusion(args.alpha, (args.lo, args.hi))
    except FlockError as e:
        die(str(e), getattr(e, "exit_code", 2))

    eprint(f"[critical_diffusion] alpha={args.alpha} bracket=[{args.lo}, {args.hi}]")
    eprint(f"[critical_diffusion] G'(0) at lo={slope_at_zero(args.alpha, args.lo):.6f} hi={slope_at_zero(args.alpha, args.hi):.6f}")

    print(f"{Dc:.10f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
