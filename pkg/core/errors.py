from __future__ import annotations

from typing import List, Optional


class FlockError(Exception):
    exit_code = 1


class DomainError(FlockError, ValueError):
    pass


class ConfigError(FlockError):
    exit_code = 2

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems) or "invalid configuration")


class NumericalError(FlockError):
    exit_code = 3

    def __init__(
        self,
        msg: str,
        step: Optional[int] = None,
        particle: Optional[int] = None,
        mode: Optional[int] = None,
    ):
        self.step = step
        self.particle = particle
        self.mode = mode

        where = []
        if step is not None:
            where.append(f"step {step}")
        if particle is not None:
            where.append(f"particle {particle}")
        if mode is not None:
            where.append(f"mode {mode}")

        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
