from typing import Any, List, Optional

import numpy as np
from pydantic import BaseModel, field_validator


def _to_builtin(v):
    if isinstance(v, (np.generic, np.ndarray)):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _to_builtin(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_to_builtin(x) for x in v]
    return v


class CheckOutcome(BaseModel):
    id: str
    passed: bool
    measured: Any = None
    detail: str = ""

    @field_validator("measured", mode="before")
    @classmethod
    def _plain(cls, v):
        return _to_builtin(v)


class VerifyReport(BaseModel):
    seed: int
    passed: bool
    checks: List[CheckOutcome]

    @property
    def failed(self) -> List[str]:
        return [c.id for c in self.checks if not c.passed]


class SampleSummary(BaseModel):
    seed: int
    length: int
    eps: float
    valid: bool
    near_ideal_fraction: float
    clashes: int
    radius_of_gyration: float
    wall_s: float
    total_pair_updates: int
    pdb_file: str
    trajectory_file: Optional[str] = None


class ChainTokens(BaseModel):
    chain: str
    length: int
    tokens: str
