"""Constraint-violation records shared by the validator and the flow checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Violation:
    constraint: str  # constraint tag, e.g. "eq28a"
    t: int | None
    entity: str
    residual: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


class ViolationReport(list):
    """A list of violations; empty means feasible."""

    @property
    def feasible(self) -> bool:
        return len(self) == 0

    def by_constraint(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self:
            out[v.constraint] = out.get(v.constraint, 0) + 1
        return dict(sorted(out.items()))

    def tagged(self, constraint: str) -> "ViolationReport":
        return ViolationReport(v for v in self if v.constraint == constraint)

    def to_json(self) -> str:
        return json.dumps([v.to_dict() for v in self], indent=2)
