"""Pass/fail records produced by the audit routines."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any


@dataclass
class AuditRecord:
    """One audited check.

    ``margin`` is the measured quantity that decides the check. For
    equality-type checks (symmetry, normalisation) it is the worst
    deviation; for inequality checks it is the slack ``rhs - lhs``.
    """

    check: str
    params: dict[str, Any]
    margin: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "check": self.check,
            "params": _jsonable(self.params),
            "margin": _jsonable(self.margin),
            "pass": bool(self.passed),
        }


@dataclass
class AuditReport:
    records: list[AuditRecord] = field(default_factory=list)

    def add(self, check: str, margin: float, passed: bool, **params: Any) -> AuditRecord:
        rec = AuditRecord(check, params, float(margin), bool(passed))
        self.records.append(rec)
        return rec

    def extend(self, other: "AuditReport") -> "AuditReport":
        self.records.extend(other.records)
        return self

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self) -> list[AuditRecord]:
        return [r for r in self.records if not r.passed]

    def find(self, check: str) -> list[AuditRecord]:
        return [r for r in self.records if r.check == check]

    def to_list(self) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.records]

    def to_json(self, **kw: Any) -> str:
        return json.dumps(self.to_list(), **kw)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _jsonable(x: Any) -> Any:
    # numpy scalars/arrays and non-finite floats are not JSON-native
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
    return x
