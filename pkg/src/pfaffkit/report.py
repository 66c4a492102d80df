"""Check reports shared by every verification routine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def clean(value: Any) -> Any:
    """Convert to JSON-safe builtins; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if value is None or isinstance(value, str):
        return value
    return str(value)


@dataclass
class CheckReport:
    """Verdict of one check plus whatever numbers back it up."""

    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    items: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        out = {"name": self.name, "passed": bool(self.passed),
               "metrics": clean(self.metrics)}
        if self.items:
            out["items"] = clean(self.items)
        if self.message:
            out["message"] = self.message
        return out

    def __bool__(self):
        return bool(self.passed)

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        bits = []
        for k, v in self.metrics.items():
            if isinstance(v, float):
                bits.append(f"{k}={v:.3g}")
            elif isinstance(v, (int, str, bool)):
                bits.append(f"{k}={v}")
        tail = f" ({', '.join(bits)})" if bits else ""
        msg = f" - {self.message}" if self.message else ""
        return f"[{flag}] {self.name}{tail}{msg}"


def numeric_rank(M: np.ndarray, rel_tol: float = 1e-8) -> int:
    """Count singular values above rel_tol * sigma_max."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))
