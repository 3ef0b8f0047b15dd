"""CSV and JSON writers for tables and reports.

Floats are written with 17 significant digits so doubles round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int,)):
        return str(value)
    try:
        return f"{float(value):.17g}"
    except (TypeError, ValueError):
        return str(value)


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if hasattr(obj, "item"):
        return _jsonable(obj.item())
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def observed_rates(N: Sequence[int], errors: Sequence[float]) -> list:
    """Observed orders ``log(e_{k-1}/e_k) / log(N_k/N_{k-1})``; the first entry is NaN."""
    rates = [math.nan]
    for k in range(1, len(N)):
        e0, e1 = errors[k - 1], errors[k]
        if e0 > 0 and e1 > 0:
            rates.append(math.log(e0 / e1) / math.log(N[k] / N[k - 1]))
        else:
            rates.append(math.nan)
    return rates


@dataclass
class ConvergenceTable:
    """Errors per resolution with observed rates, one column per error measure."""

    N: list
    errors: dict
    meta: dict = field(default_factory=dict)

    def rates(self, name: str) -> list:
        return observed_rates(self.N, self.errors[name])

    def min_rate(self, name: str) -> float:
        r = [v for v in self.rates(name)[1:] if not math.isnan(v)]
        return min(r) if r else math.nan

    def header(self) -> list:
        cols = ["N"]
        for name in self.errors:
            cols += [name, f"{name}_rate"]
        return cols

    def rows(self):
        rates = {name: self.rates(name) for name in self.errors}
        for k, n in enumerate(self.N):
            row = [n]
            for name, errs in self.errors.items():
                row += [errs[k], rates[name][k]]
            yield row

    def to_csv(self, path) -> Path:
        return write_csv(path, self.header(), self.rows())
