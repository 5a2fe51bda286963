"""Task-outcome ledger and the delimited report surfaces derived from it."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import TaskOutcome

# Ledger outcome codes (TaskOutcome values plus the end-of-run censor class).
SUCCESS = int(TaskOutcome.SUCCESS)
FAILED_DEADLINE = int(TaskOutcome.FAILED_DEADLINE)
FAILED_NO_RESOURCE = int(TaskOutcome.FAILED_NO_RESOURCE)
CENSORED = 4

_CLASSES = (SUCCESS, FAILED_DEADLINE, FAILED_NO_RESOURCE, CENSORED)

TIMESERIES_HEADER = "bucket_start,town,created,succeeded,success_rate,censored"
SUMMARY_HEADER = "policy,uav_count,seed,town,success_rate"
COMPARISON_HEADER = "policy,uav_count,town,success_rate"


class IoError(OSError):
    pass


@dataclass
class MetricsLedger:
    """Per-town, time-bucketed record of task outcomes.

    Tasks are bucketed by creation time. Census counts per bucket hold
    (success, deadline failure, no-resource failure, censored); the created
    total is their sum. A censored task ended the run still in service with
    its budget not yet exceeded and is excluded from rate denominators.
    """

    bucket: float
    duration: float
    policy: str = "none"
    uav_count: int = 0
    seed: int = 0
    counts: dict[str, np.ndarray] = field(default_factory=dict)   # (n_buckets, 4)
    raw: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.bucket <= 0 or self.duration <= 0:
            raise ValueError("bucket and duration must be > 0")
        self.n_buckets = max(1, math.ceil(self.duration / self.bucket - 1e-9))

    def _town_counts(self, town: str) -> np.ndarray:
        if town not in self.counts:
            self.counts[town] = np.zeros((self.n_buckets, 4), dtype=np.int64)
        return self.counts[town]

    def record(self, town: str, created_at: float, outcome: int) -> None:
        """Append a single classified task (test- and small-run path)."""
        if outcome not in _CLASSES:
            raise ValueError(f"cannot record outcome {outcome}")
        b = min(int(created_at // self.bucket), self.n_buckets - 1)
        self._town_counts(town)[b, _CLASSES.index(outcome)] += 1

    def record_town_arrays(self, town: str, created: np.ndarray, outcome: np.ndarray,
                           keep: Optional[dict[str, np.ndarray]] = None) -> None:
        """Bulk-append one town's outcome columns (engine path)."""
        table = self._town_counts(town)
        if len(created) == 0:
            if keep is not None:
                self.raw[town] = keep
            return
        bidx = np.minimum((created // self.bucket).astype(np.int64), self.n_buckets - 1)
        for col, cls in enumerate(_CLASSES):
            sel = bidx[outcome == cls]
            if len(sel):
                table[:, col] += np.bincount(sel, minlength=self.n_buckets)
        if keep is not None:
            self.raw[town] = keep

    # -- queries ------------------------------------------------------------

    def towns(self) -> list[str]:
        return sorted(self.counts)

    def _bucket_span(self, interval) -> tuple[int, int]:
        if interval is None:
            return 0, self.n_buckets
        t0, t1 = interval
        i0 = t0 / self.bucket
        i1 = t1 / self.bucket
        if abs(i0 - round(i0)) > 1e-9 or abs(i1 - round(i1)) > 1e-9:
            raise ValueError(f"interval {interval} must align to the {self.bucket}s buckets")
        return max(0, int(round(i0))), min(self.n_buckets, int(round(i1)))

    def outcome_totals(self, town: Optional[str] = None,
                       interval=None) -> dict[str, int]:
        i0, i1 = self._bucket_span(interval)
        towns = [town] if town is not None else self.towns()
        agg = np.zeros(4, dtype=np.int64)
        for tid in towns:
            if tid in self.counts:
                agg += self.counts[tid][i0:i1].sum(axis=0)
        return {
            "created": int(agg.sum()),
            "succeeded": int(agg[0]),
            "failed_deadline": int(agg[1]),
            "failed_no_resource": int(agg[2]),
            "censored": int(agg[3]),
        }

    def success_rate(self, town: Optional[str] = None, interval=None) -> float:
        """succeeded / (created - censored); vacuously 1.0 with no tasks."""
        t = self.outcome_totals(town, interval)
        denom = t["created"] - t["censored"]
        if denom <= 0:
            return 1.0
        return t["succeeded"] / denom

    def total_created(self) -> int:
        return self.outcome_totals()["created"]

    def summary_rates(self) -> dict[str, float]:
        """Whole-run rate per town plus the task-weighted ALL row."""
        out = {tid: self.success_rate(tid) for tid in self.towns()}
        out["ALL"] = self.success_rate()
        return out

    def timeseries_rows(self) -> list[tuple[float, str, int, int, float, int]]:
        """(bucket_start, town, created, succeeded, rate, censored), sorted."""
        rows = []
        if self.total_created() == 0:
            return rows
        for b in range(self.n_buckets):
            for tid in self.towns():
                c = self.counts[tid][b]
                created = int(c.sum())
                denom = created - int(c[3])
                rate = (int(c[0]) / denom) if denom > 0 else 1.0
                rows.append((b * self.bucket, tid, created, int(c[0]), rate, int(c[3])))
        return rows


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def export_csv(ledger: MetricsLedger, out_dir: str) -> tuple[str, str]:
    """Write timeseries.csv and summary.csv under out_dir; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    ts_path = os.path.join(out_dir, "timeseries.csv")
    lines = [TIMESERIES_HEADER]
    for bucket_start, town, created, succeeded, rate, censored in ledger.timeseries_rows():
        lines.append(f"{bucket_start:.1f},{town},{created},{succeeded},{rate:.6f},{censored}")
    _atomic_write(ts_path, "\n".join(lines) + "\n")

    sm_path = os.path.join(out_dir, "summary.csv")
    lines = [SUMMARY_HEADER]
    rates = ledger.summary_rates()
    for town in sorted(k for k in rates if k != "ALL"):
        lines.append(f"{ledger.policy},{ledger.uav_count},{ledger.seed},{town},{rates[town]:.6f}")
    lines.append(f"{ledger.policy},{ledger.uav_count},{ledger.seed},ALL,{rates['ALL']:.6f}")
    _atomic_write(sm_path, "\n".join(lines) + "\n")
    return ts_path, sm_path


def compare_table(results: dict) -> list[tuple[str, int, str, float]]:
    """Mean success rate across seeds per (policy, uav_count, town incl. ALL).

    Values of `results` may be MetricsLedger instances or plain
    {town_or_ALL: rate} mappings (as recovered from summary.csv files).
    """
    if not results:
        raise ValueError("compare_table needs at least one result")
    cells: dict[tuple[str, int, str], list[float]] = {}
    for (policy, uav_count, _seed), res in results.items():
        rates = res.summary_rates() if isinstance(res, MetricsLedger) else dict(res)
        for town, rate in rates.items():
            cells.setdefault((policy, int(uav_count), town), []).append(float(rate))
    rows = []
    for (policy, uav_count, town) in sorted(cells):
        vals = cells[(policy, uav_count, town)]
        rows.append((policy, uav_count, town, sum(vals) / len(vals)))
    return rows


def export_comparison_csv(rows: list[tuple[str, int, str, float]], path: str) -> str:
    lines = [COMPARISON_HEADER]
    for policy, uav_count, town, rate in rows:
        lines.append(f"{policy},{uav_count},{town},{rate:.6f}")
    _atomic_write(path, "\n".join(lines) + "\n")
    return path
