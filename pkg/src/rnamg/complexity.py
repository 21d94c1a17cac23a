"""Work-unit accounting.

One work unit (WU) is the cost of a single SpMV with the finest-level
matrix, i.e. ``|A_0|`` multiply-adds.  Kernels report raw operation counts
through :func:`charge`; the active :class:`WorkLedger` converts them to WU
and files them under the bucket selected with :func:`ledger_scope`.
"""

from __future__ import annotations

import contextlib
import contextvars
import csv
import io
import json
from dataclasses import dataclass, field

SETUP_BUCKETS = ("Aggregation", "Candidates", "P", "RAP")
BUCKETS = SETUP_BUCKETS + ("SolveOther",)

_active = contextvars.ContextVar("rnamg_ledger", default=None)


@dataclass
class WorkLedger:
    """Cumulative cost in work units, bucketed by setup category."""

    base_nnz: int
    buckets: dict = field(default_factory=lambda: {b: 0.0 for b in BUCKETS})

    def __post_init__(self):
        if self.base_nnz <= 0:
            raise ValueError("base_nnz must be positive")

    def add(self, bucket: str, ops: float) -> None:
        if bucket not in self.buckets:
            raise KeyError(f"unknown bucket {bucket!r}")
        if ops < 0:
            raise ValueError("negative operation count")
        self.buckets[bucket] += ops / self.base_nnz

    def total(self) -> float:
        return sum(self.buckets.values())

    def setup_total(self) -> float:
        return sum(self.buckets[b] for b in SETUP_BUCKETS)

    def snapshot(self) -> dict:
        return dict(self.buckets)


@contextlib.contextmanager
def ledger_scope(ledger: WorkLedger | None, bucket: str):
    """Route every :func:`charge` call inside the block to ``ledger[bucket]``."""
    token = _active.set(None if ledger is None else (ledger, bucket))
    try:
        yield ledger
    finally:
        _active.reset(token)


@contextlib.contextmanager
def bucket(name: str):
    """Switch bucket on the currently active ledger (no-op without one)."""
    cur = _active.get()
    token = _active.set(None if cur is None else (cur[0], name))
    try:
        yield
    finally:
        _active.reset(token)


def charge(ops: float) -> None:
    cur = _active.get()
    if cur is not None:
        cur[0].add(cur[1], float(ops))


def active_ledger() -> WorkLedger | None:
    cur = _active.get()
    return None if cur is None else cur[0]


def operator_complexity(H) -> float:
    """Sum of nonzeros over all levels relative to the finest level."""
    nnz = [lvl.A.nnz for lvl in H.levels]
    return sum(nnz) / nnz[0]


def cycle_complexity(H, nu_pre: int = 1, nu_post: int = 1) -> float:
    """Work units of one V(nu_pre, nu_post) cycle.

    Each non-coarsest level pays ``(nu_pre + nu_post + 1) |A_l|`` for
    relaxation and the residual plus ``|P_l| + |R_l|`` for the transfers.
    The coarsest direct solve is excluded.
    """
    base = H.levels[0].A.nnz
    total = 0
    for lvl in H.levels[:-1]:
        total += (nu_pre + nu_post + 1) * lvl.A.nnz + lvl.P.nnz + lvl.R.nnz
    return total / base


def setup_report(H) -> dict:
    """Per-bucket setup cost (WU) and their sum under ``"Total SC"``."""
    row = {b: H.ledger.buckets[b] for b in SETUP_BUCKETS}
    row["Total SC"] = sum(row.values())
    return row


TABLE1_COLUMNS = ("prefilter", "postfilter", "SC", "OC", "CC", "rho", "iterations")
TABLE2_COLUMNS = ("prefilter", "postfilter") + SETUP_BUCKETS + ("Total SC",)


def _fmt(v):
    if v is None:
        return "--"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps(list(rows), indent=2, sort_keys=True)
