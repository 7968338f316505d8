"""Vote table consolidation and majority voting."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError, ContractError
from .parser import ResponseTable


@dataclass
class VoteTable:
    """Per-package verdicts aligned with ``model_ids``; None is an empty cell."""

    model_ids: list[str]
    rows: dict[str, list[bool | None]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.model_ids:
            raise ContractError("a vote table needs at least one model")
        n = len(self.model_ids)
        for name, cells in self.rows.items():
            if len(cells) != n:
                raise ContractError(f"row {name!r} has {len(cells)} cells, expected {n}")

    @property
    def n(self) -> int:
        return len(self.model_ids)

    def true_votes(self, package: str) -> int:
        return sum(v is True for v in self.rows[package])

    def column(self, model_id: str) -> dict[str, bool | None]:
        i = self.model_ids.index(model_id)
        return {p: cells[i] for p, cells in self.rows.items()}

    def subset(self, model_ids: Sequence[str]) -> VoteTable:
        idx = [self.model_ids.index(m) for m in model_ids]
        return VoteTable(list(model_ids), {p: [c[i] for i in idx] for p, c in self.rows.items()})


@dataclass(frozen=True)
class MajorityDecision:
    package: str
    true_votes: int
    decision: bool
    threshold: int


def majority_threshold(n: int) -> int:
    return n // 2 + 1


def merge(tables: Iterable[ResponseTable]) -> VoteTable:
    tables = list(tables)
    ids = [t.model_id for t in tables]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate model ids in merge: {ids}")
    packages = sorted({p for t in tables for p in t.rows})
    rows = {}
    for p in packages:
        cells = []
        for t in tables:
            r = t.rows.get(p)
            cells.append(None if r is None else r.cryptographic_relevance)
        rows[p] = cells
    return VoteTable(ids, rows)


def filter_complete(table: VoteTable) -> tuple[VoteTable, int]:
    kept = {p: c for p, c in table.rows.items() if all(v is not None for v in c)}
    return VoteTable(list(table.model_ids), kept), len(table.rows) - len(kept)


def incomplete_packages(table: VoteTable) -> list[str]:
    return [p for p, c in table.rows.items() if any(v is None for v in c)]


def majority_vote(votes: Sequence[bool], n: int, package: str = "") -> MajorityDecision:
    if len(votes) != n:
        raise ContractError(f"expected {n} votes, got {len(votes)}")
    if any(v is None for v in votes):
        raise ContractError(f"empty vote cell for {package!r}; filter the table first")
    k = sum(bool(v) for v in votes)
    t = majority_threshold(n)
    return MajorityDecision(package, k, k >= t, t)


def decide_all(table: VoteTable) -> dict[str, MajorityDecision]:
    if table.n % 2 == 0:
        warnings.warn(
            f"even ensemble size {table.n}: ties resolve to not relevant", stacklevel=2
        )
    return {p: majority_vote(c, table.n, p) for p, c in table.rows.items()}


def _cell(v: bool | None) -> str:
    return "" if v is None else ("True" if v else "False")


def write_consolidated_csv(table: VoteTable) -> str:
    """Consolidated table of a complete vote table, with vote count and majority."""
    decisions = decide_all(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["package", *table.model_ids, "true_votes", "majority"])
    for p, cells in table.rows.items():
        d = decisions[p]
        w.writerow([p, *map(_cell, cells), d.true_votes, _cell(d.decision)])
    return buf.getvalue()


def read_consolidated_csv(text: str) -> VoteTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    model_ids = header[1:-2]
    rows = {}
    for rec in reader:
        rows[rec[0]] = [None if c == "" else c == "True" for c in rec[1 : 1 + len(model_ids)]]
    return VoteTable(model_ids, rows)
