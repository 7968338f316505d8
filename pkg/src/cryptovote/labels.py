"""Ground-truth label storage and the terminal labelling session.

Labels live in an append-only CSV; when a package appears more than once the
last row wins, so relabelling never rewrites history.
"""

from __future__ import annotations

import csv
import io
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, TextIO

from .errors import BadInputError

HEADER = ["package", "label", "note", "source"]
SOURCES = ("manual", "imported")


@dataclass(frozen=True)
class GroundTruthLabel:
    package: str
    label: bool
    note: str = ""
    source: str = "manual"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown label source {self.source!r}")


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("true", "1", "yes", "y"):
        return True
    if v in ("false", "0", "no", "n"):
        return False
    raise BadInputError(f"cannot read {text!r} as a label")


def read_labels(text: str) -> dict[str, GroundTruthLabel]:
    labels: dict[str, GroundTruthLabel] = {}
    for row in csv.DictReader(io.StringIO(text)):
        if not row.get("package"):
            continue
        labels[row["package"]] = GroundTruthLabel(
            row["package"],
            _parse_bool(row["label"]),
            row.get("note") or "",
            row.get("source") or "manual",
        )
    return labels


def load_labels(path: str | Path) -> dict[str, GroundTruthLabel]:
    path = Path(path)
    if not path.exists():
        return {}
    return read_labels(path.read_text(encoding="utf-8"))


def import_labels(path: str | Path) -> dict[str, GroundTruthLabel]:
    """Read an external labels CSV; every entry is tagged as imported."""
    return {
        p: GroundTruthLabel(p, lab.label, lab.note, "imported")
        for p, lab in load_labels(path).items()
    }


def append_labels(path: str | Path, labels: Iterable[GroundTruthLabel]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(HEADER)
        for lab in labels:
            w.writerow([lab.package, "True" if lab.label else "False", lab.note, lab.source])
        fh.flush()
        os.fsync(fh.fileno())


def truth_map(labels: Mapping[str, GroundTruthLabel]) -> dict[str, bool]:
    return {p: lab.label for p, lab in labels.items()}


def label_session(
    sample: Iterable[str],
    existing: Mapping[str, GroundTruthLabel],
    store: str | Path,
    details: Mapping[str, object] | None = None,
    verdicts: Mapping[str, Mapping[str, bool | None]] | None = None,
    reveal_verdicts: bool = False,
    input_fn: Callable[[str], str] = input,
    out: TextIO | None = None,
) -> dict[str, GroundTruthLabel]:
    """Ask for a label on every sampled package that has none yet.

    Answers are y/n/s(kip)/q(uit). Each confirmed label is appended to
    ``store`` immediately, so quitting or crashing loses nothing already
    answered. ``details`` maps package names to PackageRecord-like objects;
    model verdicts stay hidden unless ``reveal_verdicts`` is set.
    """
    out = out or sys.stdout
    labels = dict(existing)
    pending = [p for p in sample if p not in labels]
    for i, pkg in enumerate(pending, 1):
        rec = (details or {}).get(pkg)
        print(f"\n[{i}/{len(pending)}] {pkg}", file=out)
        if rec is not None:
            print(f"  description: {getattr(rec, 'description', '') or '(none)'}", file=out)
            deps = ", ".join(getattr(rec, "dependencies", ())) or "(none)"
            print(f"  dependencies: {deps}", file=out)
        if reveal_verdicts and verdicts and pkg in verdicts:
            shown = ", ".join(f"{m}={v}" for m, v in verdicts[pkg].items())
            print(f"  model verdicts: {shown}", file=out)
        while True:
            try:
                answer = input_fn("  cryptographically relevant? [y/n/s/q] ").strip().lower()
            except EOFError:
                answer = "q"
            if answer in ("y", "n", "s", "q"):
                break
        if answer == "q":
            break
        if answer == "s":
            continue
        lab = GroundTruthLabel(pkg, answer == "y", "", "manual")
        append_labels(store, [lab])
        labels[pkg] = lab
    return labels
