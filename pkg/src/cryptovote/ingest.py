"""Package export parsing, NEVRA name normalization and deduplication."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, TextIO

from .errors import EmptyCorpusError, NormalizationError

DEFAULT_ARCHES = frozenset(
    {"x86_64", "i686", "aarch64", "armv7hl", "ppc64le", "s390x", "noarch", "src"}
)

_VERSION_HEAD = re.compile(r"^(\d+:)?\d")
_CONTROL = re.compile(r"[\x00-\x1f\x7f]")


@dataclass(frozen=True)
class PackageRecord:
    raw_name: str
    name: str
    version: str | None = None
    description: str = ""
    dependencies: tuple[str, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        d = asdict(self)
        d["dependencies"] = list(self.dependencies)
        return d

    @classmethod
    def from_json(cls, d: dict) -> PackageRecord:
        return cls(
            raw_name=d["raw_name"],
            name=d["name"],
            version=d.get("version"),
            description=d.get("description", ""),
            dependencies=tuple(d.get("dependencies", ())),
        )


@dataclass(frozen=True)
class CorpusSummary:
    total_raw: int
    total_deduplicated: int
    dropped_malformed: int


def split_nevra(raw: str, arches: Iterable[str] = DEFAULT_ARCHES):
    """Split one NEVRA string right-to-left into (name, version, release, arch).

    Missing fields come back as None. The epoch, when present, stays on the
    version ("1:3.2.1"). Unknown arch suffixes are left inside the release.
    """
    arches = frozenset(arches)
    rest = raw.strip()
    arch = None
    head, dot, tail = rest.rpartition(".")
    if dot and head and tail in arches:
        rest, arch = head, tail
    parts = rest.rsplit("-", 2)
    # release must start with a digit too, or "java-21-openjdk" would lose its tail
    if len(parts) == 3 and _VERSION_HEAD.match(parts[1]) and parts[2][:1].isdigit():
        return parts[0], parts[1], parts[2], arch
    return rest, None, None, arch


def normalize_name(raw: str, arches: Iterable[str] = DEFAULT_ARCHES) -> str:
    if raw is None or not raw.strip():
        raise NormalizationError(f"cannot normalize package name {raw!r}")
    arches = frozenset(arches)
    name = raw.strip()
    # A single split can leave another NEVR tail behind, so iterate to a fixed point.
    while True:
        stripped = split_nevra(name, arches)[0]
        if stripped == name:
            break
        name = stripped
    if not name.strip("-._:"):
        raise NormalizationError(f"cannot normalize package name {raw!r}")
    return name


def clean_text(text: str | None) -> str:
    if not text:
        return ""
    return _CONTROL.sub(" ", text)


def _segments(version: str) -> list[str]:
    return [s for s in re.split(r"[.\-]", version) if s != ""]


def _split_epoch(version: str) -> tuple[int, str]:
    m = re.match(r"^(\d+):(.*)$", version)
    return (int(m.group(1)), m.group(2)) if m else (0, version)


def compare_versions(a: str | None, b: str | None) -> int:
    """Three-way version comparison. A missing version loses to any version."""
    if a is None or b is None:
        return (a is not None) - (b is not None)
    ea, a = _split_epoch(a)
    eb, b = _split_epoch(b)
    if ea != eb:
        return 1 if ea > eb else -1
    for x, y in zip(_segments(a), _segments(b)):
        if x.isdigit() and y.isdigit():
            xi, yi = int(x), int(y)
            if xi != yi:
                return 1 if xi > yi else -1
        elif x != y:
            return 1 if x > y else -1
    la, lb = len(_segments(a)), len(_segments(b))
    return (la > lb) - (la < lb)


def _record_order(r1: PackageRecord, r2: PackageRecord) -> int:
    c = compare_versions(r1.version, r2.version)
    if c:
        return c
    # equal versions: stable, input-order independent tie-break
    k1 = (r1.description, r1.dependencies, r1.raw_name)
    k2 = (r2.description, r2.dependencies, r2.raw_name)
    return (k1 > k2) - (k1 < k2)


def dedupe(records: Iterable[PackageRecord]) -> list[PackageRecord]:
    """Keep one record per name, the one carrying the highest version."""
    best: dict[str, PackageRecord] = {}
    for rec in records:
        cur = best.get(rec.name)
        if cur is None or _record_order(rec, cur) > 0:
            best[rec.name] = rec
    return [best[name] for name in sorted(best)]


def _make_record(raw_name, version, description, deps, arches) -> PackageRecord:
    raw_name = (raw_name or "").strip()
    name = normalize_name(raw_name, arches)
    version = (version or "").strip() or None
    if version is None:
        _, v, r, _ = split_nevra(raw_name, arches)
        if v is not None:
            version = f"{v}-{r}"
    if isinstance(deps, str):
        deps = deps.split(",")
    deps = tuple(d.strip() for d in (deps or ()) if d and d.strip())
    return PackageRecord(
        raw_name=raw_name,
        name=name,
        version=version,
        description=clean_text(description),
        dependencies=deps,
    )


def _tsv_entries(text: str):
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) > 4:
            yield None
            continue
        cols += [""] * (4 - len(cols))
        yield cols


def _json_entries(text: str):
    data = json.loads(text)
    if not isinstance(data, list):
        raise EmptyCorpusError("JSON export must be an array of package objects")
    for obj in data:
        if not isinstance(obj, dict):
            yield None
            continue
        yield [
            obj.get("name"),
            obj.get("version"),
            obj.get("description"),
            obj.get("dependencies"),
        ]


def parse_package_export(
    stream: TextIO | str, arches: Iterable[str] = DEFAULT_ARCHES
) -> tuple[list[PackageRecord], CorpusSummary]:
    """Parse a TSV or JSON package export.

    Returns every well-formed record (not yet deduplicated) and a summary
    whose ``total_deduplicated`` counts the distinct normalized names.
    """
    text = stream if isinstance(stream, str) else stream.read()
    arches = frozenset(arches)
    entries = _json_entries(text) if text.lstrip().startswith("[") else _tsv_entries(text)

    records: list[PackageRecord] = []
    total = dropped = 0
    for entry in entries:
        total += 1
        if entry is None:
            dropped += 1
            continue
        raw_name, version, description, deps = entry
        if not isinstance(raw_name, str) or not raw_name.strip():
            dropped += 1
            continue
        if deps is not None and not isinstance(deps, (str, list)):
            dropped += 1
            continue
        try:
            records.append(_make_record(raw_name, version, description, deps, arches))
        except NormalizationError:
            dropped += 1

    if not records:
        raise EmptyCorpusError(f"no well-formed package entries ({dropped} malformed)")
    summary = CorpusSummary(
        total_raw=total,
        total_deduplicated=len({r.name for r in records}),
        dropped_malformed=dropped,
    )
    return records, summary


def write_package_list(records: list[PackageRecord]) -> str:
    return json.dumps([r.to_json() for r in records], indent=2, ensure_ascii=False) + "\n"


def read_package_list(text: str) -> list[PackageRecord]:
    return [PackageRecord.from_json(d) for d in json.loads(text)]
