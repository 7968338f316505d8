"""Tolerant parsing of model answers into relevance verdicts.

Model output is frequently almost-JSON: wrapped in prose or code fences,
missing a closing brace, using bare keys or typographic quotes. The repair
pipeline below runs in a fixed order and only touches text that fails strict
decoding, so well-formed answers pass through unchanged.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

MAX_SYNTHESIZED_CLOSERS = 2

FAILURE_CATEGORIES = (
    "no-json-found",
    "unbalanced",
    "missing-field",
    "unrecognized-relevance-value",
    "empty-response",
)

FIELD_ALIASES = {
    "cryptographic_relevance": "cryptographic_relevance",
    "crypto_relevance": "cryptographic_relevance",
    "cryptographic-relevance": "cryptographic_relevance",
    "relevance": "cryptographic_relevance",
    "package": "package",
    "name": "package",
    "package_name": "package",
    "justification": "justification",
}

_TRUE = {"true"}
_FALSE = {"false"}
_LENIENT_TRUE = {"yes"}
_LENIENT_FALSE = {"no"}

# opening delimiter -> accepted closing delimiters
_QUOTE_PAIRS = {
    "“": "”“",
    "”": "”“",
    "„": "”“",
    "‘": "’‘",
    "’": "’‘",
    "'": "'",
}
_THINK = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)
_NUMBER = re.compile(r"^-?(0|[1-9]\d*)(\.\d+)?([eE][+-]?\d+)?$")
_CONTROL = re.compile(r"[\x00-\x1f\x7f]")


@dataclass(frozen=True)
class ParsedResponse:
    package: str
    cryptographic_relevance: bool
    justification: str = ""
    repairs: tuple[str, ...] = field(default=(), compare=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "package": self.package,
                "cryptographic_relevance": self.cryptographic_relevance,
                "justification": self.justification,
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class ParseFailure:
    category: str
    detail: str
    raw_excerpt: str = ""

    def __post_init__(self):
        if self.category not in FAILURE_CATEGORIES:
            raise ValueError(f"unknown failure category {self.category!r}")


ParseResult = Union[ParsedResponse, ParseFailure]


def _extract_object(text: str):
    """Return (object_text, closers_added, failure_category) for the first '{'."""
    start = text.find("{")
    if start < 0:
        return None, 0, "no-json-found"
    stack = []
    in_string = escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in "{[":
            stack.append("}" if ch == "{" else "]")
        elif ch in "}]":
            if not stack or stack[-1] != ch:
                return None, 0, "unbalanced"
            stack.pop()
            if not stack:
                return text[start : i + 1], 0, None
    if len(stack) > MAX_SYNTHESIZED_CLOSERS:
        return None, 0, "unbalanced"
    body = text[start:].rstrip()
    if in_string:
        body += '"'
    return body + "".join(reversed(stack)), len(stack), None


def _normalize_tokens(obj: str, repairs: list[str]) -> str:
    """Quote bare keys and values, convert typographic or single quotes, drop trailing commas."""
    out = []
    i, n = 0, len(obj)
    while i < n:
        ch = obj[i]
        if ch == '"':
            j = i + 1
            while j < n:
                if obj[j] == "\\":
                    j += 2
                    continue
                if obj[j] == '"':
                    break
                j += 1
            out.append(obj[i : j + 1])
            i = j + 1
        elif ch in _QUOTE_PAIRS:
            closers = _QUOTE_PAIRS[ch]
            j = i + 1
            while j < n and obj[j] not in closers:
                j += 1
            out.append(json.dumps(obj[i + 1 : j], ensure_ascii=False))
            repairs.append("single-quotes" if ch == "'" else "smart-quotes")
            i = j + 1
        elif ch == ",":
            j = i + 1
            while j < n and obj[j].isspace():
                j += 1
            if j < n and obj[j] in "}]":
                repairs.append("trailing-comma")
            else:
                out.append(ch)
            i += 1
        elif ch.isspace() or ch in "{}[]:":
            out.append(ch)
            i += 1
        else:
            j = i
            while j < n and obj[j] not in ',:{}[]"\n':
                j += 1
            token = obj[i:j].strip()
            k = j
            while k < n and obj[k] in " \t":
                k += 1
            is_key = k < n and obj[k] == ":"
            if is_key:
                out.append(json.dumps(token))
                repairs.append("quoted-keys")
            elif token in ("true", "false", "null") or _NUMBER.match(token):
                out.append(token)
            else:
                out.append(json.dumps(token, ensure_ascii=False))
                repairs.append("quoted-values")
            i = j
    return "".join(out)


def _coerce_relevance(value, strict: bool):
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        v = value.strip().lower()
        if v in _TRUE or (not strict and v in _LENIENT_TRUE):
            return True
        if v in _FALSE or (not strict and v in _LENIENT_FALSE):
            return False
    return None


def repair_and_parse(raw: str | None, expected_package: str = "", strict: bool = False) -> ParseResult:
    """Parse one model answer, applying repairs only where strict decoding fails.

    ``strict`` disables the yes/no relevance extension.
    """
    excerpt = (raw or "")[:200]
    if raw is None or not raw.strip():
        return ParseFailure("empty-response", "model returned no text", excerpt)

    repairs: list[str] = []
    text = raw.strip()
    if _THINK.search(text):
        text = _THINK.sub("", text).strip()
        repairs.append("stripped-reasoning")

    obj_text, closers, failure = _extract_object(text)
    if failure:
        return ParseFailure(failure, "no balanced JSON object in response", excerpt)
    if closers:
        repairs.append(f"closed-{closers}-delimiters")
    start = text.find("{")
    outside = text[:start] + ("" if closers else text[start + len(obj_text) :])
    if outside.strip():
        repairs.append("stripped-prose")

    try:
        data = json.loads(obj_text)
    except ValueError:
        try:
            data = json.loads(_normalize_tokens(obj_text, repairs))
        except ValueError as exc:
            category = "unbalanced" if closers else "no-json-found"
            return ParseFailure(category, f"object not decodable after repair: {exc}", excerpt)
    if not isinstance(data, dict):
        return ParseFailure("no-json-found", "decoded value is not an object", excerpt)

    fields = {}
    for key, value in data.items():
        canonical = FIELD_ALIASES.get(str(key).strip().lower())
        if canonical and canonical not in fields:
            if canonical != key:
                repairs.append("field-alias")
            fields[canonical] = value

    if "cryptographic_relevance" not in fields:
        return ParseFailure("missing-field", "cryptographic_relevance absent", excerpt)
    relevance = _coerce_relevance(fields["cryptographic_relevance"], strict)
    if relevance is None:
        return ParseFailure(
            "unrecognized-relevance-value",
            f"cannot read {fields['cryptographic_relevance']!r} as a verdict",
            excerpt,
        )

    package = fields.get("package")
    if not isinstance(package, str) or not package.strip():
        if not expected_package:
            return ParseFailure("missing-field", "package absent and no expected name", excerpt)
        package = expected_package
        repairs.append("filled-package")
    justification = fields.get("justification")
    if justification is None:
        justification = ""
    elif not isinstance(justification, str):
        justification = json.dumps(justification, ensure_ascii=False)

    return ParsedResponse(package.strip(), relevance, justification, tuple(dict.fromkeys(repairs)))


@dataclass
class ResponseTable:
    """Parsed answers of one model; ``None`` marks an invalid row."""

    model_id: str
    rows: dict[str, ParsedResponse | None] = field(default_factory=dict)

    @property
    def valid(self) -> int:
        return sum(r is not None for r in self.rows.values())

    @property
    def invalid(self) -> int:
        return sum(r is None for r in self.rows.values())


@dataclass(frozen=True)
class ModelTally:
    model: str
    valid: int
    invalid: int

    @property
    def error_rate(self) -> float:
        total = self.valid + self.invalid
        return self.invalid / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "valid": self.valid,
            "invalid": self.invalid,
            "error_rate": self.error_rate,
            "error_rate_pct": format_error_rate(self.error_rate),
        }


def format_error_rate(rate: float) -> str:
    return f"{rate * 100:.2f}%"


def batch_parse(outcomes: Iterable, strict: bool = False):
    """Parse query outcomes into per-model tables plus a per-model tally.

    Returns ``(tables, tallies)`` keyed by model id in first-seen order.
    """
    tables: dict[str, ResponseTable] = {}
    for o in outcomes:
        table = tables.setdefault(o.model_id, ResponseTable(o.model_id))
        if o.transport_error:
            table.rows[o.package_name] = None
            continue
        result = repair_and_parse(o.raw_text, o.package_name, strict=strict)
        table.rows[o.package_name] = result if isinstance(result, ParsedResponse) else None
    tallies = {m: ModelTally(m, t.valid, t.invalid) for m, t in tables.items()}
    return tables, tallies


def _clean(text: str) -> str:
    return _CONTROL.sub(" ", text)


def write_response_csv(table: ResponseTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["package", "cryptographic_relevance", "justification"])
    for name, r in table.rows.items():
        if r is None:
            w.writerow([name, "", ""])
        else:
            w.writerow([name, "True" if r.cryptographic_relevance else "False", _clean(r.justification)])
    return buf.getvalue()


def read_response_csv(model_id: str, text: str) -> ResponseTable:
    table = ResponseTable(model_id)
    for row in csv.DictReader(io.StringIO(text)):
        rel = row.get("cryptographic_relevance", "")
        if rel in ("True", "False"):
            table.rows[row["package"]] = ParsedResponse(row["package"], rel == "True", row.get("justification") or "")
        else:
            table.rows[row["package"]] = None
    return table
