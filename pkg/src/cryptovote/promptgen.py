"""Prompt templates and rendering.

Templates are plain text files named ``<template_id>.prompt``. Placeholders use
double braces (``{{name}}``) so they never collide with the JSON braces of the
answer skeleton.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, TemplateError
from .ingest import PackageRecord

DEFAULT_TEMPLATE_ID = "default"
NO_DESCRIPTION = "no description available"
DEFAULT_DEPENDENCY_CAP = 64

ANSWER_FIELDS = ("package", "cryptographic_relevance", "justification")
OUTPUT_CONTRACT = json.dumps(
    {
        "package": "<package name>",
        "cryptographic_relevance": "True or False",
        "justification": "<one sentence>",
    }
)

PLACEHOLDERS = frozenset({"name", "version", "description", "dependencies", "output_contract"})
_PLACEHOLDER = re.compile(r"\{\{\s*([^{}]*?)\s*\}\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    output_contract: str = OUTPUT_CONTRACT

    def __post_init__(self):
        found = _PLACEHOLDER.findall(self.body)
        unknown = [p for p in found if p not in PLACEHOLDERS]
        if unknown:
            raise TemplateError(f"unknown placeholder: {unknown[0]}")
        if "name" not in found:
            raise TemplateError(f"template {self.template_id!r} lacks the {{{{name}}}} placeholder")
        try:
            keys = tuple(json.loads(self.output_contract))
        except (ValueError, TypeError) as exc:
            raise TemplateError(f"output contract is not a JSON object: {exc}") from None
        if sorted(keys) != sorted(ANSWER_FIELDS):
            raise TemplateError(f"output contract must name exactly {ANSWER_FIELDS}, got {keys}")


@dataclass(frozen=True)
class RenderedPrompt:
    package_name: str
    model_template_id: str
    text: str


def _defang(value: str) -> str:
    # inserted text must not reintroduce placeholder syntax
    return value.replace("{{", "{ {").replace("}}", "} }")


def format_dependencies(deps, cap: int = DEFAULT_DEPENDENCY_CAP) -> str:
    deps = list(deps)
    if not deps:
        return "none"
    if len(deps) > cap:
        return ", ".join(deps[:cap]) + f" (+{len(deps) - cap} more)"
    return ", ".join(deps)


def render(
    template: PromptTemplate, pkg: PackageRecord, dependency_cap: int = DEFAULT_DEPENDENCY_CAP
) -> RenderedPrompt:
    values = {
        "name": pkg.name,
        "version": pkg.version or "unknown",
        "description": pkg.description.strip() or NO_DESCRIPTION,
        "dependencies": format_dependencies(pkg.dependencies, dependency_cap),
        "output_contract": template.output_contract,
    }

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise TemplateError(f"unknown placeholder: {key}")
        return values[key] if key == "output_contract" else _defang(values[key])

    return RenderedPrompt(pkg.name, template.template_id, _PLACEHOLDER.sub(sub, template.body))


def load_template_set(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load every ``*.prompt`` file in ``directory`` (the bundled set when None)."""
    if directory is None:
        root = resources.files("cryptovote") / "templates"
        files = [(p.name, p.read_text(encoding="utf-8")) for p in root.iterdir()]
    else:
        d = Path(directory)
        if not d.is_dir():
            raise ConfigError(f"templates directory not found: {d}")
        files = [(p.name, p.read_text(encoding="utf-8")) for p in sorted(d.iterdir())]

    templates: dict[str, PromptTemplate] = {}
    for filename, body in sorted(files):
        if not filename.endswith(".prompt"):
            continue
        template_id = filename[: -len(".prompt")].strip().lower()
        if template_id in templates:
            raise ConfigError(f"duplicate template id: {template_id}")
        templates[template_id] = PromptTemplate(template_id, body)

    if not templates:
        raise ConfigError(f"no templates found in {directory}")
    if DEFAULT_TEMPLATE_ID not in templates:
        raise ConfigError(f"templates in {directory} lack a {DEFAULT_TEMPLATE_ID}.prompt")
    return templates


def template_for(templates: dict[str, PromptTemplate], template_id: str | None) -> PromptTemplate:
    if not template_id:
        return templates[DEFAULT_TEMPLATE_ID]
    try:
        return templates[template_id.lower()]
    except KeyError:
        raise ConfigError(f"unknown template id: {template_id}") from None
