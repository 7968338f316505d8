import json
from pathlib import Path

import pytest

from cryptovote.ensemble import VoteTable

DATA = Path(__file__).parent / "data"
MODELS = ["phi", "deepseek", "llama", "mistral", "gpt4all"]

# acceptance result lines, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def make_table(rows, model_ids=None):
    rows = {p: list(v) for p, v in rows.items()}
    n = len(next(iter(rows.values()))) if rows else len(model_ids)
    return VoteTable(model_ids or [f"m{i}" for i in range(n)], rows)


@pytest.fixture
def write_config(tmp_path):
    """Write a mock-backed run config and return its path."""

    def _write(**overrides):
        cfg = {
            "run_dir": "run",
            "per_stratum": 10,
            "seeds": {"sample": 11, "cv": 5},
            "mock": {"base_true_rate": 0.3, "rho": 0.5, "malformed_rate": 0.02},
            "models": [{"model_id": m, "endpoint": "mock:7"} for m in MODELS],
        }
        cfg.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        return path

    return _write


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
