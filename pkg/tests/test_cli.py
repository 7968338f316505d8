import json
import shutil

import pytest

from cryptovote.cli import main
from cryptovote.labels import load_labels
from cryptovote.manifest import file_hash
from cryptovote.synthetic import synthetic_export

STAGES = [["query"], ["aggregate"], ["stats"], ["sample"], ["label", "--from-mock"],
          ["evaluate"], ["select"], ["cv"], ["report"]]


def run(cfg, *args, **kw):
    return main(["--config", str(cfg), *args], **kw)


def full_run(cfg, export):
    assert run(cfg, "ingest", str(export)) == 0
    for stage in STAGES:
        assert run(cfg, *stage) == 0, stage


def artifact_hashes(run_dir):
    return {
        p.relative_to(run_dir).as_posix(): file_hash(p)
        for p in sorted(run_dir.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


@pytest.fixture
def export(tmp_path):
    path = tmp_path / "export.tsv"
    path.write_text(synthetic_export(120, 5, seed=2))
    return path


def test_full_pipeline_and_rerun_is_stable(write_config, export, tmp_path):
    cfg = write_config()
    full_run(cfg, export)
    run_dir = tmp_path / "run"
    first = artifact_hashes(run_dir)
    full_run(cfg, export)
    assert artifact_hashes(run_dir) == first
    assert not (run_dir / ".lock").exists()

    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["corpus"] == {"total_raw": 125, "total_deduplicated": 120, "dropped_malformed": 0}
    assert len(summary["selection"]["winner"]) == 3
    assert summary["classification"]["packages_classified"] == summary["aggregate"]["complete"]


def test_stats_report_shape(write_config, export, tmp_path):
    cfg = write_config()
    assert run(cfg, "ingest", str(export)) == 0
    for stage in STAGES[:3]:
        assert run(cfg, *stage) == 0
    rep = json.loads((tmp_path / "run" / "stats.json").read_text())
    assert rep["histogram"]["n"] == 5 and len(rep["histogram"]["counts"]) == 6
    assert 0 < rep["binomial"]["p_hat"] < 1
    for key in ("binomial_gof", "betabinomial_gof"):
        assert {"chi2", "df", "p_value", "critical_value", "rejected", "merged_cells"} <= set(rep[key]) or "error" in rep[key]
    de = rep["design_effect"]
    assert de["n_eff"] == pytest.approx(5 / de["deff"])
    cells = (tmp_path / "run" / "stats_cells.csv").read_text().splitlines()
    assert cells[0] == "k,observed,binomial_expected,betabinomial_expected" and len(cells) == 7


def test_missing_export_is_bad_input(write_config, tmp_path, capsys):
    assert run(write_config(), "ingest", str(tmp_path / "nope.tsv")) == 2
    assert "cannot read export" in capsys.readouterr().err


def test_empty_export_is_bad_input(write_config, tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("# nothing\n")
    assert run(write_config(), "ingest", str(path)) == 2


def test_bad_config_is_bad_input(write_config, export):
    assert run(write_config(colour="blue"), "ingest", str(export)) == 2


def test_tampered_artifact_is_stale(write_config, export, tmp_path, capsys):
    cfg = write_config()
    assert run(cfg, "ingest", str(export)) == 0
    assert run(cfg, "query") == 0
    assert run(cfg, "aggregate") == 0
    votes = tmp_path / "run" / "votes.csv"
    votes.write_text(votes.read_text().replace("True", "False", 1))
    assert run(cfg, "stats") == 4
    assert "votes.csv changed" in capsys.readouterr().err


def test_stage_order_enforced(write_config, export):
    cfg = write_config()
    assert run(cfg, "ingest", str(export)) == 0
    assert run(cfg, "aggregate") == 4


def test_reingest_invalidates_responses(write_config, export, tmp_path):
    cfg = write_config()
    assert run(cfg, "ingest", str(export)) == 0
    assert run(cfg, "query") == 0
    other = tmp_path / "other.tsv"
    other.write_text(synthetic_export(60, 0, seed=9))
    assert run(cfg, "ingest", str(other)) == 0
    assert run(cfg, "aggregate") == 4


def test_template_change_is_stale(write_config, export, tmp_path):
    templates = tmp_path / "templates"
    templates.mkdir()
    (templates / "default.prompt").write_text("Classify {{name}}\n{{output_contract}}\n")
    cfg = write_config(templates_dir="templates")
    assert run(cfg, "ingest", str(export)) == 0
    assert run(cfg, "query") == 0
    assert run(cfg, "aggregate") == 0
    (templates / "default.prompt").write_text("Please classify {{name}}\n{{output_contract}}\n")
    assert run(cfg, "aggregate") == 4


def test_all_transport_failures_exit_3(write_config, export):
    models = [{"model_id": m, "endpoint": "http://127.0.0.1:1", "request_timeout": 1, "max_attempts": 1}
              for m in ("a", "b", "c")]
    cfg = write_config(models=models)
    assert run(cfg, "ingest", str(export)) == 0
    assert run(cfg, "query") == 3


def test_only_failed_requeries_discarded_pairs(write_config, export, tmp_path, capsys):
    models = [{"model_id": m, "endpoint": "mock:3", "max_attempts": 1} for m in ("a", "b", "c")]
    cfg = write_config(models=models, mock={"malformed_rate": 0.6})
    assert run(cfg, "ingest", str(export)) == 0
    assert run(cfg, "query") == 0
    assert run(cfg, "aggregate") == 0
    capsys.readouterr()
    run_dir = tmp_path / "run"
    discarded = (run_dir / "discarded.txt").read_text().split()
    votes_all = (run_dir / "votes_all.csv").read_text().splitlines()[1:]
    empty_cells = sum(line.split(",")[1:].count("") for line in votes_all)
    assert discarded and empty_cells >= len(discarded)

    assert run(cfg, "query", "--only-failed") == 0
    result = json.loads(capsys.readouterr().out)
    assert result["queried"] == empty_cells
    assert run(cfg, "aggregate") == 0


def test_label_import_and_interactive(write_config, export, tmp_path):
    cfg = write_config()
    assert run(cfg, "ingest", str(export)) == 0
    for stage in (["query"], ["aggregate"], ["sample"]):
        assert run(cfg, *stage) == 0
    sample = json.loads((tmp_path / "run" / "sample.json").read_text())["packages"]
    answers = iter(["y", "n", "q"])
    assert run(cfg, "label", input_fn=lambda _: next(answers)) == 0
    labels = load_labels(tmp_path / "run" / "labels.csv")
    assert [labels[p].label for p in sample[:2]] == [True, False]
    ext = tmp_path / "ext.csv"
    ext.write_text("package,label\n" + "".join(f"{p},false\n" for p in sample[2:]))
    assert run(cfg, "label", "--import", str(ext)) == 0
    labels = load_labels(tmp_path / "run" / "labels.csv")
    assert set(labels) == set(sample)
    assert labels[sample[-1]].source == "imported"
    assert run(cfg, "evaluate") == 0


def test_locked_run_dir_refused(write_config, export, tmp_path):
    cfg = write_config()
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / ".lock").write_text("123")
    assert run(cfg, "ingest", str(export)) == 1
    shutil.rmtree(tmp_path / "run")
    assert run(cfg, "ingest", str(export)) == 0
