"""Command-line pipeline over a run directory.

Each subcommand reads upstream artifacts from the run directory, checks them
against the manifest, writes its own artifacts and records them.
"""

from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import json
import io
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .ensemble import (
    filter_complete,
    incomplete_packages,
    majority_vote,
    merge,
    read_consolidated_csv,
    write_consolidated_csv,
)
from .errors import BadInputError, ConfigError, CryptovoteError, TransportFailure
from .evaluation import (
    metrics,
    majority_predictions,
    select_ensemble,
    stratified_kfold_cv,
    stratified_sample,
)
from .gateway import MockProfile, backend_for, mock_truth, resolve_endpoint, run_queries
from .ingest import dedupe, parse_package_export, read_package_list, write_package_list
from .labels import GroundTruthLabel, append_labels, import_labels, label_session, load_labels, truth_map
from .manifest import Manifest, run_lock
from .parser import (
    ModelTally,
    ResponseTable,
    batch_parse,
    read_response_csv,
    repair_and_parse,
    write_response_csv,
)
from .promptgen import load_template_set, render, template_for
from .votestats import analyze, betabinom_probs, binomial_probs

log = logging.getLogger("cryptovote")

PACKAGES = "packages.json"
CORPUS = "corpus_summary.json"
RESPONSES = "responses"
TALLY = "responses/tally.json"
VOTES = "votes.csv"
VOTES_ALL = "votes_all.csv"
DISCARDED = "discarded.txt"
AGGREGATE = "aggregate.json"
STATS = "stats.json"
STATS_CELLS = "stats_cells.csv"
SAMPLE = "sample.json"
LABELS = "labels.csv"
EVALUATION = "evaluation.json"
SELECTION = "selection.json"
CV = "cv.json"
SUMMARY = "summary.json"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _slug(model_id: str) -> str:
    return re.sub(r"[^\w.\-]", "_", model_id)


def _response_path(run: Path, model_id: str) -> Path:
    return run / RESPONSES / f"{_slug(model_id)}.csv"


def _raw_path(run: Path, model_id: str) -> Path:
    return run / RESPONSES / "raw" / f"{_slug(model_id)}.jsonl"


def _query_params(cfg: RunConfig, templates) -> str:
    blob = {
        "models": [m for m in cfg.to_json()["models"]],
        "templates": {t.template_id: t.body for t in templates.values()},
        "strict_parse": cfg.strict_parse,
        "dependency_cap": cfg.dependency_cap,
        "mock": cfg.to_json()["mock"],
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.run = Path(cfg.run_dir)
        self.manifest = Manifest(self.run)
        self._templates = None

    @property
    def templates(self):
        if self._templates is None:
            self._templates = load_template_set(self.cfg.templates_dir)
        return self._templates

    def params(self) -> dict[str, str]:
        return {"query": _query_params(self.cfg, self.templates)}

    def require(self, *names: str | Path) -> None:
        self.manifest.require([self.run / n for n in names], self.params())

    def record(self, stage, inputs, outputs, params=None):
        self.manifest.record(
            stage,
            [self.run / p for p in inputs],
            [self.run / p for p in outputs],
            self.cfg.digest(),
            params,
        )

    def _parse_fn(self):
        return functools.partial(repair_and_parse, strict=self.cfg.strict_parse)

    def votes(self):
        self.require(VOTES)
        return read_consolidated_csv((self.run / VOTES).read_text(encoding="utf-8"))

    def truth(self, table) -> dict[str, bool]:
        self.require(LABELS)
        labels = load_labels(self.run / LABELS)
        unknown = sorted(p for p in labels if p not in table.rows)
        if unknown:
            raise BadInputError(f"labels for packages absent from the vote table: {unknown[:10]}")
        if not labels:
            raise BadInputError("no labels recorded; run the label stage")
        return truth_map(labels)

    # -- stages ---------------------------------------------------------

    def ingest(self, export: Path) -> dict:
        try:
            text = Path(export).read_text(encoding="utf-8")
        except OSError as exc:
            raise BadInputError(f"cannot read export {export}: {exc}") from None
        records, summary = parse_package_export(text)
        packages = dedupe(records)
        _write(self.run / PACKAGES, write_package_list(packages))
        _write(self.run / CORPUS, _dump(summary.__dict__))
        export_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()
        self.record("ingest", [], [PACKAGES, CORPUS], params=export_hash)
        return summary.__dict__

    def query(self, only_failed: bool = False) -> dict:
        self.manifest.require([self.run / PACKAGES])
        packages = read_package_list((self.run / PACKAGES).read_text(encoding="utf-8"))
        cfg = self.cfg
        backends = {m.model_id: backend_for(m, cfg.mock) for m in cfg.models}

        existing: dict[str, ResponseTable] = {}
        raw_existing: dict[str, dict[str, dict]] = {}
        if only_failed:
            self.manifest.require([self.run / DISCARDED])
            failed = set((self.run / DISCARDED).read_text(encoding="utf-8").split())
            for m in cfg.models:
                path = _response_path(self.run, m.model_id)
                self.manifest.require([path])
                existing[m.model_id] = read_response_csv(m.model_id, path.read_text(encoding="utf-8"))
                raw_existing[m.model_id] = _read_raw(_raw_path(self.run, m.model_id))
            targets = {
                m.model_id: [
                    p for p in packages
                    if p.name in failed and existing[m.model_id].rows.get(p.name) is None
                ]
                for m in cfg.models
            }
        else:
            targets = {m.model_id: list(packages) for m in cfg.models}

        jobs = []
        for m in cfg.models:
            template = template_for(self.templates, m.template_id)
            for pkg in targets[m.model_id]:
                jobs.append((m, render(template, pkg, cfg.dependency_cap)))
        log.info("querying %d (model, package) pairs", len(jobs))
        outcomes = run_queries(jobs, backends, self._parse_fn(), cfg.max_in_flight)
        if outcomes and all(o.transport_error for o in outcomes):
            raise TransportFailure(f"all {len(outcomes)} queries failed: {outcomes[0].transport_error}")

        new_tables, _ = batch_parse(outcomes, strict=cfg.strict_parse)
        outputs = []
        tallies = []
        for m in cfg.models:
            table = ResponseTable(m.model_id)
            raw = raw_existing.get(m.model_id, {})
            fresh = new_tables.get(m.model_id, ResponseTable(m.model_id))
            old = existing.get(m.model_id, ResponseTable(m.model_id))
            for o in outcomes:
                if o.model_id == m.model_id:
                    raw[o.package_name] = o.to_json()
            for pkg in packages:
                table.rows[pkg.name] = fresh.rows[pkg.name] if pkg.name in fresh.rows else old.rows.get(pkg.name)
            outputs.append(_write(_response_path(self.run, m.model_id), write_response_csv(table)))
            raw_lines = "".join(json.dumps(raw[p.name], sort_keys=True) + "\n" for p in packages if p.name in raw)
            outputs.append(_write(_raw_path(self.run, m.model_id), raw_lines))
            tallies.append(ModelTally(m.model_id, table.valid, table.invalid))
        outputs.append(_write(self.run / TALLY, _dump([t.to_json() for t in tallies])))
        self.record(
            "query",
            [PACKAGES],
            [p.relative_to(self.run) for p in outputs],
            params=self.params()["query"],
        )
        errors = sum(o.transport_error is not None for o in outcomes)
        return {"queried": len(outcomes), "transport_errors": errors, "tally": [t.to_json() for t in tallies]}

    def aggregate(self) -> dict:
        paths = [_response_path(self.run, m.model_id) for m in self.cfg.models]
        self.require(PACKAGES, *[p.relative_to(self.run) for p in paths])
        tables = [
            read_response_csv(m.model_id, p.read_text(encoding="utf-8"))
            for m, p in zip(self.cfg.models, paths)
        ]
        universe = [p.name for p in read_package_list((self.run / PACKAGES).read_text(encoding="utf-8"))]
        for t in tables:
            for name in universe:
                t.rows.setdefault(name, None)
        table = merge(tables)
        complete, discarded = filter_complete(table)
        incomplete = incomplete_packages(table)
        _write(self.run / VOTES_ALL, _votes_all_csv(table))
        _write(self.run / VOTES, write_consolidated_csv(complete))
        _write(self.run / DISCARDED, "".join(p + "\n" for p in incomplete))
        total = len(table.rows)
        summary = {
            "total_packages": total,
            "complete": len(complete.rows),
            "discarded": discarded,
            "error_rate": discarded / total if total else 0.0,
            "models": list(table.model_ids),
        }
        _write(self.run / AGGREGATE, _dump(summary))
        self.record(
            "aggregate",
            [PACKAGES, *[p.relative_to(self.run) for p in paths]],
            [VOTES, VOTES_ALL, DISCARDED, AGGREGATE],
        )
        return summary

    def stats(self) -> dict:
        table = self.votes()
        report = analyze(table, self.cfg.significance)
        _write(self.run / STATS, _dump(report))
        _write(self.run / STATS_CELLS, _cells_csv(report))
        self.record("stats", [VOTES], [STATS, STATS_CELLS])
        return report

    def sample(self) -> dict:
        table = self.votes()
        seed = self.cfg.seeds["sample"]
        s = stratified_sample(table, self.cfg.per_stratum, seed)
        out = {
            "seed": seed,
            "per_stratum": self.cfg.per_stratum,
            "packages": s.packages,
            "strata": {str(k): v for k, v in s.strata.items()},
            "shortfall": {str(k): v for k, v in s.shortfall.items()},
        }
        _write(self.run / SAMPLE, _dump(out))
        self.record("sample", [VOTES], [SAMPLE])
        return out

    def label(self, import_file=None, from_mock=False, reveal=False, input_fn=input, out=None) -> dict:
        self.require(SAMPLE, VOTES)
        sample = json.loads((self.run / SAMPLE).read_text(encoding="utf-8"))["packages"]
        store = self.run / LABELS
        existing = load_labels(store)
        if import_file is not None:
            imported = import_labels(import_file)
            new = [lab for p, lab in imported.items() if existing.get(p) != lab]
            append_labels(store, new)
        elif from_mock:
            profile = self._mock_profile()
            new = [
                GroundTruthLabel(p, mock_truth(profile, p), "synthetic truth", "imported")
                for p in sample
                if p not in existing
            ]
            append_labels(store, new)
        else:
            packages = {
                p.name: p for p in read_package_list((self.run / PACKAGES).read_text(encoding="utf-8"))
            }
            table = self.votes()
            verdicts = {p: dict(zip(table.model_ids, c)) for p, c in table.rows.items()}
            label_session(sample, existing, store, packages, verdicts, reveal, input_fn, out)
        if not store.exists():
            append_labels(store, [])
        labels = load_labels(store)
        self.record("label", [SAMPLE], [LABELS])
        missing = [p for p in sample if p not in labels]
        return {"labelled": len(labels), "sample": len(sample), "remaining": len(missing)}

    def _mock_profile(self) -> MockProfile:
        seeds = set()
        for m in self.cfg.models:
            endpoint = resolve_endpoint(m)
            if endpoint.startswith("mock:"):
                seeds.add(int(endpoint[5:] or 0))
        if len(seeds) != 1:
            raise ConfigError("synthetic labels need every mock model to share one mock seed")
        return replace(self.cfg.mock, seed=seeds.pop())

    def evaluate(self) -> dict:
        table = self.votes()
        truth = self.truth(table)
        packages = sorted(truth)
        per_model = {}
        for m in table.model_ids:
            col = table.column(m)
            cm, ms = metrics({p: col[p] for p in packages}, truth)
            per_model[m] = {"confusion": cm.__dict__, "metrics": ms.to_json()}
        cm, ms = metrics(majority_predictions(table, packages), truth)
        out = {
            "n_labelled": len(truth),
            "per_model": per_model,
            "majority": {"confusion": cm.__dict__, "metrics": ms.to_json()},
        }
        _write(self.run / EVALUATION, _dump(out))
        self.record("evaluate", [VOTES, LABELS], [EVALUATION])
        return out

    def select(self) -> dict:
        table = self.votes()
        truth = self.truth(table)
        ranked = select_ensemble(table, truth, self.cfg.k_members, self.cfg.weights)
        out = {
            "k_members": self.cfg.k_members,
            "weights": {"w_r": self.cfg.weights.w_r, "w_s": self.cfg.weights.w_s},
            "winner": list(ranked[0].members),
            "candidates": [c.to_json() for c in ranked],
        }
        _write(self.run / SELECTION, _dump(out))
        self.record("select", [VOTES, LABELS], [SELECTION])
        return out

    def cv(self) -> dict:
        table = self.votes()
        truth = self.truth(table)
        report = stratified_kfold_cv(
            table, truth, self.cfg.k_folds, self.cfg.k_members, self.cfg.weights, self.cfg.seeds["cv"]
        )
        out = report.to_json()
        out["seed"] = self.cfg.seeds["cv"]
        _write(self.run / CV, _dump(out))
        self.record("cv", [VOTES, LABELS], [CV])
        return out

    def report(self) -> dict:
        inputs = [CORPUS, TALLY, AGGREGATE, STATS, EVALUATION, SELECTION, CV, VOTES]
        self.require(*inputs)
        load = lambda name: json.loads((self.run / name).read_text(encoding="utf-8"))
        selection = load(SELECTION)
        table = read_consolidated_csv((self.run / VOTES).read_text(encoding="utf-8"))
        members = selection["winner"]
        sub = table.subset(members)
        relevant = [p for p, c in sub.rows.items() if majority_vote(c, sub.n, p).decision]
        summary = {
            "corpus": load(CORPUS),
            "response_quality": load(TALLY),
            "aggregate": load(AGGREGATE),
            "statistics": load(STATS),
            "evaluation": load(EVALUATION),
            "selection": {k: selection[k] for k in ("k_members", "weights", "winner")},
            "cross_validation": {k: v for k, v in load(CV).items() if k in ("k_folds", "mean", "std", "selected_per_fold")},
            "classification": {
                "ensemble": members,
                "packages_classified": len(sub.rows),
                "relevant_count": len(relevant),
                "relevant_packages": relevant,
            },
        }
        _write(self.run / SUMMARY, _dump(summary))
        self.record("report", inputs, [SUMMARY])
        return summary


def _read_raw(path: Path) -> dict[str, dict]:
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["package_name"]] = rec
    return out


def _votes_all_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["package", *table.model_ids])
    for p, cells in table.rows.items():
        w.writerow([p, *("" if v is None else ("True" if v else "False") for v in cells)])
    return buf.getvalue()


def _cells_csv(report: dict) -> str:
    counts = report["histogram"]["counts"]
    n, N = report["histogram"]["n"], report["histogram"]["N"]
    binom = binomial_probs(n, report["binomial"]["p_hat"])
    bb = report.get("betabinomial", {})
    beta = betabinom_probs(n, bb["alpha"], bb["beta"]) if "alpha" in bb else [None] * (n + 1)
    lines = ["k,observed,binomial_expected,betabinomial_expected"]
    for k in range(n + 1):
        b = "" if beta[k] is None else f"{N * beta[k]:.6f}"
        lines.append(f"{k},{counts[k]},{N * binom[k]:.6f},{b}")
    return "\n".join(lines) + "\n"


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cryptovote", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", required=True, type=Path, help="run config (JSON or TOML)")
    p.add_argument("--run-dir", type=Path, help="override the configured run directory")
    p.add_argument("--strict-parse", action="store_true", help="accept only True/False relevance values")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="normalize and deduplicate a package export")
    s.add_argument("export", type=Path)
    s = sub.add_parser("query", help="query every model for every package")
    s.add_argument("--only-failed", action="store_true", help="re-query only the discarded packages")
    sub.add_parser("aggregate", help="merge model answers and apply the majority vote")
    sub.add_parser("stats", help="vote distribution fits and design effect")
    sub.add_parser("sample", help="stratified sample for manual labelling")
    s = sub.add_parser("label", help="label the sample (interactive unless a source is given)")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--import", dest="import_file", type=Path, help="labels CSV to import")
    g.add_argument("--from-mock", action="store_true", help="use the mock backend's latent truth")
    s.add_argument("--reveal-verdicts", action="store_true")
    sub.add_parser("evaluate", help="metrics per model and for the majority vote")
    sub.add_parser("select", help="rank all k-model ensembles")
    sub.add_parser("cv", help="stratified k-fold cross-validation of ensemble selection")
    sub.add_parser("report", help="bundle all results into one run summary")
    return p


def main(argv=None, input_fn=input) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.run_dir is not None:
            cfg.run_dir = args.run_dir
        if args.strict_parse:
            cfg.strict_parse = True
        with run_lock(cfg.run_dir):
            pipe = Pipeline(cfg)
            cmd = args.command
            if cmd == "ingest":
                result = pipe.ingest(args.export)
            elif cmd == "query":
                result = pipe.query(only_failed=args.only_failed)
            elif cmd == "label":
                result = pipe.label(args.import_file, args.from_mock, args.reveal_verdicts, input_fn)
            else:
                result = getattr(pipe, cmd)()
    except CryptovoteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    if cmd in ("ingest", "query", "aggregate", "label"):
        print(json.dumps(result, sort_keys=True))
    else:
        print(f"{cmd}: wrote {cfg.run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
