"""Ground-truth evaluation of models and ensembles.

Metrics whose denominator is zero are reported as None rather than 0, and
candidates lacking recall or specificity drop out of the ranking.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .ensemble import VoteTable, majority_vote
from .errors import ContractError, StratificationError

log = logging.getLogger(__name__)

METRIC_NAMES = ("acc", "spec", "prec", "recall", "f1")
REPORT_HEADERS = {"acc": "Acc", "spec": "Spec", "prec": "Prec", "recall": "Recall", "f1": "F1"}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int | float, den: int | float):
    return num / den if den else None


@dataclass(frozen=True)
class MetricSet:
    acc: float | None = None
    spec: float | None = None
    prec: float | None = None
    recall: float | None = None
    f1: float | None = None

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> MetricSet:
        prec = _ratio(cm.tp, cm.tp + cm.fp)
        recall = _ratio(cm.tp, cm.tp + cm.fn)
        f1 = None
        if prec is not None and recall is not None and prec + recall > 0:
            f1 = 2 * prec * recall / (prec + recall)
        return cls(
            acc=_ratio(cm.tp + cm.tn, cm.total),
            spec=_ratio(cm.tn, cm.tn + cm.fp),
            prec=prec,
            recall=recall,
            f1=f1,
        )

    def to_json(self) -> dict:
        return {REPORT_HEADERS[k]: getattr(self, k) for k in METRIC_NAMES}


@dataclass(frozen=True)
class ScoreWeights:
    w_r: float = 0.7
    w_s: float = 0.3

    def __post_init__(self):
        if abs(self.w_r + self.w_s - 1.0) > 1e-9:
            raise ContractError(f"score weights must sum to 1, got {self.w_r} + {self.w_s}")


def confusion(predictions: Mapping[str, bool], truth: Mapping[str, bool]) -> ConfusionMatrix:
    missing = sorted(p for p in truth if p not in predictions)
    if missing:
        raise ContractError(f"no prediction for {len(missing)} labelled packages: {missing[:10]}")
    tp = fp = tn = fn = 0
    for pkg, label in truth.items():
        pred = predictions[pkg]
        if pred and label:
            tp += 1
        elif pred:
            fp += 1
        elif label:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def metrics(predictions: Mapping[str, bool], truth: Mapping[str, bool]):
    cm = confusion(predictions, truth)
    return cm, MetricSet.from_confusion(cm)


def score(m: MetricSet, weights: ScoreWeights = ScoreWeights()) -> float:
    if m.recall is None or m.spec is None:
        raise ContractError("score needs both recall and specificity")
    return weights.w_r * m.recall + weights.w_s * m.spec


# -- sampling ---------------------------------------------------------------


@dataclass
class StratifiedSample:
    packages: list[str]
    strata: dict[int, list[str]]
    shortfall: dict[int, int] = field(default_factory=dict)


def stratified_sample(table: VoteTable, per_stratum: int, seed: int) -> StratifiedSample:
    """Draw ``per_stratum`` packages uniformly from each true-vote level 0..n."""
    rng = random.Random(seed)
    by_level: dict[int, list[str]] = {k: [] for k in range(table.n + 1)}
    for pkg in sorted(table.rows):
        by_level[table.true_votes(pkg)].append(pkg)
    strata, shortfall, chosen = {}, {}, []
    for k, members in by_level.items():
        if len(members) < per_stratum:
            shortfall[k] = per_stratum - len(members)
            log.warning("stratum %d has %d packages, %d requested", k, len(members), per_stratum)
            picked = list(members)
        else:
            picked = rng.sample(members, per_stratum)
        strata[k] = picked
        chosen.extend(picked)
    return StratifiedSample(chosen, strata, shortfall)


# -- ensemble selection -----------------------------------------------------


@dataclass(frozen=True)
class EnsembleCandidate:
    members: tuple[str, ...]
    metrics: MetricSet
    score: float | None

    def to_json(self) -> dict:
        return {"members": list(self.members), "metrics": self.metrics.to_json(), "score": self.score}


def majority_predictions(table: VoteTable, packages, members: Sequence[str] | None = None):
    idx = range(table.n) if members is None else [table.model_ids.index(m) for m in members]
    preds = {}
    for p in packages:
        votes = [table.rows[p][i] for i in idx]
        preds[p] = majority_vote(votes, len(votes), p).decision
    return preds


def _rank_key(c: EnsembleCandidate):
    f1 = c.metrics.f1 if c.metrics.f1 is not None else -1.0
    return (c.score is None, -(c.score or 0.0), -f1, c.members)


def select_ensemble(
    table: VoteTable,
    truth: Mapping[str, bool],
    k: int,
    weights: ScoreWeights = ScoreWeights(),
) -> list[EnsembleCandidate]:
    """Score every k-subset of models by its majority vote; best first.

    Ties break on higher F1, then on the sorted member names.
    """
    if not truth:
        raise ContractError("ground truth is empty")
    if not 1 <= k <= table.n:
        raise ContractError(f"cannot choose {k} of {table.n} models")
    packages = sorted(truth)
    candidates = []
    for members in itertools.combinations(table.model_ids, k):
        _, m = metrics(majority_predictions(table, packages, members), truth)
        try:
            s = score(m, weights)
        except ContractError:
            log.warning("candidate %s lacks recall or specificity; not ranked", members)
            s = None
        candidates.append(EnsembleCandidate(tuple(sorted(members)), m, s))
    return sorted(candidates, key=_rank_key)


# -- cross-validation -------------------------------------------------------


@dataclass
class CvReport:
    k_folds: int
    per_fold: list[MetricSet]
    mean: MetricSet
    std: MetricSet
    selected_per_fold: list[tuple[str, ...]]
    folds: list[list[str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "k_folds": self.k_folds,
            "per_fold": [m.to_json() for m in self.per_fold],
            "mean": self.mean.to_json(),
            "std": self.std.to_json(),
            "selected_per_fold": [list(s) for s in self.selected_per_fold],
            "folds": self.folds,
        }


def stratified_folds(truth: Mapping[str, bool], k_folds: int, seed: int) -> list[list[str]]:
    """Partition labelled packages into folds balanced by label.

    Each class is shuffled and dealt round-robin; the second class continues
    where the first stopped, so fold sizes differ by at most one.
    """
    pos = sorted(p for p, v in truth.items() if v)
    neg = sorted(p for p, v in truth.items() if not v)
    for name, members in (("relevant", pos), ("not relevant", neg)):
        if len(members) < k_folds:
            raise StratificationError(
                f"class {name!r} has {len(members)} members, fewer than {k_folds} folds"
            )
    rng = random.Random(seed)
    rng.shuffle(pos)
    rng.shuffle(neg)
    folds: list[list[str]] = [[] for _ in range(k_folds)]
    for i, pkg in enumerate(pos + neg):
        folds[i % k_folds].append(pkg)
    return folds


def _aggregate(per_fold: list[MetricSet]):
    means, stds = {}, {}
    for name in METRIC_NAMES:
        vals = [getattr(m, name) for m in per_fold if getattr(m, name) is not None]
        if len(vals) < len(per_fold):
            log.warning("%s undefined in %d folds", name, len(per_fold) - len(vals))
        means[name] = statistics.fmean(vals) if vals else None
        stds[name] = statistics.pstdev(vals) if vals else None
    return MetricSet(**means), MetricSet(**stds)


def stratified_kfold_cv(
    table: VoteTable,
    truth: Mapping[str, bool],
    k_folds: int = 5,
    k_members: int = 3,
    weights: ScoreWeights = ScoreWeights(),
    seed: int = 0,
) -> CvReport:
    """Select the best ensemble on each training split and score it on the held-out fold."""
    folds = stratified_folds(truth, k_folds, seed)
    per_fold, selected = [], []
    for i, held_out in enumerate(folds):
        train = {p: truth[p] for j, f in enumerate(folds) if j != i for p in f}
        best = select_ensemble(table, train, k_members, weights)[0]
        test = {p: truth[p] for p in held_out}
        _, m = metrics(majority_predictions(table, test, best.members), test)
        per_fold.append(m)
        selected.append(best.members)
    mean, std = _aggregate(per_fold)
    return CvReport(k_folds, per_fold, mean, std, selected, [sorted(f) for f in folds])


def required_sample_size(population: int, confidence_z: float = 1.96, margin: float = 0.05) -> int:
    """Cochran sample size with finite-population correction, p = 0.5."""
    n0 = confidence_z**2 * 0.25 / margin**2
    return math.ceil(n0 / (1 + (n0 - 1) / population))
