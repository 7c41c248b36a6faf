#!/usr/bin/env python3
"""
ClickCFA - Evaluation and Analytics

Scores (ACC, F1), k-fold cross-validation of a training recipe, the meta-data
usage sweep, the comparison table and the frequent n-gram analytics split by
confusion outcome.
"""

import os
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from assets.baselines import CnnPredictor, NgramPredictor, gram_label, ngram_encode
from assets.cfa_model import CfaPredictor, LabeledSequences, SequenceClassifier, predict_batch, train_plain
from assets.clickstream import ClickSession
from assets.clustering import MetaClusterSet, build_meta_clusters
from assets.config_manager import PRESETS, TrainRecipe, preset
from assets.data_io import Corpus, carve_meta, split_folds, subsample
from assets.errors import InvalidSplitError, ShapeError, UsageError
from assets.meta_learn import meta_train
from assets.neural import ParamStore
from assets.pretrain import expand_corpus, pretrain
from assets.utilities import fold_hash, write_csv

logger = logging.getLogger('clickcfa-eval')

DEFAULT_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)
CONFUSION_SUBSETS = ("CFA", "non-CFA", "TP", "FN", "TN", "FP")
EXTERNAL_METHODS = ("latent-var",)
TABLE_HEADER = ("method", "acc_mean", "acc_std", "f1_mean", "f1_std", "status", "fingerprint")
FOLD_HEADER = ("method", "fold", "acc", "f1", "tp", "fp", "tn", "fn", "test_size", "dropped", "fingerprint")


@dataclass(frozen=True)
class Score:
    acc: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def score(predictions: Sequence[int], labels: Sequence[int], positive_class: int = 1) -> Score:
    """ACC and F1 with `positive_class` as the positive label; F1 is 0 without true positives."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.size} predictions for {labels.size} labels")
    if labels.size == 0:
        raise ShapeError("cannot score an empty prediction set")
    negative = 1 - positive_class
    matrix = confusion_matrix(labels, predictions, labels=[negative, positive_class])
    tn, fp, fn, tp = (int(v) for v in matrix.ravel())
    return Score(
        acc=float(accuracy_score(labels, predictions)),
        f1=float(f1_score(labels, predictions, pos_label=positive_class, zero_division=0)),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


@dataclass
class EvalReport:
    """Per-fold scores of one method with mean and sample standard deviation."""

    method: str
    fingerprint: str
    fold_scores: List[Score] = field(default_factory=list)
    dropped: List[int] = field(default_factory=list)
    meta_sizes: List[int] = field(default_factory=list)
    fold_hash: str = ""

    def _values(self, attr: str) -> np.ndarray:
        return np.array([getattr(s, attr) for s in self.fold_scores], dtype=np.float64)

    def _std(self, attr: str) -> float:
        values = self._values(attr)
        return float(np.std(values, ddof=1)) if values.size > 1 else 0.0

    @property
    def mean_acc(self) -> float:
        return float(self._values("acc").mean())

    @property
    def std_acc(self) -> float:
        return self._std("acc")

    @property
    def mean_f1(self) -> float:
        return float(self._values("f1").mean())

    @property
    def std_f1(self) -> float:
        return self._std("f1")

    def confusion_totals(self) -> Dict[str, int]:
        return {key: int(sum(getattr(s, key) for s in self.fold_scores)) for key in ("tp", "fp", "tn", "fn")}

    def table_row(self) -> list:
        return [self.method, self.mean_acc, self.std_acc, self.mean_f1, self.std_f1, "ok", self.fingerprint]

    def fold_rows(self) -> List[list]:
        return [
            [self.method, fold, s.acc, s.f1, s.tp, s.fp, s.tn, s.fn, s.total, dropped, self.fingerprint]
            for fold, (s, dropped) in enumerate(zip(self.fold_scores, self.dropped))
        ]


@dataclass
class FoldOutcome:
    score: Score
    model: SequenceClassifier
    test: LabeledSequences
    predictions: np.ndarray
    clusters: Optional[MetaClusterSet] = None
    meta_size: int = 0
    train_size: int = 0


def build_model(recipe: TrainRecipe) -> SequenceClassifier:
    if recipe.model == "gru":
        return CfaPredictor(hidden_dim=recipe.hidden_dim, seed=recipe.seed)
    if recipe.model == "cnn":
        return CnnPredictor(seed=recipe.seed)
    return NgramPredictor(recipe.ngram, hidden_dim=recipe.hidden_dim, seed=recipe.seed)


def run_method(
    train_sessions: Sequence[ClickSession],
    test_sessions: Sequence[ClickSession],
    recipe: TrainRecipe,
    meta_usage: float = 1.0,
    out_dir: Optional[str] = None,
    tag: str = "fold0",
    pretrained: Optional[ParamStore] = None
) -> FoldOutcome:
    """
    Train one recipe on the non-test sessions and score it on the test sessions.

    The meta set is always carved from the training sessions, so every method
    trains on the same D_train; only meta recipes use D_meta.

    Args:
        train_sessions: All non-test sessions
        test_sessions: Held-out sessions
        recipe: Method configuration
        meta_usage: Fraction of D_meta kept for meta-learning
        out_dir: Directory for checkpoints and histories
        tag: File name prefix of this run's artifacts
        pretrained: GRU weights to start from instead of pre-training here
    """
    d_train, d_meta = carve_meta(train_sessions, recipe.meta_fraction, seed=recipe.seed)
    model = build_model(recipe)

    if pretrained is not None:
        model.load_pretrained(pretrained)
    elif recipe.pretrain:
        samples, _ = expand_corpus(train_sessions, gap_marker=recipe.gap_marker)
        pre = pretrain(samples, recipe)
        model.load_pretrained(pre.gru_params)
        if out_dir:
            pre.gru_params.save(os.path.join(out_dir, f"{tag}_pretrained_gru.json"))
            write_csv(os.path.join(out_dir, f"{tag}_pretrain_history.csv"), ("epoch", "l_pre"), pre.history)

    train = model.prepare(d_train)
    clusters = None
    used_meta = 0
    if recipe.meta:
        if meta_usage < 1.0:
            d_meta = subsample(d_meta, meta_usage, seed=recipe.seed)
        meta = model.prepare(d_meta)
        used_meta = len(meta)
        if used_meta == 0:
            raise InvalidSplitError(f"meta usage {meta_usage} leaves no meta sessions")
        clusters = build_meta_clusters(
            meta.sessions, meta.labels, recipe.criterion, seed=recipe.seed,
            k_range=range(recipe.k_min, recipe.k_max + 1), n_clusters=recipe.n_clusters,
        )
        meta_result = meta_train(model, train, meta, clusters, recipe)
        if out_dir:
            meta_result.write_history(os.path.join(out_dir, f"{tag}_meta_history.csv"))
            meta_result.net.params.save(os.path.join(out_dir, f"{tag}_weighting_net.json"))
            write_csv(os.path.join(out_dir, f"{tag}_train_history.csv"), ("epoch", "cluster", "loss"), meta_result.epoch_history)
    else:
        result = train_plain(model, train, recipe)
        if out_dir:
            write_csv(
                os.path.join(out_dir, f"{tag}_train_history.csv"), ("epoch", "loss", "acc"),
                [(e, loss, "" if acc is None else acc) for e, loss, acc in result.history],
            )

    test = model.prepare(test_sessions)
    if len(test) == 0:
        raise InvalidSplitError("no test session can be encoded for this model")
    _, predictions = predict_batch(model, test.rows)
    fold_score = score(predictions, test.labels, recipe.positive_class)
    if out_dir:
        model.params.save(os.path.join(out_dir, f"{tag}_model.json"))
    return FoldOutcome(
        score=fold_score, model=model, test=test, predictions=predictions,
        clusters=clusters, meta_size=used_meta, train_size=len(train),
    )


def ensure_folds(corpus: Corpus, recipe: TrainRecipe) -> Corpus:
    if corpus.fold_assignments is None:
        return split_folds(corpus, recipe.folds, seed=recipe.seed, stratify=recipe.stratify)
    return corpus


def cross_validate(
    corpus: Corpus,
    recipe: TrainRecipe,
    out_dir: Optional[str] = None,
    meta_usage: float = 1.0
) -> EvalReport:
    """
    k-fold cross-validation: each fold is the test set once, the rest trains.

    Returns:
        EvalReport: Per-fold scores tagged with the recipe fingerprint and fold hash
    """
    corpus = ensure_folds(corpus, recipe)
    n_folds = max(corpus.fold_assignments) + 1
    report = EvalReport(
        method=recipe.name,
        fingerprint=recipe.fingerprint,
        fold_hash=fold_hash(corpus.fold_assignments, corpus.session_ids()),
    )
    for fold in range(n_folds):
        test_sessions = corpus.fold(fold)
        train_sessions = corpus.outside_fold(fold)
        if {s.session_id for s in test_sessions} & {s.session_id for s in train_sessions}:
            raise InvalidSplitError(f"fold {fold}: test sessions leak into training")
        outcome = run_method(train_sessions, test_sessions, recipe, meta_usage, out_dir, tag=f"{recipe.name}_fold{fold}")
        report.fold_scores.append(outcome.score)
        report.dropped.append(len(test_sessions) - len(outcome.test))
        report.meta_sizes.append(outcome.meta_size)
        logger.info(f"{recipe.name} fold {fold}: ACC {outcome.score.acc:.4f}, F1 {outcome.score.f1:.4f}")
    logger.info(
        f"{recipe.name}: ACC {report.mean_acc:.4f} ± {report.std_acc:.4f}, "
        f"F1 {report.mean_f1:.4f} ± {report.std_f1:.4f}"
    )
    return report


def meta_usage_sweep(
    corpus: Corpus,
    recipe: TrainRecipe,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    out_dir: Optional[str] = None
) -> List[Tuple[float, float, float, int, int]]:
    """
    Accuracy as a function of the share of D_meta used.

    Fraction 0 trains the same recipe with meta-learning switched off.

    Returns:
        List[Tuple[float, float, float, int, int]]: (fraction, mean ACC, ACC std,
        fewest and most meta sessions used by a fold)
    """
    if not recipe.meta:
        raise UsageError(f"recipe {recipe.name} does not use meta-learning")
    corpus = ensure_folds(corpus, recipe)
    curve = []
    for fraction in fractions:
        if not 0.0 <= fraction <= 1.0:
            raise UsageError(f"meta usage fraction {fraction} outside [0, 1]")
        fraction_dir = None
        if out_dir:
            fraction_dir = os.path.join(out_dir, f"usage_{fraction:.2f}")
            os.makedirs(fraction_dir, exist_ok=True)
        if fraction == 0.0:
            run_recipe = replace(recipe, meta=False, criterion="none").validate()
            report = cross_validate(corpus, run_recipe, fraction_dir)
        else:
            report = cross_validate(corpus, recipe, fraction_dir, meta_usage=fraction)
        curve.append((fraction, report.mean_acc, report.std_acc, min(report.meta_sizes), max(report.meta_sizes)))
        logger.info(f"Meta usage {fraction:.2f}: ACC {report.mean_acc:.4f}")
    return curve


def comparison_table(reports: Sequence[EvalReport]) -> List[list]:
    """One row per evaluated method plus placeholder rows for external methods."""
    rows = [report.table_row() for report in reports]
    for name in EXTERNAL_METHODS:
        rows.append([name, "", "", "", "", "external", ""])
    return rows


def recipe_grid(overrides: Optional[Dict[str, str]] = None) -> List[TrainRecipe]:
    """Every built-in preset with shared overrides applied."""
    return [preset(name).with_overrides(overrides or {}).validate() for name in PRESETS]


@dataclass
class GramDistribution:
    subset: str
    size: int
    counts: Counter

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def frequencies(self) -> Dict[Tuple[int, ...], float]:
        total = self.total
        return {gram: count / total for gram, count in self.counts.items()}

    def top(self, count: int = 10) -> List[Tuple[Tuple[int, ...], float]]:
        frequencies = self.frequencies
        ranked = sorted(frequencies.items(), key=lambda item: (-item[1], item[0]))
        return ranked[:count]

    @property
    def top2_share(self) -> float:
        return float(sum(freq for _, freq in self.top(2)))

    def rank_of(self, predicate) -> Optional[int]:
        """1-based rank of the most frequent gram satisfying `predicate`."""
        for rank, (gram, _) in enumerate(self.top(len(self.counts)), start=1):
            if predicate(gram):
                return rank
        return None


@dataclass
class GramReport:
    distributions: Dict[str, GramDistribution] = field(default_factory=dict)
    omitted: Dict[str, str] = field(default_factory=dict)

    def rows(self, top: int = 10) -> List[list]:
        return [
            [name, gram_label(gram), freq]
            for name, dist in self.distributions.items()
            for gram, freq in dist.top(top)
        ]

    def summary_rows(self) -> List[list]:
        rows = [[name, dist.size, dist.top2_share, ""] for name, dist in self.distributions.items()]
        rows.extend([name, 0, "", note] for name, note in self.omitted.items())
        return rows


def gram_distributions(
    type_sequences: Sequence[Sequence[int]],
    labels: Sequence[int],
    predictions: Sequence[int],
    n: int = 4,
    positive_class: int = 1
) -> GramReport:
    """
    n-gram frequency distributions of the CFA / non-CFA sequences and of each confusion subset.

    Subsets without sequences or without any gram are omitted with a note.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if not len(type_sequences) == labels.size == predictions.size:
        raise ShapeError("type sequences, labels and predictions must align")
    pos, neg = positive_class, 1 - positive_class
    masks = {
        "CFA": labels == 1,
        "non-CFA": labels == 0,
        "TP": (predictions == pos) & (labels == pos),
        "FN": (predictions == neg) & (labels == pos),
        "TN": (predictions == neg) & (labels == neg),
        "FP": (predictions == pos) & (labels == neg),
    }
    report = GramReport()
    for name in CONFUSION_SUBSETS:
        members = np.flatnonzero(masks[name])
        counts: Counter = Counter()
        for i in members:
            counts.update(ngram_encode(type_sequences[i], n).grams)
        if members.size == 0:
            report.omitted[name] = "empty subset"
        elif not counts:
            report.omitted[name] = f"no sequence with {n} clicks"
        else:
            report.distributions[name] = GramDistribution(subset=name, size=int(members.size), counts=counts)
    return report


def gram_analytics(model: SequenceClassifier, test_sessions: Sequence[ClickSession], n: int = 4, positive_class: int = 1) -> GramReport:
    """Gram distributions of a trained model's test predictions."""
    test = model.prepare(test_sessions)
    _, predictions = predict_batch(model, test.rows)
    types = [[int(e.event_type) for e in s.answered_events()] for s in test.sessions]
    return gram_distributions(types, test.labels, predictions, n=n, positive_class=positive_class)
