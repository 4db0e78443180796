"""Loss, the epoch loop with early stopping, and the CV/test protocol."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .evaluation import RankedCase, make_case, rank_metrics
from .graph import (HetGraph, LabeledTriplet, SplitPlan, avg_node_degree,
                    derive_positive_triplets, sample_negatives,
                    sample_training_negatives)
from .model import ModelCache, ModelConfig, ModelParams, forward, init_params
from .optim import Adam
from .seeding import derive_seed
from .tensor import ShapeError, Tape, Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 0.7
    lr: float = 0.005
    max_epochs: int = 1000
    patience: int = 50
    val_metric: str = "mrr"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def loss_fn(scores: Tensor, labels, gamma: float) -> Tensor:
    """Class-balanced squared error: (1-g)*sum_pos + g*sum_neg, sums not means."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if scores.shape != y.shape:
        raise ShapeError(f"loss: {scores.shape[0]} scores vs {y.shape[0]} labels")
    diff = T.add(T.constant(y), T.smul(scores, -1.0))
    pos = T.sum_sq(T.hadamard(diff, T.constant((y == 1.0).astype(np.float64))))
    neg = T.sum_sq(T.hadamard(diff, T.constant((y == 0.0).astype(np.float64))))
    return T.add(T.smul(pos, 1.0 - gamma), T.smul(neg, gamma))


@dataclass
class RankingSet:
    """Each positive paired with its fixed pool of sampled negatives."""
    positives: list[LabeledTriplet]
    negatives: list[list[LabeledTriplet]]


def build_ranking_set(g: HetGraph, positives, n_negatives: int, seed: int,
                      known_positives) -> RankingSet:
    flat = sample_negatives(positives, n_negatives, seed, g.sizes,
                            known_positives=known_positives)
    grouped = [flat[i * n_negatives:(i + 1) * n_negatives]
               for i in range(len(positives))]
    return RankingSet(positives=list(positives), negatives=grouped)


def score_ranking_set(g: HetGraph, cache: ModelCache, params: ModelParams,
                      rset: RankingSet) -> list[RankedCase]:
    """Score every candidate pool in one forward pass, then rank."""
    samples: list[LabeledTriplet] = []
    for pos, negs in zip(rset.positives, rset.negatives):
        samples.append(pos)
        samples.extend(negs)
    out = forward(cache, params, samples)
    scores = out.scores.data[:, 0]
    cases = []
    off = 0
    for pos, negs in zip(rset.positives, rset.negatives):
        pool = 1 + len(negs)
        cases.append(make_case(g.triplet_id(pos),
                               [g.triplet_id(n) for n in negs],
                               scores[off:off + pool],
                               avg_degree=avg_node_degree(g, pos)))
        off += pool
    return cases


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.bad = 0
        self.epoch = 0

    def update(self, metric: float) -> bool:
        """Record one epoch's metric; True iff it improved on the best."""
        self.epoch += 1
        if metric > self.best:
            self.best = metric
            self.best_epoch = self.epoch
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


@dataclass
class TrainReport:
    train_losses: list[float]
    val_trace: list[float]
    best_epoch: int
    best_metric: float
    best_state: dict
    epochs_run: int
    wall_seconds: float


def train(g: HetGraph, cache: ModelCache, params: ModelParams,
          train_samples: list[LabeledTriplet], val_set: RankingSet,
          cfg: TrainConfig) -> TrainReport:
    """Full-batch epochs with early stopping on the validation ranking metric.

    On return `params` holds the best-validation checkpoint, which is also
    in `report.best_state`.
    """
    if not train_samples:
        raise ValueError("train: empty training set")
    labels = np.array([s.label for s in train_samples], dtype=np.float64)
    opt = Adam(params.named(), lr=cfg.lr)
    start = time.perf_counter()

    losses: list[float] = []
    val_trace: list[float] = []
    stopper = EarlyStopper(cfg.patience)
    best_state = params.state()
    for epoch in range(1, cfg.max_epochs + 1):
        params.zero_grad()
        with Tape() as tape:
            out = forward(cache, params, train_samples)
            loss = loss_fn(out.scores, labels, cfg.gamma)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(f"train: non-finite loss at epoch {epoch}")
            tape.backward(loss)
        opt.step()
        losses.append(value)

        cases = score_ranking_set(g, cache, params, val_set)
        metric = rank_metrics(cases)[cfg.val_metric]
        val_trace.append(metric)
        if stopper.update(metric):
            best_state = params.state()
        elif stopper.should_stop:
            break

    params.load_state(best_state)
    return TrainReport(train_losses=losses, val_trace=val_trace,
                       best_epoch=stopper.best_epoch, best_metric=float(stopper.best),
                       best_state=best_state, epochs_run=len(losses),
                       wall_seconds=time.perf_counter() - start)


def _resolve_ids(ids, by_id, where: str) -> list[LabeledTriplet]:
    out = []
    for tid in ids:
        trip = by_id.get(tid)
        if trip is None:
            raise KeyError(f"{where}: triplet id {tid!r} is not a known positive")
        out.append(trip)
    return out


def audit_no_leakage(plan: SplitPlan):
    """Every invocation re-checks that no test id reaches any training fold."""
    test = set(plan.test)
    for k in range(len(plan.folds)):
        leaked = test.intersection(plan.fold_train_ids(k))
        if leaked:
            raise RuntimeError(f"leakage: test ids {sorted(leaked)[:3]}... "
                               f"appear in fold {k} training set")
        leaked_val = test.intersection(plan.fold_val_ids(k))
        if leaked_val:
            raise RuntimeError(f"leakage: test ids in fold {k} validation set")


@dataclass
class FoldResult:
    fold: int
    metrics: dict[str, float]
    report: TrainReport
    params: ModelParams
    cases: list[RankedCase]
    n_train_pos: int
    n_train_neg: int


@dataclass
class CVResult:
    folds: list[FoldResult]
    records: list[dict]
    mean: dict

    def all_records(self) -> list[dict]:
        return self.records + [self.mean]


def _mean_record(records: list[dict]) -> dict:
    keys = [k for k in records[0] if k != "fold"]
    mean = {"fold": "mean"}
    for k in keys:
        mean[k] = float(np.mean([r[k] for r in records]))
    return mean


def run_cv(g: HetGraph, plan: SplitPlan, model_cfg: ModelConfig,
           train_cfg: TrainConfig, n_rank_negatives: int = 30,
           max_workers: int = 1) -> CVResult:
    """5-fold CV: train on 4 folds plus equal negatives, rank the held-out fold."""
    audit_no_leakage(plan)
    positives = derive_positive_triplets(g)
    by_id = {g.triplet_id(p): p for p in positives}
    known = {p.key() for p in positives}
    cache = ModelCache(g, model_cfg.variant)
    seed = train_cfg.seed

    def run_fold(k: int) -> FoldResult:
        train_pos = _resolve_ids(plan.fold_train_ids(k), by_id, f"fold {k} train")
        val_pos = _resolve_ids(plan.fold_val_ids(k), by_id, f"fold {k} val")
        train_neg = sample_training_negatives(
            train_pos, derive_seed(seed, f"train-neg/fold{k}"), g.sizes,
            known_positives=known)
        val_set = build_ranking_set(g, val_pos, n_rank_negatives,
                                    derive_seed(seed, f"val-neg/fold{k}"), known)
        params = init_params(cache, model_cfg, derive_seed(seed, f"params/fold{k}"))
        report = train(g, cache, params, train_pos + train_neg, val_set, train_cfg)
        cases = score_ranking_set(g, cache, params, val_set)
        return FoldResult(fold=k, metrics=rank_metrics(cases),
                          report=report, params=params, cases=cases,
                          n_train_pos=len(train_pos), n_train_neg=len(train_neg))

    n_folds = len(plan.folds)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_fold, range(n_folds)))
    else:
        results = [run_fold(k) for k in range(n_folds)]

    records = []
    for r in results:
        rec = {"fold": r.fold, **{k: r.metrics[k] for k in sorted(r.metrics)},
               "epochs": r.report.epochs_run, "best_epoch": r.report.best_epoch}
        records.append(rec)
    return CVResult(folds=results, records=records, mean=_mean_record(records))


def train_for_test(g: HetGraph, plan: SplitPlan, model_cfg: ModelConfig,
                   train_cfg: TrainConfig) -> tuple[ModelParams, TrainReport, ModelCache]:
    """Fit the model used against the independent test set.

    Fold 0 serves as the early-stopping validation set; the remaining
    folds plus equal sampled negatives form the training set.  Test
    positives are never visible here (audited).
    """
    audit_no_leakage(plan)
    positives = derive_positive_triplets(g)
    by_id = {g.triplet_id(p): p for p in positives}
    known = {p.key() for p in positives}
    cache = ModelCache(g, model_cfg.variant)
    seed = train_cfg.seed

    train_pos = _resolve_ids(plan.fold_train_ids(0), by_id, "test-model train")
    val_pos = _resolve_ids(plan.fold_val_ids(0), by_id, "test-model val")
    train_neg = sample_training_negatives(
        train_pos, derive_seed(seed, "train-neg/test-model"), g.sizes,
        known_positives=known)
    val_set = build_ranking_set(g, val_pos, 30,
                                derive_seed(seed, "val-neg/test-model"), known)
    params = init_params(cache, model_cfg, derive_seed(seed, "params/test-model"))
    report = train(g, cache, params, train_pos + train_neg, val_set, train_cfg)
    return params, report, cache


def run_test(g: HetGraph, plan: SplitPlan, cache: ModelCache, params: ModelParams,
             seed: int, n_rank_negatives: int = 30):
    """Rank each test positive against freshly sampled negatives."""
    positives = derive_positive_triplets(g)
    by_id = {g.triplet_id(p): p for p in positives}
    known = {p.key() for p in positives}
    test_pos = _resolve_ids(plan.test, by_id, "test")
    test_set = build_ranking_set(g, test_pos, n_rank_negatives,
                                 derive_seed(seed, "test-neg"), known)
    cases = score_ranking_set(g, cache, params, test_set)
    return rank_metrics(cases), cases
