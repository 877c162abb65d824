"""Metrics, fold construction, cross-validation, and grid search.

Ranking metrics break score ties deterministically: ranked metrics sort by
descending score with a stable fallback to the original sample order, AUC
uses midranks, and the equal-error-rate sweep interpolates linearly between
adjacent ROC vertices. All metrics are pure functions of their inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import SequenceSample
from .errors import DataError
from .pipeline import ModelSpec, late_fusion, predict_table, train_multiclass, train_spec
from .training import TrainConfig

METRIC_NAMES = ("acc", "avgclassacc", "map", "auc", "eer")

FOLD_POLICIES = ("random_k_fold", "group_k_fold", "leave_one_group_out", "fixed_from_manifest")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _binary_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(int)
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    if not np.isfinite(scores).all():
        raise ValueError("scores contain non-finite values")
    bad = set(np.unique(labels)) - {-1, 1}
    if bad:
        raise ValueError(f"binary metrics expect labels -1/+1, got extra values {sorted(bad)}")
    return scores, labels


def average_precision(scores, labels) -> float:
    """Mean of precision at each positive's rank, scores sorted descending
    (stable in the original order on ties)."""
    scores, labels = _binary_arrays(scores, labels)
    positive = labels > 0
    if not positive.any():
        raise ValueError("average precision undefined without positive samples")
    order = np.argsort(-scores, kind="stable")
    hits = positive[order]
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    return float(np.mean(cum_hits[hits] / ranks[hits]))


def mean_average_precision(score_table, labels, class_labels: Optional[Sequence[int]] = None) -> float:
    """Unweighted mean of per-class average precision.

    With a 1-D score table this is plain binary average precision. With an
    (n, C) table, column i is scored one-vs-all against class_labels[i];
    classes absent from the evaluated set are skipped.
    """
    table = np.asarray(score_table, dtype=np.float64)
    if table.ndim == 1:
        return average_precision(table, labels)
    labels = np.asarray(labels).reshape(-1).astype(int)
    if class_labels is None:
        class_labels = sorted(np.unique(labels).tolist())
    if len(class_labels) != table.shape[1]:
        raise ValueError(
            f"score table has {table.shape[1]} columns for {len(class_labels)} classes"
        )
    aps = []
    for ci, cls in enumerate(class_labels):
        relevance = np.where(labels == cls, 1, -1)
        if (relevance > 0).any():
            aps.append(average_precision(table[:, ci], relevance))
    if not aps:
        raise ValueError("no class has positive samples in the evaluated set")
    return float(np.mean(aps))


def auc(scores, labels) -> float:
    """Area under the ROC as the Mann-Whitney statistic: the probability a
    positive outscores a negative, ties counting one half."""
    scores, labels = _binary_arrays(scores, labels)
    positive = labels > 0
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires scores from both classes")
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    group_start = np.cumsum(counts) - counts
    midrank = group_start + (counts + 1) / 2.0  # 1-based average rank per tie group
    ranks = midrank[inverse]
    u = float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_eer_rate(scores, labels) -> float:
    """One minus the equal error rate.

    Walks the ROC vertices at distinct thresholds; when no vertex has equal
    false-positive and false-negative rates, the crossing is interpolated
    linearly between the two adjacent vertices.
    """
    scores, labels = _binary_arrays(scores, labels)
    positive = labels > 0
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("equal error rate requires scores from both classes")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    pos_sorted = positive[order]
    tp = fp = 0
    prev_fpr, prev_fnr = 0.0, 1.0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(pos_sorted[i:j].sum())
        fp += (j - i) - int(pos_sorted[i:j].sum())
        fpr = fp / n_neg
        fnr = 1.0 - tp / n_pos
        if fpr >= fnr:
            if fpr == fnr:
                return 1.0 - fpr
            denom = (fpr - prev_fpr) + (prev_fnr - fnr)
            frac = (prev_fnr - prev_fpr) / denom
            return 1.0 - (prev_fpr + frac * (fpr - prev_fpr))
        prev_fpr, prev_fnr = fpr, fnr
        i = j
    # The final vertex has fpr == 1 >= fnr == 0, so the loop always returns.
    raise AssertionError("unreachable: ROC sweep ended without a crossing")


def average_class_accuracy(predictions, labels) -> float:
    """Mean per-class recall; insensitive to class imbalance."""
    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    classes = np.unique(labels)
    recalls = [float(np.mean(predictions[labels == c] == c)) for c in classes]
    return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

@dataclass
class FoldSpec:
    """Assignment of sample ids to fold indices 0..n_folds-1."""

    name: str
    policy: str
    n_folds: int
    assignment: Dict[str, int]

    def ids_in_fold(self, fold: int) -> List[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]


def _unique_ids(samples: Sequence[SequenceSample]) -> List[str]:
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError("sample ids must be unique")
    return ids


def _stable_group_key(seed: int, group: str) -> str:
    return hashlib.sha256(f"{seed}:{group}".encode("utf-8")).hexdigest()


def make_folds(
    samples: Sequence[SequenceSample],
    policy: str,
    k: Optional[int] = None,
    seed: int = 0,
    manifest_folds: Optional[Dict[str, int]] = None,
) -> FoldSpec:
    """Deterministic fold construction.

    Group policies keep each group inside a single fold; ``group_k_fold``
    balances by assigning groups (largest first, hashed for a stable order)
    to the currently smallest fold. ``fixed_from_manifest`` adopts fold
    indices supplied externally.
    """
    if policy not in FOLD_POLICIES:
        raise ValueError(f"policy must be one of {FOLD_POLICIES}, got {policy!r}")
    ids = _unique_ids(samples)
    assignment: Dict[str, int] = {}

    if policy == "random_k_fold":
        if k is None or not 2 <= k <= len(samples):
            raise ValueError(f"random_k_fold needs 2 <= k <= {len(samples)}, got {k}")
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(samples))
        for pos, sample_idx in enumerate(perm):
            assignment[ids[sample_idx]] = pos * k // len(samples)
        return FoldSpec(f"random:{k}", policy, k, assignment)

    if policy in ("group_k_fold", "leave_one_group_out"):
        groups: Dict[str, List[str]] = {}
        for s in samples:
            if s.group is None:
                raise DataError(f"sample {s.id!r} has no group; group-aware folds need one")
            groups.setdefault(s.group, []).append(s.id)
        if policy == "leave_one_group_out":
            for fold, g in enumerate(sorted(groups)):
                for sid in groups[g]:
                    assignment[sid] = fold
            return FoldSpec("logo", policy, len(groups), assignment)
        if k is None or not 2 <= k <= len(groups):
            raise ValueError(f"group_k_fold needs 2 <= k <= number of groups ({len(groups)})")
        ordered = sorted(groups, key=lambda g: (-len(groups[g]), _stable_group_key(seed, g)))
        loads = [0] * k
        for g in ordered:
            fold = int(np.argmin(loads))
            loads[fold] += len(groups[g])
            for sid in groups[g]:
                assignment[sid] = fold
        return FoldSpec(f"group:{k}", policy, k, assignment)

    # fixed_from_manifest
    if manifest_folds is None:
        raise ValueError("fixed_from_manifest requires the manifest fold mapping")
    missing = [sid for sid in ids if manifest_folds.get(sid) is None]
    if missing:
        raise DataError(f"manifest provides no fold index for samples {missing[:5]}")
    raw = sorted({int(manifest_folds[sid]) for sid in ids})
    remap = {r: i for i, r in enumerate(raw)}
    for sid in ids:
        assignment[sid] = remap[int(manifest_folds[sid])]
    return FoldSpec("manifest", policy, len(raw), assignment)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-fold and aggregate metric values with provenance."""

    name: str
    metrics: List[str]
    solver: str
    fold_policy: str
    n_folds: int
    per_fold: List[Dict] = field(default_factory=list)
    aggregate: Dict[str, float] = field(default_factory=dict)
    per_class: Dict[str, Dict[str, float]] = field(default_factory=dict)
    config_fingerprint: str = ""
    extra: Dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "metrics": self.metrics,
            "solver": self.solver,
            "fold_policy": self.fold_policy,
            "n_folds": self.n_folds,
            "per_fold": self.per_fold,
            "aggregate": self.aggregate,
            "per_class": self.per_class,
            "config_fingerprint": self.config_fingerprint,
            "extra": self.extra,
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def config_fingerprint(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _is_binary(labels) -> bool:
    return set(np.unique(labels).tolist()) <= {-1, 1}


def _score_metrics(
    names: Sequence[str],
    scores: np.ndarray,
    decisions: np.ndarray,
    labels: np.ndarray,
    class_labels: Optional[List[int]],
) -> Dict[str, float]:
    binary = class_labels is None
    out: Dict[str, float] = {}
    for name in names:
        if name == "acc":
            out[name] = float(np.mean(decisions == labels))
        elif name == "avgclassacc":
            out[name] = average_class_accuracy(decisions, labels)
        elif name == "map":
            out[name] = (
                average_precision(scores, labels)
                if binary
                else mean_average_precision(scores, labels, class_labels)
            )
        elif name in ("auc", "eer"):
            fn = auc if name == "auc" else roc_eer_rate
            if binary:
                out[name] = fn(scores, labels)
            else:
                vals = []
                for ci, cls in enumerate(class_labels):
                    rel = np.where(labels == cls, 1, -1)
                    if (rel > 0).any() and (rel < 0).any():
                        vals.append(fn(scores[:, ci], rel))
                if not vals:
                    raise ValueError(f"{name} undefined: no class has both outcomes present")
                out[name] = float(np.mean(vals))
        else:
            raise ValueError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}")
    return out


def cross_validate(
    dataset: Sequence[SequenceSample],
    folds: FoldSpec,
    spec: ModelSpec,
    metrics: Sequence[str] = ("acc",),
    solver: str = "greedy",
    jobs: int = 1,
) -> EvalReport:
    """Train on all-but-one fold, evaluate the held-out fold, aggregate.

    Binary datasets train a single model per fold; multiclass datasets train
    one-vs-all with argmax decisions. The train and eval sets of a fold are
    disjoint by construction and this is asserted structurally.
    """
    ids = _unique_ids(dataset)
    unassigned = [sid for sid in ids if sid not in folds.assignment]
    if unassigned:
        raise DataError(f"samples missing from the fold assignment: {unassigned[:5]}")
    labels_all = np.array([s.label for s in dataset])
    binary = _is_binary(labels_all)
    class_labels = None if binary else sorted(np.unique(labels_all).tolist())

    def run_fold(fold: int) -> Dict:
        train_set = [s for s in dataset if folds.assignment[s.id] != fold]
        eval_set = [s for s in dataset if folds.assignment[s.id] == fold]
        if not eval_set:
            raise DataError(f"fold {fold} has no evaluation samples")
        if not train_set:
            raise DataError(f"fold {fold} has no training samples")
        assert not ({s.id for s in train_set} & {s.id for s in eval_set})
        if binary:
            model = train_spec(train_set, spec, solver=solver).model
            scores = predict_table(model, eval_set, solver)
            decisions = np.where(scores >= 0.0, 1, -1)
        else:
            mm = train_multiclass(train_set, spec, class_labels=class_labels, solver=solver)
            scores = predict_table(mm, eval_set, solver)
            decisions = np.array([class_labels[i] for i in np.argmax(scores, axis=1)])
        y = np.array([s.label for s in eval_set])
        return {
            "fold": fold,
            "n_eval": len(eval_set),
            "metrics": _score_metrics(metrics, scores, decisions, y, class_labels),
            "decisions": decisions,
            "labels": y,
        }

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool_:
            fold_results = list(pool_.map(run_fold, range(folds.n_folds)))
    else:
        fold_results = [run_fold(f) for f in range(folds.n_folds)]

    aggregate = {
        m: float(np.mean([fr["metrics"][m] for fr in fold_results])) for m in metrics
    }
    all_decisions = np.concatenate([fr["decisions"] for fr in fold_results])
    all_labels = np.concatenate([fr["labels"] for fr in fold_results])
    per_class = {}
    for cls in np.unique(all_labels):
        mask = all_labels == cls
        per_class[str(int(cls))] = {
            "support": int(mask.sum()),
            "recall": float(np.mean(all_decisions[mask] == cls)),
        }
    cfg = spec.resolved()
    fingerprint = config_fingerprint(
        {
            "kind": spec.kind,
            "config": vars(cfg),
            "solver": solver,
            "metrics": list(metrics),
            "folds": {"policy": folds.policy, "n": folds.n_folds, "name": folds.name},
        }
    )
    report = EvalReport(
        name=folds.name,
        metrics=list(metrics),
        solver=solver,
        fold_policy=folds.policy,
        n_folds=folds.n_folds,
        per_fold=[
            {"fold": fr["fold"], "n_eval": fr["n_eval"], "metrics": fr["metrics"]}
            for fr in fold_results
        ],
        aggregate=aggregate,
        per_class=per_class,
        config_fingerprint=fingerprint,
        extra={"kind": spec.kind, "binary": binary, "n_samples": len(dataset)},
    )
    return report


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass
class GridSearchResult:
    metric: str
    rows: List[Dict]
    best: Dict
    best_spec: ModelSpec


def grid_search(
    dataset: Sequence[SequenceSample],
    folds: FoldSpec,
    spec: ModelSpec,
    grid: Dict[str, Sequence],
    metric: str = "acc",
    solver: str = "greedy",
    jobs: int = 1,
) -> GridSearchResult:
    """Staged sweep: first lambda1 x coverage_t with the global blend off,
    then gamma_g with the winning lambda1 and coverage_t fixed.

    Ties break toward smaller lambda1, then smaller coverage_t, then smaller
    gamma_g (implemented by ascending sweeps with strict improvement).
    Identical configurations are evaluated once and cached.
    """
    base = spec.train_config
    lambdas = sorted(grid.get("lambda1", [base.lambda1]))
    coverages = sorted(grid.get("coverage_t", [base.coverage_t]))
    gammas = sorted(grid.get("gamma_g", []))
    if not lambdas or not coverages:
        raise ValueError("grid must contain at least one lambda1 and one coverage_t value")

    cache: Dict[tuple, float] = {}

    def evaluate(lam: float, cov: int, gam: float) -> float:
        key = (lam, cov, gam)
        if key not in cache:
            cfg = replace(base, lambda1=lam, coverage_t=int(cov), gamma_g=gam)
            candidate = ModelSpec(spec.kind, cfg)
            report = cross_validate(dataset, folds, candidate, (metric,), solver, jobs)
            cache[key] = report.aggregate[metric]
        return cache[key]

    rows: List[Dict] = []
    best_lam, best_cov, best_score = None, None, -np.inf
    for lam in lambdas:
        for cov in coverages:
            score = evaluate(lam, cov, 0.0)
            rows.append(
                {"stage": 1, "lambda1": lam, "coverage_t": cov, "gamma_g": 0.0, "score": score}
            )
            if score > best_score:
                best_lam, best_cov, best_score = lam, cov, score

    best_gamma = 0.0
    final_score = best_score
    if gammas:
        final_score = -np.inf
        for gam in gammas:
            score = evaluate(best_lam, best_cov, gam)
            rows.append(
                {
                    "stage": 2,
                    "lambda1": best_lam,
                    "coverage_t": best_cov,
                    "gamma_g": gam,
                    "score": score,
                }
            )
            if score > final_score:
                best_gamma, final_score = gam, score

    best_cfg = replace(base, lambda1=best_lam, coverage_t=int(best_cov), gamma_g=best_gamma)
    best = {
        "lambda1": best_lam,
        "coverage_t": best_cov,
        "gamma_g": best_gamma,
        "score": final_score,
    }
    return GridSearchResult(
        metric=metric, rows=rows, best=best, best_spec=ModelSpec(spec.kind, best_cfg)
    )


def search_fusion_weights(
    score_tables: Sequence[np.ndarray],
    labels,
    metric: str = "auc",
    weight_grid: Sequence[float] = (0.0, 0.5, 1.0),
    mode: str = "zscore_weighted",
    class_labels: Optional[Sequence[int]] = None,
):
    """Coarse grid search over per-table fusion weights.

    Tries every combination from ``weight_grid`` (all-zero skipped) and
    keeps the best metric value; ties go to the lexicographically smallest
    weight vector. Returns (weights, fused_table, score).
    """
    labels = np.asarray(labels).reshape(-1)
    best = None
    for weights in product(sorted(weight_grid), repeat=len(score_tables)):
        if not any(w != 0.0 for w in weights):
            continue
        fused = late_fusion(score_tables, mode=mode, weights=weights)
        decisions = (
            np.where(fused >= 0.0, 1, -1)
            if fused.ndim == 1
            else np.array(
                [
                    (class_labels or sorted(np.unique(labels).tolist()))[i]
                    for i in np.argmax(fused, axis=1)
                ]
            )
        )
        score = _score_metrics(
            (metric,),
            fused,
            decisions,
            labels,
            None if fused.ndim == 1 else (class_labels or sorted(np.unique(labels).tolist())),
        )[metric]
        if best is None or score > best[2]:
            best = (weights, fused, score)
    if best is None:
        raise ValueError("weight grid admits no non-zero combination")
    return best
