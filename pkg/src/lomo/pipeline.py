"""Model presets, one-vs-all multiclass, late fusion, and persistence.

The preset ladder mirrors the usual baselines for weakly supervised
sequence classification: mean/max pooled linear models (MnP, MxP), a
max-instance model (MIL), the full latent ordinal model (LOMo) with an
ordinal-off ablation, a global pooled model (GTP), the MIL+GTP blend, and
the adaptive blend (ALOMo) with a cross-validated mixing weight.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from math import factorial
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .core import Model, SequenceSample
from .errors import DataError
from .inference import SOLVERS
from .training import TrainConfig, TrainReport, train

KINDS = ("MnP", "MxP", "MIL", "LOMo", "LOMo_ord0", "GTP", "MILplusGTP", "ALOMo")

# CLI spellings of the preset names.
KIND_ALIASES: Dict[str, str] = {
    "mnp": "MnP",
    "mxp": "MxP",
    "mil": "MIL",
    "lomo": "LOMo",
    "lomo-ord0": "LOMo_ord0",
    "gtp": "GTP",
    "mil-gtp": "MILplusGTP",
    "alomo": "ALOMo",
}

# Config fields each preset pins regardless of the user-supplied values.
_FORCED = {
    "MnP": dict(M=1, gamma_g=1.0, pooling="mean"),
    "MxP": dict(M=1, gamma_g=1.0, pooling="max"),
    "MIL": dict(M=1, ordinal_enabled=False, gamma_g=0.0),
    "LOMo": dict(gamma_g=0.0),
    "LOMo_ord0": dict(gamma_g=0.0, ordinal_enabled=False),
    "GTP": dict(gamma_g=1.0),
    "MILplusGTP": dict(M=1),
    "ALOMo": dict(),
}


def canonical_kind(name: str) -> str:
    if name in KINDS:
        return name
    try:
        return KIND_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model kind {name!r}; expected one of {sorted(KIND_ALIASES)}")


@dataclass(frozen=True)
class ModelSpec:
    """A preset name plus the base training configuration it constrains."""

    kind: str
    train_config: TrainConfig

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))

    def resolved(self) -> TrainConfig:
        """Training configuration with the preset's forced fields applied."""
        return replace(self.train_config, **_FORCED[self.kind])


@dataclass
class MulticlassModel:
    """One binary model per class, trained one-vs-all."""

    class_labels: List[int]
    per_class: List[Model]

    def __post_init__(self):
        if len(self.class_labels) != len(self.per_class):
            raise ValueError("one model per class label required")
        dims = {m.dim for m in self.per_class}
        if len(dims) > 1:
            raise ValueError(f"per-class models disagree on dimension: {sorted(dims)}")


def derive_seed(base_seed: int, index: int) -> int:
    """Deterministic 64-bit stream seed for a sub-task of a base seed."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])


def train_spec(
    dataset: Sequence[SequenceSample],
    spec: ModelSpec,
    solver: str = "greedy",
    trace_every: Optional[int] = None,
) -> TrainReport:
    """Binary training under the preset's resolved configuration."""
    return train(dataset, spec.resolved(), solver=solver, trace_every=trace_every)


def train_multiclass(
    dataset: Sequence[SequenceSample],
    spec: ModelSpec,
    class_labels: Optional[Sequence[int]] = None,
    solver: str = "greedy",
    jobs: int = 1,
) -> MulticlassModel:
    """One-vs-all reduction: each class trains a binary model against the rest.

    Per-class seeds derive deterministically from the base seed and the
    class position, so runs reproduce regardless of scheduling.
    """
    if class_labels is None:
        class_labels = sorted({s.label for s in dataset})
    else:
        class_labels = [int(c) for c in class_labels]
    if len(class_labels) < 2:
        raise DataError(f"multiclass training needs at least 2 classes, got {class_labels}")
    counts = {c: 0 for c in class_labels}
    for s in dataset:
        if s.label in counts:
            counts[s.label] += 1
    empty = [c for c, n in counts.items() if n == 0]
    if empty:
        raise DataError(f"classes with zero samples: {empty}")

    base = spec.resolved()

    def train_one(ci: int) -> Model:
        cls = class_labels[ci]
        relabeled = [
            SequenceSample(s.id, 1 if s.label == cls else -1, s.frames, s.group)
            for s in dataset
        ]
        cfg = replace(base, seed=derive_seed(base.seed, ci))
        return train(relabeled, cfg, solver=solver).model

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool_:
            models = list(pool_.map(train_one, range(len(class_labels))))
    else:
        models = [train_one(ci) for ci in range(len(class_labels))]
    return MulticlassModel(class_labels=list(class_labels), per_class=models)


def predict(
    model: Union[Model, MulticlassModel],
    sample: SequenceSample,
    solver: str = "greedy",
):
    """Raw score(s) for one sample: a float for a binary model, an array of
    per-class scores for a multiclass model."""
    if isinstance(model, MulticlassModel):
        infer_fn = SOLVERS[solver]
        return np.array([infer_fn(m, sample).total for m in model.per_class])
    return SOLVERS[solver](model, sample).total


def decide(
    model: Union[Model, MulticlassModel],
    sample: SequenceSample,
    solver: str = "greedy",
) -> int:
    """Hard decision: sign of the score for binary models (0 counts as +1),
    argmax class label for multiclass (ties toward the smallest index)."""
    scores = predict(model, sample, solver)
    if isinstance(model, MulticlassModel):
        return model.class_labels[int(np.argmax(scores))]
    return 1 if scores >= 0.0 else -1


def predict_table(
    model: Union[Model, MulticlassModel],
    samples: Sequence[SequenceSample],
    solver: str = "greedy",
) -> np.ndarray:
    """Scores for a whole evaluation set: shape (n,) binary, (n, C) multiclass."""
    return np.array([predict(model, s, solver) for s in samples])


FUSION_MODES = ("equal_mean", "zscore_weighted")


def late_fusion(
    score_tables: Sequence[np.ndarray],
    mode: str = "equal_mean",
    weights: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Combine per-model score tables over an identical sample set.

    ``equal_mean`` averages raw scores. ``zscore_weighted`` first normalizes
    each table per class to zero mean and unit variance over the evaluated
    set (population variance; an all-constant column normalizes to zeros)
    and then forms the weighted sum, default weights all one.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
    if not score_tables:
        raise ValueError("need at least one score table")
    arrays = [np.asarray(t, dtype=np.float64) for t in score_tables]
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise DataError(f"score tables cover different sample sets: {a.shape} vs {shape}")
        if not np.isfinite(a).all():
            raise DataError("score table contains non-finite values")
    if mode == "equal_mean":
        if weights is not None:
            raise ValueError("equal_mean fusion takes no weights")
        return np.mean(arrays, axis=0)
    if weights is None:
        weights = [1.0] * len(arrays)
    if len(weights) != len(arrays):
        raise ValueError(f"got {len(weights)} weights for {len(arrays)} tables")
    fused = np.zeros(shape)
    for w, a in zip(weights, arrays):
        mean = a.mean(axis=0)
        std = a.std(axis=0)  # population variance, denominator n
        z = np.where(std > 0.0, (a - mean) / np.where(std > 0.0, std, 1.0), 0.0)
        fused += float(w) * z
    return fused


# ---------------------------------------------------------------------------
# Persistence: versioned little-endian binary container.
#
#   magic "LOMO1" | kind u8 | pooling u8 | has_global u8 | M u32 | d u32
#   | coverage u32 | gamma_g f64 | seed u64 | templates M*d f64
#   | ordering costs M! f64 | [global template d f64]
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"LOMO1"
_HEADER = struct.Struct("<5sBBBIIIdQ")


@dataclass(frozen=True)
class LoadedModel:
    model: Model
    kind: str
    seed: int


def save_model(path, model: Model, kind: str = "LOMo", seed: int = 0) -> None:
    kind = canonical_kind(kind)
    has_global = model.global_template is not None
    header = _HEADER.pack(
        MODEL_MAGIC,
        KINDS.index(kind),
        ("mean", "max").index(model.pooling),
        1 if has_global else 0,
        model.n_events,
        model.dim,
        model.coverage,
        model.gamma_g,
        int(seed),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.templates, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.ordering_costs, dtype="<f8").tobytes())
        if has_global:
            fh.write(np.ascontiguousarray(model.global_template, dtype="<f8").tobytes())


def load_model(path) -> LoadedModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read model container {path}: {exc}")
    if len(blob) < _HEADER.size or blob[:5] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model container (bad magic or truncated header)")
    magic, kind_code, pool_code, has_global, m, dim, coverage, gamma_g, seed = _HEADER.unpack(
        blob[: _HEADER.size]
    )
    if kind_code >= len(KINDS) or pool_code > 1:
        raise DataError(f"{path}: unsupported kind or pooling code")
    n_costs = factorial(m)
    expected = _HEADER.size + 8 * (m * dim + n_costs + (dim if has_global else 0))
    if len(blob) != expected:
        raise DataError(f"{path}: truncated or oversized payload ({len(blob)} != {expected} bytes)")
    offset = _HEADER.size
    templates = np.frombuffer(blob, dtype="<f8", count=m * dim, offset=offset).reshape(m, dim)
    offset += 8 * m * dim
    costs = np.frombuffer(blob, dtype="<f8", count=n_costs, offset=offset)
    offset += 8 * n_costs
    global_template = None
    if has_global:
        global_template = np.frombuffer(blob, dtype="<f8", count=dim, offset=offset)
    model = Model(
        templates=templates,
        ordering_costs=costs,
        global_template=global_template,
        gamma_g=gamma_g,
        pooling=("mean", "max")[pool_code],
        coverage=coverage,
    )
    return LoadedModel(model=model, kind=KINDS[kind_code], seed=seed)
