"""Latent-placement solvers.

Three solvers maximize the model score over placements whose frames stay at
pairwise distance >= t_eff + 1:

* ``infer_greedy`` picks the best frame per template in index order and
  suppresses a window of ``t_eff`` frames on either side of each pick. Fast
  and approximate; this is the solver used inside training by default.
* ``infer_dp`` is exact: for each of the M! temporal orderings it solves the
  position assignment by dynamic programming with a running maximum, then
  takes the best ordering including its cost-table entry.
* ``infer_brute`` enumerates every feasible placement. It exists as a
  testing oracle and is guarded against large instances.

All solvers resolve the model's coverage radius through ``effective_t``, so
the constraint always admits at least one placement. Tie-breaking is total
and documented per solver, making every result deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Optional

import numpy as np

from .core import LatentAssignment, Model, SequenceSample, score_fixed
from .errors import DataError, InfeasibleError

BRUTE_FORCE_GUARD = 10**7

SOLVER_NAMES = ("greedy", "dp", "brute")


@dataclass(frozen=True)
class InferenceConfig:
    """Solver choice plus coverage handling.

    ``coverage_t`` overrides the model's stored radius when given. With
    ``clamp`` enabled (the default) the radius is shrunk via ``effective_t``
    whenever the sequence is too short for it; otherwise an infeasible
    radius raises.
    """

    solver: str = "greedy"
    coverage_t: Optional[int] = None
    clamp: bool = True

    def __post_init__(self):
        if self.solver not in SOLVER_NAMES:
            raise ValueError(f"solver must be one of {SOLVER_NAMES}, got {self.solver!r}")
        if self.coverage_t is not None and self.coverage_t < 0:
            raise ValueError("coverage_t must be non-negative")


def effective_t(n_frames: int, n_events: int, t: int) -> int:
    """Clamp the coverage radius so a feasible placement always exists.

    First caps t at floor(N / M); if M placements spaced t + 1 apart still
    do not fit in N frames, shrinks further to floor((N - M) / (M - 1)).
    """
    if n_frames < n_events:
        raise InfeasibleError(
            f"sequence shorter than number of events (N={n_frames} < M={n_events})"
        )
    t1 = min(int(t), n_frames // n_events)
    if n_events == 1:
        return t1
    if (n_events - 1) * (t1 + 1) + 1 > n_frames:
        return (n_frames - n_events) // (n_events - 1)
    return t1


def _resolve_t(model: Model, sample: SequenceSample, coverage_t, clamp: bool) -> int:
    t = model.coverage if coverage_t is None else int(coverage_t)
    if clamp:
        return effective_t(sample.n_frames, model.n_events, t)
    m, n = model.n_events, sample.n_frames
    if n < m or (m - 1) * (t + 1) + 1 > n:
        raise InfeasibleError(
            f"coverage radius t={t} admits no placement of {m} events in {n} frames"
        )
    return t


def _responses(model: Model, sample: SequenceSample) -> np.ndarray:
    if model.dim != sample.dim:
        raise DataError(
            f"model dimension {model.dim} does not match sample dimension {sample.dim}"
        )
    return model.templates @ sample.frames.T  # (M, N)


def infer_greedy(
    model: Model,
    sample: SequenceSample,
    coverage_t: Optional[int] = None,
    clamp: bool = True,
) -> LatentAssignment:
    """Greedy suppression solver.

    Templates are processed in fixed index order. Each takes the remaining
    frame with the highest response (ties toward the smallest index), then
    frames within ``t_eff`` on either side are removed from the candidate
    set. Raises if the candidates run out before all templates are placed,
    which can happen when the suppression windows tile the whole sequence.
    """
    t_eff = _resolve_t(model, sample, coverage_t, clamp)
    resp = _responses(model, sample)
    n = sample.n_frames
    alive = np.ones(n, dtype=bool)
    k = []
    for i in range(model.n_events):
        if not alive.any():
            raise InfeasibleError(
                f"greedy candidate set exhausted after {i} of {model.n_events} picks "
                f"(N={n}, t_eff={t_eff})"
            )
        masked = np.where(alive, resp[i], -np.inf)
        ki = int(np.argmax(masked))  # first occurrence: smallest index wins ties
        k.append(ki)
        alive[max(0, ki - t_eff): ki + t_eff + 1] = False
    return score_fixed(model, sample, k, t_eff=t_eff)


def _ordering_value_and_positions(resp_rows, n: int, gap: int):
    """Exact max of sum(resp_rows[j][p_j]) over p_1 < ... < p_M with
    consecutive distance >= gap, plus the lexicographically smallest
    maximizing positions.

    Suffix recurrence with a running maximum: stage[p] is the best total of
    the remaining slots when the current slot sits at frame p. O(N) per slot.
    """
    m = len(resp_rows)
    stages = [None] * m
    stages[m - 1] = resp_rows[m - 1]
    for j in range(m - 2, -1, -1):
        nxt = stages[j + 1]
        row = resp_rows[j]
        out = [0.0] * n
        run = -np.inf
        for p in range(n - 1, -1, -1):
            q = p + gap
            if q < n and nxt[q] > run:
                run = nxt[q]
            out[p] = row[p] + run
        stages[j] = out
    best = max(stages[0])
    positions = [stages[0].index(best)]
    for j in range(1, m):
        lo = positions[-1] + gap
        seg = stages[j][lo:]
        target = max(seg)
        positions.append(lo + seg.index(target))
    return best, positions


def infer_dp(
    model: Model,
    sample: SequenceSample,
    coverage_t: Optional[int] = None,
    clamp: bool = True,
) -> LatentAssignment:
    """Exact solver.

    Enumerates the M! temporal orderings; within each, the best positions
    are found by the suffix recurrence above, and the ordering's cost-table
    entry is added. Ties across orderings go to the smallest permutation
    rank, ties across positions to the lexicographically smallest position
    vector.
    """
    t_eff = _resolve_t(model, sample, coverage_t, clamp)
    resp = _responses(model, sample)
    m, n = resp.shape
    gap = t_eff + 1
    # Scale responses so the per-ordering value matches the blended total up
    # to the constant global term; with gamma_g == 1 every placement ties
    # and the tie-breaking rules pick rank 1 at the earliest positions.
    local_weight = 1.0 - model.gamma_g
    scaled = (local_weight / m) * resp
    rows = [scaled[i].tolist() for i in range(m)]
    costs = model.ordering_costs
    best_value = -np.inf
    best_k = None
    for rank0, pattern in enumerate(permutations(range(1, m + 1))):
        # pattern[i] is the temporal slot (1-based) of template i; slot j
        # therefore holds template slot_templates[j].
        slot_templates = sorted(range(m), key=lambda i: pattern[i])
        value, positions = _ordering_value_and_positions(
            [rows[i] for i in slot_templates], n, gap
        )
        value += local_weight * float(costs[rank0])
        if value > best_value:
            best_value = value
            k = [0] * m
            for j, tpl in enumerate(slot_templates):
                k[tpl] = positions[j]
            best_k = k
    return score_fixed(model, sample, best_k, t_eff=t_eff)


def infer_brute(
    model: Model,
    sample: SequenceSample,
    coverage_t: Optional[int] = None,
    clamp: bool = True,
) -> LatentAssignment:
    """Exhaustive oracle over all feasible placements.

    Same tie-breaking as ``infer_dp``. Guarded: refuses instances with
    N^M above ``BRUTE_FORCE_GUARD``.
    """
    t_eff = _resolve_t(model, sample, coverage_t, clamp)
    m = model.n_events
    n = sample.n_frames
    if n**m > BRUTE_FORCE_GUARD:
        raise InfeasibleError(
            f"instance too large for brute force (N^M = {n**m} > {BRUTE_FORCE_GUARD})"
        )
    resp = _responses(model, sample)
    gap = t_eff + 1
    combos = np.array(
        [c for c in combinations(range(n), m) if all(c[j + 1] - c[j] >= gap for j in range(m - 1))],
        dtype=np.int64,
    )
    local_weight = 1.0 - model.gamma_g
    scaled = (local_weight / m) * resp
    costs = model.ordering_costs
    best_value = -np.inf
    best_k = None
    for rank0, pattern in enumerate(permutations(range(1, m + 1))):
        slot_templates = sorted(range(m), key=lambda i: pattern[i])
        values = scaled[slot_templates[0]][combos[:, 0]].copy()
        for j in range(1, m):
            values += scaled[slot_templates[j]][combos[:, j]]
        values += local_weight * float(costs[rank0])
        idx = int(np.argmax(values))  # combos are lexicographic, first max wins
        if values[idx] > best_value:
            best_value = float(values[idx])
            k = [0] * m
            for j, tpl in enumerate(slot_templates):
                k[tpl] = int(combos[idx, j])
            best_k = k
    return score_fixed(model, sample, best_k, t_eff=t_eff)


SOLVERS = {
    "greedy": infer_greedy,
    "dp": infer_dp,
    "brute": infer_brute,
}


def infer(model: Model, sample: SequenceSample, config: InferenceConfig) -> LatentAssignment:
    """Run the solver named by ``config`` on one sample."""
    fn = SOLVERS[config.solver]
    return fn(model, sample, coverage_t=config.coverage_t, clamp=config.clamp)
