"""Curriculum batch construction over a pairwise change-score matrix.

A batch is scored by summing the change scores of every ordered pair of
members. Greedy construction seeds each batch with a uniformly random
sample, then repeatedly ranks the remaining pool by how much each candidate
would add to the batch score and picks the candidate at the quantile rank
``floor(alpha * (pool_size - 1))``: alpha 0 keeps batches easy, alpha 1
makes them as hard as possible, and schedules move alpha across epochs.

Construction maintains a running additive score per candidate (O(pool) to
update after each pick, O(N^2) per epoch) and records the final batch score
by full recomputation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError
from .trajectory import DeltaMatrix

SCHEDULE_KINDS = ("random", "easy_only", "hard_only", "linear", "sqrt", "log")


@dataclass(frozen=True)
class Batch:
    """One constructed batch: member ids, its score, and the random seed id."""

    ids: tuple[int, ...]
    score: float
    seed_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(self.ids) == 0:
            raise ValueError("batch must be non-empty")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("batch ids must be distinct")
        if self.seed_id not in self.ids:
            raise ValueError("seed_id must be a member of the batch")


@dataclass(frozen=True)
class EpochPlan:
    """All batches of one epoch plus the alpha and rng seed that built them."""

    epoch: int
    alpha: float
    batches: tuple[Batch, ...]
    rng_seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "batches", tuple(self.batches))
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        seen: set[int] = set()
        for b in self.batches:
            if seen & set(b.ids):
                raise ValueError("batches of one epoch must be disjoint")
            seen.update(b.ids)

    @property
    def ids(self) -> set[int]:
        return {i for b in self.batches for i in b.ids}


@dataclass(frozen=True)
class Schedule:
    """Alpha schedule over a fixed number of epochs."""

    kind: str
    total_epochs: int

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")


def _delta_values(delta: DeltaMatrix | np.ndarray) -> np.ndarray:
    vals = delta.values if isinstance(delta, DeltaMatrix) else np.asarray(delta, dtype=float)
    if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
        raise ValueError(f"change-score matrix must be square, got shape {vals.shape}")
    return vals


def _ids_of(batch: Batch | Sequence[int]) -> list[int]:
    ids = list(batch.ids) if isinstance(batch, Batch) else [int(i) for i in batch]
    if len(set(ids)) != len(ids):
        raise ValueError("batch ids must be distinct")
    return ids


def batch_score(batch: Batch | Sequence[int], delta: DeltaMatrix | np.ndarray) -> float:
    """Sum of change scores over all ordered member pairs (both directions)."""
    vals = _delta_values(delta)
    ids = _ids_of(batch)
    if any(i < 0 or i >= vals.shape[0] for i in ids):
        raise ValueError("batch id outside the change matrix")
    sub = vals[np.ix_(ids, ids)]
    return float(sub.sum() - np.trace(sub))


def incremental_score(
    candidate: int, batch: Batch | Sequence[int], delta: DeltaMatrix | np.ndarray
) -> float:
    """Score increase from adding ``candidate``: sum of delta[i,u] + delta[u,i]."""
    vals = _delta_values(delta)
    ids = _ids_of(batch)
    u = int(candidate)
    if u in ids:
        raise ValueError(f"candidate {u} is already a member of the batch")
    if u < 0 or u >= vals.shape[0]:
        raise ValueError("candidate id outside the change matrix")
    if not ids:
        return 0.0
    return float(vals[ids, u].sum() + vals[u, ids].sum())


def select_by_score(
    pool: Sequence[int],
    batch: Batch | Sequence[int],
    delta: DeltaMatrix | np.ndarray,
    alpha: float,
) -> int:
    """Pick the pool candidate at quantile rank floor(alpha * (|pool| - 1)).

    Candidates are ranked by ascending incremental score, ties broken by
    ascending id.
    """
    vals = _delta_values(delta)
    pool_arr = np.array(sorted(int(u) for u in pool), dtype=int)
    if pool_arr.size == 0:
        raise ValueError("pool must be non-empty")
    if len(set(pool_arr.tolist())) != pool_arr.size:
        raise ValueError("pool ids must be distinct")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    ids = _ids_of(batch)
    if set(ids) & set(pool_arr.tolist()):
        raise ValueError("pool must not overlap the batch")
    if ids:
        gains = vals[np.ix_(ids, pool_arr)].sum(axis=0) + vals[np.ix_(pool_arr, ids)].sum(axis=1)
    else:
        gains = np.zeros(pool_arr.size)
    order = np.lexsort((pool_arr, gains))
    rank = min(int(math.floor(alpha * (pool_arr.size - 1))), pool_arr.size - 1)
    return int(pool_arr[order[rank]])


def _group_lookup(groups: Mapping[int, int] | Sequence[int] | np.ndarray | None):
    if groups is None:
        return None
    if isinstance(groups, Mapping):
        return lambda i: groups[i]
    arr = np.asarray(groups)
    return lambda i: int(arr[i])


def build_batches(
    ids: Sequence[int],
    delta: DeltaMatrix | np.ndarray,
    alpha: float,
    batch_size: int,
    rng: np.random.Generator,
    *,
    groups: Mapping[int, int] | Sequence[int] | np.ndarray | None = None,
    exclude_same_group: bool = False,
) -> list[Batch]:
    """Partition ``ids`` into greedily built batches of ``batch_size``.

    Each batch starts from a uniformly random seed drawn from the remaining
    pool and is filled by quantile-rank picks at ``alpha``. The final batch
    may be short when len(ids) is not a multiple of batch_size.

    With ``exclude_same_group`` set, candidates sharing a group with a
    current member are skipped while any alternative remains; the guard
    yields (rather than stall) when every remaining candidate collides.
    """
    vals = _delta_values(delta)
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    universe = np.array(sorted(int(i) for i in ids), dtype=int)
    if universe.size == 0:
        raise ValueError("ids must be non-empty")
    if len(set(universe.tolist())) != universe.size:
        raise ValueError("ids must be distinct")
    if universe[0] < 0 or universe[-1] >= vals.shape[0]:
        raise ValueError("id outside the change matrix")
    lookup = _group_lookup(groups)
    if exclude_same_group and lookup is None:
        raise ValueError("exclude_same_group requires group assignments")

    alive = np.ones(universe.size, dtype=bool)
    batches: list[Batch] = []
    while alive.any():
        alive_pos = np.flatnonzero(alive)
        seed_pos = int(alive_pos[int(rng.integers(alive_pos.size))])
        seed_id = int(universe[seed_pos])
        alive[seed_pos] = False
        members = [seed_id]
        running = vals[seed_id, universe] + vals[universe, seed_id]
        while len(members) < batch_size and alive.any():
            cand = np.flatnonzero(alive)
            if exclude_same_group:
                member_groups = {lookup(m) for m in members}
                keep = np.fromiter(
                    (lookup(int(universe[p])) not in member_groups for p in cand),
                    dtype=bool,
                    count=cand.size,
                )
                if keep.any():
                    cand = cand[keep]
            order = np.lexsort((universe[cand], running[cand]))
            rank = min(int(math.floor(alpha * (cand.size - 1))), cand.size - 1)
            pos = int(cand[order[rank]])
            picked = int(universe[pos])
            alive[pos] = False
            members.append(picked)
            running = running + vals[picked, universe] + vals[universe, picked]
        batches.append(Batch(tuple(members), batch_score(members, vals), seed_id))
    return batches


def schedule_alpha(schedule: Schedule, epoch: int) -> float:
    """Alpha at ``epoch`` under the schedule, clamped to [0, 1].

    ``random`` and ``easy_only`` sit at 0, ``hard_only`` at 1; ``linear``,
    ``sqrt`` and ``log`` ramp from 0 at epoch 0 to 1 at the final epoch,
    the log ramp via ln(1 + (e/E) * (e_const - 1)).
    """
    total = schedule.total_epochs
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    kind = schedule.kind
    if kind in ("random", "easy_only"):
        alpha = 0.0
    elif kind == "hard_only":
        alpha = 1.0
    elif kind == "linear":
        alpha = epoch / total
    elif kind == "sqrt":
        alpha = math.sqrt(epoch / total)
    else:  # log
        alpha = math.log1p((epoch / total) * (math.e - 1.0))
    return min(1.0, max(0.0, alpha))


def _epoch_seed(base_seed: int, epoch: int) -> int:
    ss = np.random.SeedSequence([int(base_seed), int(epoch)])
    return int(ss.generate_state(1, np.uint64)[0])


def plan_epochs(
    schedule: Schedule,
    delta: DeltaMatrix | np.ndarray,
    batch_size: int,
    base_seed: int,
    *,
    groups: Mapping[int, int] | Sequence[int] | np.ndarray | None = None,
    exclude_same_group: bool = False,
) -> list[EpochPlan]:
    """Build one EpochPlan per epoch.

    Each epoch draws its rng from a seed derived from (base_seed, epoch),
    so plans are reproducible run to run. Under the ``random`` kind the
    ids are uniformly shuffled into batches and selection is bypassed
    (alpha is recorded as 0.0).
    """
    vals = _delta_values(delta)
    if base_seed < 0:
        raise ValueError("base_seed must be non-negative")
    n = vals.shape[0]
    plans = []
    for epoch in range(schedule.total_epochs):
        seed = _epoch_seed(base_seed, epoch)
        rng = np.random.default_rng(seed)
        if schedule.kind == "random":
            alpha = 0.0
            perm = rng.permutation(n)
            batches = tuple(
                Batch(tuple(int(x) for x in perm[i : i + batch_size]),
                      batch_score(perm[i : i + batch_size], vals),
                      int(perm[i]))
                for i in range(0, n, batch_size)
            )
        else:
            alpha = schedule_alpha(schedule, epoch)
            batches = tuple(
                build_batches(
                    range(n), vals, alpha, batch_size, rng,
                    groups=groups, exclude_same_group=exclude_same_group,
                )
            )
        plans.append(EpochPlan(epoch, alpha, batches, seed))
    return plans


def write_plans(plans: Sequence[EpochPlan], path: str | Path) -> None:
    """Write plans as JSONL, one object per batch."""
    lines = []
    for plan in plans:
        for b_idx, batch in enumerate(plan.batches):
            lines.append(
                json.dumps(
                    {
                        "epoch": plan.epoch,
                        "alpha": plan.alpha,
                        "batch_index": b_idx,
                        "ids": list(batch.ids),
                        "score": batch.score,
                        "seed_id": batch.seed_id,
                    }
                )
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_plans(path: str | Path) -> list[EpochPlan]:
    """Read a JSONL plan file back into EpochPlans (rng seeds are not stored)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    per_epoch: dict[int, dict[int, Batch]] = {}
    alphas: dict[int, float] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            epoch = int(rec["epoch"])
            alpha = float(rec["alpha"])
            b_idx = int(rec["batch_index"])
            batch = Batch(tuple(int(i) for i in rec["ids"]), float(rec["score"]), int(rec["seed_id"]))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad plan record ({exc})") from exc
        if epoch in alphas and alphas[epoch] != alpha:
            raise FormatError(f"{path}:{lineno}: inconsistent alpha within epoch {epoch}")
        alphas[epoch] = alpha
        slot = per_epoch.setdefault(epoch, {})
        if b_idx in slot:
            raise FormatError(f"{path}:{lineno}: duplicate batch index {b_idx} in epoch {epoch}")
        slot[b_idx] = batch
    if sorted(per_epoch) != list(range(len(per_epoch))):
        raise FormatError(f"{path}: epochs must be contiguous from 0")
    plans = []
    for epoch in range(len(per_epoch)):
        slot = per_epoch[epoch]
        if sorted(slot) != list(range(len(slot))):
            raise FormatError(f"{path}: batch indices of epoch {epoch} must be contiguous from 0")
        try:
            plans.append(EpochPlan(epoch, alphas[epoch], tuple(slot[i] for i in range(len(slot)))))
        except ValueError as exc:
            raise FormatError(f"{path}: epoch {epoch}: {exc}") from exc
    return plans
