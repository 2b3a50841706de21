"""Synthetic fixtures with known ground truth.

``generate`` builds labelled feature matrices with informative and noise
blocks; ``generate_comments`` builds comment streams whose pre/post measures
realise chosen effects.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ordquant.data import Dataset, FeatureSchema
from ordquant.errors import ParameterError
from ordquant.labelling import DEFAULT_INTERVENTION, Window
from ordquant.sampling import largest_remainder, make_rng


@dataclass(frozen=True)
class BlockSpec:
    name: str
    dim: int
    separation: float | None = None  # None marks a pure-noise block
    group: str | None = None

    @property
    def is_signal(self) -> bool:
        return self.separation is not None


@dataclass(frozen=True)
class SynthSpec:
    blocks: tuple
    per_class: int | tuple = 1000
    n_classes: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.blocks:
            raise ParameterError("a synthetic spec needs at least one block")
        for b in self.blocks:
            if b.dim <= 0:
                raise ParameterError(f"block {b.name!r} must have positive dimension")
            if b.is_signal and b.separation <= 0:
                raise ParameterError(f"signal block {b.name!r} needs a positive separation")
        if self.n_classes < 2:
            raise ParameterError("need at least two classes")

    def class_sizes(self) -> np.ndarray:
        if np.isscalar(self.per_class):
            return np.full(self.n_classes, int(self.per_class))
        sizes = np.asarray(self.per_class, dtype=np.int64)
        if sizes.shape != (self.n_classes,):
            raise ParameterError("per_class must give one count per class")
        return sizes

    def schema(self) -> FeatureSchema:
        groups: list[tuple[str, list]] = []
        for b in self.blocks:
            g = b.group or b.name
            if groups and groups[-1][0] == g:
                groups[-1][1].append((b.name, b.dim))
            else:
                groups.append((g, [(b.name, b.dim)]))
        return FeatureSchema(tuple((g, tuple(subs)) for g, subs in groups))


def class_positions(n_classes: int) -> np.ndarray:
    """Centred ordinal positions, e.g. ``-2..2`` for five classes."""
    return np.arange(1, n_classes + 1) - (n_classes + 1) / 2


def generate(spec: SynthSpec) -> Dataset:
    """Gaussian blocks: signal dimensions are centred at ``position * separation``
    for the item's class, noise dimensions at 0, all with unit variance."""
    rng = make_rng(spec.seed)
    sizes = spec.class_sizes()
    labels = np.repeat(np.arange(1, spec.n_classes + 1), sizes)
    labels = labels[rng.permutation(labels.size)]
    pos = class_positions(spec.n_classes)[labels - 1]
    parts = []
    for b in spec.blocks:
        block = rng.standard_normal((labels.size, b.dim))
        if b.is_signal:
            block += (pos * b.separation)[:, None]
        parts.append(block)
    X = np.hstack(parts)
    ids = tuple(f"u{i:06d}" for i in range(labels.size))
    return Dataset(X, labels, spec.schema(), ids, spec.n_classes)


def make_spec(
    signal: Sequence[tuple[str, int, float]],
    noise: Sequence[tuple[str, int]],
    per_class=1000,
    n_classes: int = 5,
    seed: int = 0,
) -> SynthSpec:
    """Signal blocks first, then noise blocks, each in its own group."""
    blocks = [BlockSpec(name, dim, sep) for name, dim, sep in signal]
    blocks += [BlockSpec(name, dim) for name, dim in noise]
    return SynthSpec(tuple(blocks), per_class, n_classes, seed)


@dataclass(frozen=True)
class CohortProfile:
    """Users sharing the same pre/post behaviour.

    ``*_communities`` is either a count of equally used communities or a
    list of allocation weights.
    """

    name: str
    users: int
    pre_count: int
    post_count: int
    pre_toxicity: float = 0.4
    post_toxicity: float = 0.4
    pre_communities: int | tuple = 4
    post_communities: int | tuple = 4
    intervention_day_count: int = 0


def _allocation(spec, count: int) -> np.ndarray:
    weights = np.full(spec, 1.0 / spec) if np.isscalar(spec) else np.asarray(spec, dtype=float)
    weights = weights / weights.sum()
    return largest_remainder(weights, count)


def _toxicity_scores(target: float, count: int, rng) -> np.ndarray:
    # the lower half sits below the target; the 75th percentile lands on it
    scores = np.full(count, float(target))
    if count >= 3:
        low = count // 2
        scores[:low] = rng.uniform(0.0, target, size=low)
    return scores[rng.permutation(count)]


def _timestamps(start: dt.date, days: int, count: int, rng) -> list[dt.datetime]:
    day = rng.integers(0, days, size=count)
    sec = rng.integers(0, 86400, size=count)
    base = dt.datetime.combine(start, dt.time())
    return [base + dt.timedelta(days=int(d), seconds=int(s)) for d, s in zip(day, sec)]


def generate_comments(
    cohorts: Sequence[CohortProfile],
    intervention: dt.date = DEFAULT_INTERVENTION,
    seed: int = 0,
    window: Window | None = None,
) -> list[dict]:
    """Comment records (JSONL-ready dicts) realising each cohort's profile."""
    window = window or Window.around(intervention)
    pre_days = (window.intervention - window.pre_start).days
    post_days = (window.post_end - window.intervention).days
    day_after = window.intervention + dt.timedelta(days=1)
    records = []
    for ci, cohort in enumerate(cohorts):
        for u in range(cohort.users):
            rng = make_rng(seed, ci, u)
            user = f"{cohort.name}-{u:04d}"
            periods = [
                (window.pre_start, pre_days, cohort.pre_count, cohort.pre_toxicity, cohort.pre_communities),
                (day_after, post_days, cohort.post_count, cohort.post_toxicity, cohort.post_communities),
            ]
            for start, days, count, tox, comms in periods:
                if count == 0:
                    continue
                alloc = _allocation(comms, count)
                communities = np.repeat(np.arange(alloc.size), alloc)[rng.permutation(count)]
                scores = _toxicity_scores(tox, count, rng)
                for ts, c, s in zip(_timestamps(start, days, count, rng), communities, scores):
                    records.append(_record(user, ts, f"c{int(c)}", s))
            for ts in _timestamps(window.intervention, 1, cohort.intervention_day_count, rng):
                records.append(_record(user, ts, "c-ban-day", 1.0))
    records.sort(key=lambda r: (r["timestamp"], r["user_id"]))
    return records


def _record(user: str, ts: dt.datetime, community: str, toxicity: float) -> dict:
    return {
        "user_id": user,
        "timestamp": ts.isoformat(),
        "community_id": community,
        "toxicity": float(toxicity),
    }


# pre/post settings per ordinal level under thresholds (0.2, 0.55)
ACTIVITY_POST = {1: 36, 2: 72, 3: 120, 4: 170, 5: 240}  # pre 120
TOXICITY_POST = {1: 0.1, 2: 0.24, 3: 0.4, 4: 0.56, 5: 0.8}  # pre 0.4
DIVERSITY_POST = {1: 1, 2: 3, 3: 4, 4: 5, 5: 8}  # pre 4 communities


def label_cohorts(users: int = 3, rotate: bool = True) -> list[tuple[CohortProfile, dict]]:
    """Cohorts covering every label for every task.

    Returns ``(profile, {task: intended_label})`` pairs. With ``rotate`` the
    toxicity and diversity labels are shifted against the activity label so
    that the tasks do not move in lockstep.
    """
    out = []
    shifts = [(0, 0)] + ([(1, 2), (3, 4)] if rotate else [])
    for a_shift, d_shift in shifts:
        for level in range(1, 6):
            tox = (level - 1 + a_shift) % 5 + 1
            div = (level - 1 + d_shift) % 5 + 1
            profile = CohortProfile(
                name=f"a{level}t{tox}d{div}",
                users=users,
                pre_count=120,
                post_count=ACTIVITY_POST[level],
                pre_toxicity=0.4,
                post_toxicity=TOXICITY_POST[tox],
                pre_communities=4,
                post_communities=DIVERSITY_POST[div],
                intervention_day_count=2,
            )
            out.append((profile, {"activity": level, "toxicity": tox, "diversity": div}))
    return out
