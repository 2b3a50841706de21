"""Ground-truth labels from per-user comment histories.

A user's behaviour is summarised per period (before/after an intervention)
for three tasks, the relative change is computed, and the change is cut into
five ordinal classes.
"""
from __future__ import annotations

import calendar
import datetime as dt
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ordquant.data import Dataset, FeatureSchema, OrdinalLabel
from ordquant.errors import IngestionError, ParameterError, UndefinedMeasureError

log = logging.getLogger(__name__)

TASKS = ("activity", "toxicity", "diversity")
DEFAULT_INTERVENTION = dt.date(2020, 6, 29)
D_MODERATE = 0.2
D_HIGH = 0.55
HILL_Q = 1.5
MIN_POST_COMMENTS = 10


def add_months(day: dt.date, months: int) -> dt.date:
    month0 = day.month - 1 + months
    year, month = day.year + month0 // 12, month0 % 12 + 1
    return dt.date(year, month, min(day.day, calendar.monthrange(year, month)[1]))


@dataclass(frozen=True)
class Window:
    """Observation window: ``pre`` is [pre_start, intervention), ``post`` is
    (intervention, post_end]; the intervention day itself belongs to neither."""

    pre_start: dt.date
    intervention: dt.date
    post_end: dt.date

    @classmethod
    def around(cls, intervention: dt.date = DEFAULT_INTERVENTION, months: int = 7) -> Window:
        return cls(add_months(intervention, -months), intervention, add_months(intervention, months))

    def period(self, ts: dt.datetime) -> str | None:
        day = ts.date()
        if self.pre_start <= day < self.intervention:
            return "pre"
        if self.intervention < day <= self.post_end:
            return "post"
        return None


@dataclass(frozen=True)
class CommentRecord:
    user_id: str
    timestamp: dt.datetime
    community_id: str
    toxicity: float
    period: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.toxicity <= 1.0:
            raise IngestionError(f"toxicity must lie in [0, 1], got {self.toxicity}")

    @classmethod
    def from_dict(cls, rec: Mapping, window: Window | None = None) -> CommentRecord:
        try:
            ts = dt.datetime.fromisoformat(str(rec["timestamp"]))
            user, community, tox = str(rec["user_id"]), str(rec["community_id"]), float(rec["toxicity"])
        except (KeyError, ValueError, TypeError) as exc:
            raise IngestionError(f"malformed comment record {rec!r}: {exc}") from None
        period = window.period(ts) if window is not None else rec.get("period")
        return cls(user, ts, community, tox, period)


def _in_period(comments: Iterable[CommentRecord], period: str) -> list[CommentRecord]:
    return [c for c in comments if c.period == period]


def activity_measure(comments: Iterable[CommentRecord], period: str) -> int:
    return len(_in_period(comments, period))


def toxicity_percentile(scores: Sequence[float], pct: float = 75.0) -> float:
    """Percentile with linear interpolation between order statistics."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise UndefinedMeasureError("toxicity is undefined without comments")
    return float(np.percentile(scores, pct, method="linear"))


def toxicity_measure(comments: Iterable[CommentRecord], period: str) -> float:
    return toxicity_percentile([c.toxicity for c in _in_period(comments, period)])


def hill_number(counts, q: float = HILL_Q) -> float:
    """Hill diversity ``(sum p_i^q)^(1/(1-q))`` of a vector of category counts."""
    if q == 1:
        raise ParameterError("q = 1 is the Shannon limit and is not supported")
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    if counts.size == 0:
        raise UndefinedMeasureError("diversity is undefined without comments")
    p = counts / counts.sum()
    return float(np.sum(p ** q) ** (1.0 / (1.0 - q)))


def hill_diversity(comments: Iterable[CommentRecord], period: str, q: float = HILL_Q) -> float:
    per_community: dict[str, int] = defaultdict(int)
    for c in _in_period(comments, period):
        per_community[c.community_id] += 1
    return hill_number(list(per_community.values()), q)


def effect(pre: float, post: float) -> float | None:
    """Relative change ``(post - pre) / pre``; None when ``pre`` is zero."""
    if pre == 0:
        return None
    return (post - pre) / pre


def label(value: float, d_mod: float = D_MODERATE, d_high: float = D_HIGH) -> OrdinalLabel:
    """Five-way cut of an effect; boundary values go to the milder class."""
    if not 0 < d_mod < d_high:
        raise ParameterError(f"thresholds must satisfy 0 < d_mod < d_high, got ({d_mod}, {d_high})")
    if value > d_high:
        return OrdinalLabel.HIGHLY_INCREASED
    if value > d_mod:
        return OrdinalLabel.MODERATELY_INCREASED
    if value >= -d_mod:
        return OrdinalLabel.NO_VARIATION
    if value >= -d_high:
        return OrdinalLabel.MODERATELY_DECREASED
    return OrdinalLabel.HIGHLY_DECREASED


@dataclass(frozen=True)
class UserEffect:
    user_id: str
    task: str
    pre: float | None
    post: float | None
    effect: float | None
    label: OrdinalLabel | None
    reason: str = ""  # why the user is unlabelled, if so


MEASURES = {
    "activity": activity_measure,
    "toxicity": toxicity_measure,
    "diversity": hill_diversity,
}


def user_effect(
    user_id: str,
    comments: Sequence[CommentRecord],
    task: str,
    thresholds: tuple[float, float] = (D_MODERATE, D_HIGH),
    min_post_comments: int = MIN_POST_COMMENTS,
) -> UserEffect:
    if task not in MEASURES:
        raise ParameterError(f"unknown task {task!r}; expected one of {TASKS}")
    measure = MEASURES[task]
    n_post = activity_measure(comments, "post")
    if task != "activity" and n_post < min_post_comments:
        return UserEffect(user_id, task, None, None, None, None, "too-few-post-comments")
    try:
        pre, post = measure(comments, "pre"), measure(comments, "post")
    except UndefinedMeasureError:
        return UserEffect(user_id, task, None, None, None, None, "undefined-measure")
    value = effect(pre, post)
    if value is None:
        return UserEffect(user_id, task, pre, post, None, None, "zero-pre-measure")
    return UserEffect(user_id, task, pre, post, value, label(value, *thresholds))


def group_by_user(comments: Iterable, window: Window | None = None) -> dict[str, list[CommentRecord]]:
    """Bucket records by user, assigning periods from ``window`` when given.

    Per-user lists are sorted by timestamp so input order never matters.
    """
    by_user: dict[str, list[CommentRecord]] = defaultdict(list)
    for rec in comments:
        if not isinstance(rec, CommentRecord):
            rec = CommentRecord.from_dict(rec, window)
        elif window is not None:
            rec = CommentRecord(rec.user_id, rec.timestamp, rec.community_id, rec.toxicity,
                                window.period(rec.timestamp))
        by_user[rec.user_id].append(rec)
    for recs in by_user.values():
        recs.sort(key=lambda c: (c.timestamp, c.community_id, c.toxicity))
    return dict(by_user)


def user_effects(
    comments: Iterable,
    task: str,
    thresholds: tuple[float, float] = (D_MODERATE, D_HIGH),
    min_post_comments: int = MIN_POST_COMMENTS,
    window: Window | None = None,
) -> dict[str, UserEffect]:
    window = window or Window.around()
    by_user = group_by_user(comments, window)
    return {
        u: user_effect(u, recs, task, thresholds, min_post_comments)
        for u, recs in sorted(by_user.items())
    }


def build_labelled_dataset(
    comments: Iterable,
    features,
    ids: Sequence,
    schema: FeatureSchema,
    task: str,
    thresholds: tuple[float, float] = (D_MODERATE, D_HIGH),
    min_post_comments: int = MIN_POST_COMMENTS,
    window: Window | None = None,
) -> Dataset:
    """Join per-user labels for ``task`` with feature rows keyed by user id.

    Users lacking comments or a defined label are dropped (counts are
    logged). Row order follows ``ids``.
    """
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise IngestionError(f"duplicate feature id {dup!r}")
    label(0.0, *thresholds)
    effects = user_effects(comments, task, thresholds, min_post_comments, window)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != len(ids):
        raise IngestionError(f"{features.shape[0]} feature rows but {len(ids)} ids")
    rows, labels, kept = [], [], []
    no_comments = unlabelled = 0
    for i, uid in enumerate(ids):
        eff = effects.get(uid)
        if eff is None:
            no_comments += 1
        elif eff.label is None:
            unlabelled += 1
        else:
            rows.append(i)
            labels.append(int(eff.label))
            kept.append(uid)
    if no_comments or unlabelled:
        log.info("%s: dropped %d users without comments and %d without a label",
                 task, no_comments, unlabelled)
    X = features[rows] if rows else np.empty((0, features.shape[1]))
    return Dataset(X, labels, schema, kept)
