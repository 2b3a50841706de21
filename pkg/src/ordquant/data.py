"""Shared data model: ordinal labels, feature schemas, datasets, prevalences."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ordquant.errors import (
    EmptyInputError,
    IngestionError,
    InvalidSelectionError,
    SchemaMismatchError,
    ShapeError,
)

PREVALENCE_ATOL = 1e-8

BlockSelection = frozenset  # of subgroup names


class OrdinalLabel(enum.IntEnum):
    HIGHLY_DECREASED = 1
    MODERATELY_DECREASED = 2
    NO_VARIATION = 3
    MODERATELY_INCREASED = 4
    HIGHLY_INCREASED = 5


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered registry of feature groups, their subgroups (blocks) and widths.

    ``groups`` is a tuple of ``(group_name, ((subgroup_name, n_columns), ...))``.
    Blocks occupy contiguous column ranges in declaration order.
    """

    groups: tuple[tuple[str, tuple[tuple[str, int], ...]], ...]
    _ranges: dict = field(init=False, repr=False, compare=False)
    _group_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(
            (str(g), tuple((str(s), int(c)) for s, c in subs)) for g, subs in self.groups
        )
        object.__setattr__(self, "groups", groups)
        ranges: dict[str, tuple[int, int]] = {}
        group_of: dict[str, str] = {}
        start = 0
        seen_groups = set()
        for gname, subs in groups:
            if gname in seen_groups:
                raise SchemaMismatchError(f"duplicate group name {gname!r}")
            seen_groups.add(gname)
            if not subs:
                raise SchemaMismatchError(f"group {gname!r} has no subgroups")
            for sname, count in subs:
                if sname in ranges:
                    raise SchemaMismatchError(f"duplicate subgroup name {sname!r}")
                if count <= 0:
                    raise SchemaMismatchError(
                        f"subgroup {sname!r} must have a positive column count, got {count}"
                    )
                ranges[sname] = (start, start + count)
                group_of[sname] = gname
                start += count
        if not ranges:
            raise SchemaMismatchError("schema declares no blocks")
        object.__setattr__(self, "_ranges", ranges)
        object.__setattr__(self, "_group_of", group_of)

    @classmethod
    def from_blocks(cls, blocks: Sequence[tuple[str, int]], group: str | None = None) -> FeatureSchema:
        """One group per block, or all blocks under ``group`` when given."""
        if group is not None:
            return cls(((group, tuple(blocks)),))
        return cls(tuple((name, ((name, count),)) for name, count in blocks))

    @property
    def blocks(self) -> list[str]:
        return list(self._ranges)

    @property
    def group_names(self) -> list[str]:
        return [g for g, _ in self.groups]

    @property
    def n_columns(self) -> int:
        return next(reversed(self._ranges.values()))[1]

    @property
    def n_blocks(self) -> int:
        return len(self._ranges)

    def column_range(self, block: str) -> tuple[int, int]:
        try:
            return self._ranges[block]
        except KeyError:
            raise SchemaMismatchError(f"unknown subgroup {block!r}") from None

    def width(self, block: str) -> int:
        start, stop = self.column_range(block)
        return stop - start

    def group_of(self, block: str) -> str:
        self.column_range(block)
        return self._group_of[block]

    def blocks_in_group(self, group: str) -> list[str]:
        for gname, subs in self.groups:
            if gname == group:
                return [s for s, _ in subs]
        raise SchemaMismatchError(f"unknown group {group!r}")

    def ordered(self, selection: Iterable[str]) -> list[str]:
        """Selection members in schema order; raises on unknown names."""
        selection = set(selection)
        unknown = selection.difference(self._ranges)
        if unknown:
            raise SchemaMismatchError(f"unknown subgroup(s): {sorted(unknown)}")
        return [b for b in self._ranges if b in selection]

    def columns(self, selection: Iterable[str]) -> np.ndarray:
        cols = [np.arange(*self._ranges[b]) for b in self.ordered(selection)]
        return np.concatenate(cols) if cols else np.empty(0, dtype=int)

    def restrict(self, selection: Iterable[str]) -> FeatureSchema:
        keep = set(self.ordered(selection))
        groups = []
        for gname, subs in self.groups:
            kept = tuple((s, c) for s, c in subs if s in keep)
            if kept:
                groups.append((gname, kept))
        return FeatureSchema(tuple(groups))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labelled feature matrix bound to a schema.

    Labels are ordinal levels in ``1..n_classes``.
    """

    features: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema
    ids: tuple = None
    n_classes: int = 5

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {X.shape}")
        y = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[1] != self.schema.n_columns:
            raise SchemaMismatchError(
                f"schema declares {self.schema.n_columns} columns but features have {X.shape[1]}"
            )
        if not np.all(np.isfinite(X)):
            row = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise IngestionError(f"non-finite feature value in row {row}")
        if y.size and (y.min() < 1 or y.max() > self.n_classes):
            raise IngestionError(f"labels must lie in 1..{self.n_classes}")
        ids = tuple(range(X.shape[0])) if self.ids is None else tuple(self.ids)
        if len(ids) != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} feature rows but {len(ids)} ids")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index) -> Dataset:
        """Rows selected by an integer index array, in the given order."""
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.features[index],
            self.labels[index],
            self.schema,
            tuple(self.ids[i] for i in index),
            self.n_classes,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels - 1, minlength=self.n_classes)

    def prevalence(self) -> np.ndarray:
        return empirical_prevalence(self.labels, self.n_classes)


def project(dataset: Dataset, selection: Iterable[str]) -> Dataset:
    """Keep only the columns of the selected blocks, in schema order."""
    selection = frozenset(selection)
    if not selection:
        raise InvalidSelectionError("feature selection is empty")
    cols = dataset.schema.columns(selection)
    return Dataset(
        dataset.features[:, cols],
        dataset.labels,
        dataset.schema.restrict(selection),
        dataset.ids,
        dataset.n_classes,
    )


def empirical_prevalence(labels: Sequence[int], n: int) -> np.ndarray:
    """Relative frequency of each ordinal level ``1..n``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise EmptyInputError("cannot compute the prevalence of an empty label sequence")
    if labels.min() < 1 or labels.max() > n:
        raise ShapeError(f"labels must lie in 1..{n}")
    return np.bincount(labels - 1, minlength=n) / labels.size


def check_prevalence(p, n: int | None = None) -> np.ndarray:
    """Validate a simplex point and return it as a float array."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if n is not None and p.size != n:
        raise ShapeError(f"expected {n} prevalence components, got {p.size}")
    if np.any(p < -PREVALENCE_ATOL) or np.any(p > 1 + PREVALENCE_ATOL):
        raise ValueError(f"prevalence components must lie in [0, 1]: {p}")
    if abs(p.sum() - 1.0) > PREVALENCE_ATOL:
        raise ValueError(f"prevalence must sum to 1, sums to {p.sum()!r}")
    return p


def is_prevalence(p, atol: float = PREVALENCE_ATOL) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(p >= -atol) and np.all(p <= 1 + atol) and abs(p.sum() - 1) <= atol)
