"""Stress-test protocol: incremental training sizes evaluated under APP."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ordquant._parallel import parallel_map
from ordquant.classifier import HyperGrid, grid_search
from ordquant.data import Dataset, project
from ordquant.errors import InfeasibleSampleError, ParameterError, ProtocolError
from ordquant.metrics import nmd_rows
from ordquant.quantifiers import KINDS, fit_quantifier
from ordquant.sampling import kraemer_samples, make_rng, sample_indices

log = logging.getLogger(__name__)

# stream tags mixed into the seed key
_SPLIT, _TARGETS, _DRAW, _GRID, _CV = range(5)


@dataclass(frozen=True)
class ProtocolConfig:
    repetitions: int = 5
    train_pool_size: int = 8000
    batch_size: int = 500
    batch_count: int = 16
    app_samples: int = 1000
    app_sample_size: int = 500
    seed: int = 0
    grid: HyperGrid = field(default_factory=HyperGrid)
    val_fraction: float = 0.4
    val_samples: int = 100
    val_sample_size: int = 250
    cv_folds: int = 10
    max_skip_fraction: float = 0.1
    threads: int = 1

    def __post_init__(self):
        counts = dict(
            repetitions=self.repetitions,
            train_pool_size=self.train_pool_size,
            batch_size=self.batch_size,
            batch_count=self.batch_count,
            app_samples=self.app_samples,
            app_sample_size=self.app_sample_size,
        )
        for name, value in counts.items():
            if int(value) <= 0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if self.batch_size * self.batch_count != self.train_pool_size:
            raise ParameterError(
                f"batch_size x batch_count ({self.batch_size} x {self.batch_count}) "
                f"must equal train_pool_size ({self.train_pool_size})"
            )
        if not 0 < self.val_fraction < 1:
            raise ParameterError("val_fraction must lie in (0, 1)")

    @classmethod
    def scaled(cls, batch_size: int, batch_count: int, **kwargs) -> ProtocolConfig:
        return cls(batch_size=batch_size, batch_count=batch_count,
                   train_pool_size=batch_size * batch_count, **kwargs)

    def with_seed(self, seed: int) -> ProtocolConfig:
        return replace(self, seed=seed)

    @property
    def train_sizes(self) -> list[int]:
        return [self.batch_size * t for t in range(1, self.batch_count + 1)]


@dataclass(eq=False)
class EvalResult:
    """Per-sample scores of one protocol run, one row per (repetition, size, sample)."""

    repetition: np.ndarray
    train_size: np.ndarray
    sample_idx: np.ndarray
    true_prev: np.ndarray
    est_prev: np.ndarray
    nmd: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return self.nmd.shape[0]

    def mean_by_size(self) -> dict[int, float]:
        return {
            int(s): float(self.nmd[self.train_size == s].mean())
            for s in np.unique(self.train_size)
        }

    @property
    def mnmd(self) -> float:
        return float(np.mean(list(self.mean_by_size().values())))

    def to_csv(self, path) -> None:
        n = self.true_prev.shape[1]
        header = (
            ["repetition", "train_size", "sample_idx"]
            + [f"true_prev_{i}" for i in range(1, n + 1)]
            + [f"est_prev_{i}" for i in range(1, n + 1)]
            + ["nmd"]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                w.writerow(
                    [int(self.repetition[i]), int(self.train_size[i]), int(self.sample_idx[i])]
                    + [repr(float(v)) for v in self.true_prev[i]]
                    + [repr(float(v)) for v in self.est_prev[i]]
                    + [repr(float(self.nmd[i]))]
                )

    @classmethod
    def from_csv(cls, path) -> EvalResult:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = sum(1 for h in header if h.startswith("true_prev_"))
        arr = np.array(body, dtype=object).reshape(len(body), len(header))
        return cls(
            arr[:, 0].astype(np.int64),
            arr[:, 1].astype(np.int64),
            arr[:, 2].astype(np.int64),
            arr[:, 3:3 + n].astype(np.float64).reshape(len(body), n),
            arr[:, 3 + n:3 + 2 * n].astype(np.float64).reshape(len(body), n),
            arr[:, 3 + 2 * n].astype(np.float64),
        )

    def equals(self, other: EvalResult) -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("repetition", "train_size", "sample_idx", "true_prev", "est_prev", "nmd")
        )


def derived_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def app_samples(labels, n_classes: int, count: int, size: int, seed: int, *key: int):
    """Materialise ``count`` APP samples from a labelled pool.

    Returns ``(indices, true_prevalences, sample_ids, skipped)``; samples
    whose target needs a class missing from the pool are skipped.
    """
    targets = kraemer_samples(n_classes, count, make_rng(seed, *key, _TARGETS))
    indices, truths, kept = [], [], []
    for i, p in enumerate(targets):
        try:
            idx = sample_indices(labels, p, size, make_rng(seed, *key, _DRAW, i), n_classes)
        except InfeasibleSampleError:
            continue
        indices.append(idx)
        truths.append(np.bincount(labels[idx] - 1, minlength=n_classes) / size)
        kept.append(i)
    return indices, np.array(truths).reshape(-1, n_classes), kept, count - len(kept)


def fit_for_protocol(kind: str, train: Dataset, cfg: ProtocolConfig, seed: int):
    """Model selection followed by a fit on the whole training set."""
    def factory(ds, reg, cw):
        return fit_quantifier(kind, ds, reg, cw, rng=make_rng(seed, _CV), k=cfg.cv_folds)

    if kind == "mlpe":
        return fit_quantifier("mlpe", train)
    reg, cw = grid_search(
        train,
        cfg.grid,
        factory,
        train_fraction=1 - cfg.val_fraction,
        samples=cfg.val_samples,
        sample_size=cfg.val_sample_size,
        seed=derived_seed(seed, _GRID),
        threads=cfg.threads,
    )
    return factory(train, reg, cw)


def run_protocol(data: Dataset, selection, kind: str, cfg: ProtocolConfig) -> EvalResult:
    """Train on growing prefixes of a random labelled pool and score each model
    on APP samples drawn from the remaining instances.

    Test samples are regenerated for every repetition and shared across
    training sizes within a repetition.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown quantifier kind {kind!r}")
    data = project(data, data.schema.blocks if selection is None else selection)
    if len(data) <= cfg.train_pool_size:
        raise ProtocolError(
            f"dataset has {len(data)} instances; need more than train_pool_size={cfg.train_pool_size}"
        )
    n = data.n_classes

    def one_repetition(r):
        perm = make_rng(cfg.seed, r, _SPLIT).permutation(len(data))
        pool_idx, test_idx = perm[: cfg.train_pool_size], perm[cfg.train_pool_size:]
        test = data.subset(test_idx)
        indices, truths, kept, skipped = app_samples(
            test.labels, n, cfg.app_samples, cfg.app_sample_size, cfg.seed, r
        )
        rows = []
        for t, size in enumerate(cfg.train_sizes, start=1):
            train = data.subset(pool_idx[:size])
            q = fit_for_protocol(kind, train, cfg, derived_seed(cfg.seed, r, t))
            P = q.posteriors(test.features)
            est = q.aggregate_many(P, indices).reshape(-1, n)
            rows.append((size, est))
        return kept, truths, rows, skipped

    reps = parallel_map(one_repetition, range(cfg.repetitions), cfg.threads)
    skipped = sum(r[3] for r in reps)
    total = cfg.repetitions * cfg.app_samples
    if skipped > cfg.max_skip_fraction * total:
        raise ProtocolError(f"{skipped} of {total} APP samples were infeasible")
    if skipped:
        log.warning("%d of %d APP samples skipped as infeasible", skipped, total)

    cols = {k: [] for k in ("rep", "size", "idx", "true", "est")}
    for r, (kept, truths, rows, _) in enumerate(reps):
        for size, est in rows:
            cols["rep"].append(np.full(len(kept), r))
            cols["size"].append(np.full(len(kept), size))
            cols["idx"].append(np.asarray(kept, dtype=np.int64))
            cols["true"].append(truths)
            cols["est"].append(est)
    true_prev = np.vstack(cols["true"])
    est_prev = np.vstack(cols["est"])
    return EvalResult(
        np.concatenate(cols["rep"]).astype(np.int64),
        np.concatenate(cols["size"]).astype(np.int64),
        np.concatenate(cols["idx"]).astype(np.int64),
        true_prev,
        est_prev,
        nmd_rows(true_prev, est_prev),
        skipped,
    )
