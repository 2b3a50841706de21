"""Seeded random streams and artificial-prevalence sampling."""
from __future__ import annotations

import numpy as np

from ordquant.data import Dataset, check_prevalence
from ordquant.errors import EmptyInputError, InfeasibleSampleError, ParameterError


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream named by ``(seed, *key)``.

    Streams with different keys are independent, so work units can be run in
    any order (or concurrently) without changing their draws.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def kraemer_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the probability simplex over ``n`` classes.

    Sorted uniforms split [0, 1] into ``n`` spacings; the spacings are the
    prevalence vector.
    """
    if n < 2:
        raise ParameterError(f"need at least 2 classes, got {n}")
    cuts = np.sort(rng.random(n - 1))
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


def kraemer_samples(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent simplex draws, one per row."""
    if n < 2:
        raise ParameterError(f"need at least 2 classes, got {n}")
    cuts = np.sort(rng.random((count, n - 1)), axis=1)
    edges = np.hstack([np.zeros((count, 1)), cuts, np.ones((count, 1))])
    return np.diff(edges, axis=1)


def largest_remainder(target, size: int) -> np.ndarray:
    """Integer counts proportional to ``target`` that sum exactly to ``size``.

    Ties among remainders go to the lower class index.
    """
    target = np.asarray(target, dtype=np.float64)
    raw = target * size
    counts = np.floor(raw + 1e-9).astype(np.int64)
    short = size - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    elif short < 0:
        order = np.argsort(raw - counts, kind="stable")
        counts[order[:-short]] -= 1
    return counts


def sample_indices(labels, target, size: int, rng: np.random.Generator, n_classes: int) -> np.ndarray:
    """Row indices of a sample of ``size`` items realising ``target``.

    Each class is drawn without replacement while its pool lasts and with
    replacement otherwise.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInputError("cannot sample from an empty pool")
    target = check_prevalence(target, n_classes)
    counts = largest_remainder(target, size)
    chunks = []
    for c in range(n_classes):
        k = counts[c]
        if k == 0:
            continue
        pool = np.flatnonzero(labels == c + 1)
        if pool.size == 0:
            raise InfeasibleSampleError(
                f"class {c + 1} has no pool instances but {k} are required"
            )
        chunks.append(rng.choice(pool, size=k, replace=bool(k > pool.size)))
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)


def draw_at_prevalence(pool: Dataset, target, size: int, rng: np.random.Generator) -> Dataset:
    return pool.subset(sample_indices(pool.labels, target, size, rng, pool.n_classes))
