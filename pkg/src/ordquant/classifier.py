"""Multinomial logistic regression, cross-validated posteriors and
quantification-oriented model selection.

Labels handled here are ordinal levels ``1..n``; internally class ``c`` is
row ``c - 1`` of the weight matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ordquant._parallel import parallel_map
from ordquant.data import Dataset
from ordquant.errors import (
    DegenerateTrainingError,
    InfeasibleSampleError,
    OrdQuantError,
    ParameterError,
    ShapeError,
)
from ordquant.metrics import nmd
from ordquant.sampling import kraemer_samples, make_rng, sample_indices

log = logging.getLogger(__name__)

POSTERIOR_FLOOR = 1e-9
CLASS_WEIGHTINGS = ("uniform", "balanced")


@dataclass(frozen=True)
class HyperGrid:
    regs: tuple = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)
    class_weightings: tuple = CLASS_WEIGHTINGS

    def __post_init__(self):
        if not self.regs or not self.class_weightings:
            raise ParameterError("hyperparameter grid must have at least one point")
        if any(r <= 0 for r in self.regs):
            raise ParameterError("regularization strengths must be positive")
        for cw in self.class_weightings:
            if cw not in CLASS_WEIGHTINGS:
                raise ParameterError(f"unknown class weighting {cw!r}")

    def points(self) -> list[tuple[float, str]]:
        return [(float(r), cw) for cw in self.class_weightings for r in self.regs]


@dataclass(frozen=True, eq=False)
class ProbClassifier:
    """Fitted softmax model over standardised features.

    ``weights`` has one row per class and a trailing bias column. Classes
    absent from training (``present`` false) get zero probability before
    flooring.
    """

    weights: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    present: np.ndarray
    reg: float = 1.0
    class_weighting: str = "uniform"
    n_iter: int = 0
    converged: bool = True
    loss_history: tuple = field(default=(), repr=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(
                f"model expects {self.n_features} feature columns, got shape {X.shape}"
            )
        Z = (X - self.mean) / self.scale
        out = Z @ self.weights[:, :-1].T + self.weights[:, -1]
        out[:, ~self.present] = -np.inf
        return out

    def predict_proba(self, X) -> np.ndarray:
        return floor_posteriors(softmax(self.logits(X)))

    def predict(self, X) -> np.ndarray:
        """Most probable ordinal level; ties go to the lowest level."""
        return np.argmax(self.predict_proba(X), axis=1) + 1


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def floor_posteriors(P: np.ndarray) -> np.ndarray:
    P = np.clip(P, POSTERIOR_FLOOR, 1 - POSTERIOR_FLOOR)
    return P / P.sum(axis=1, keepdims=True)


def predict_proba(model: ProbClassifier, features) -> np.ndarray:
    return model.predict_proba(features)


def sample_weights(y: np.ndarray, n_classes: int, class_weighting: str) -> np.ndarray:
    """Per-instance weights; ``balanced`` gives each present class equal mass."""
    if class_weighting == "uniform":
        return np.ones(y.shape[0])
    if class_weighting != "balanced":
        raise ParameterError(f"unknown class weighting {class_weighting!r}")
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    k = np.count_nonzero(counts)
    per_class = np.divide(y.shape[0], k * counts, out=np.zeros_like(counts), where=counts > 0)
    return per_class[y]


def training_objective(W: np.ndarray, Z: np.ndarray, Y: np.ndarray, s: np.ndarray, reg: float):
    """Weighted mean cross-entropy plus an L2 penalty on non-bias weights.

    ``W`` is ``(K, d + 1)`` with the bias last, ``Z`` is ``(N, d)``, ``Y`` is
    one-hot ``(N, K)`` and ``s`` holds instance weights. Returns
    ``(loss, gradient)``.
    """
    N = Z.shape[0]
    logits = Z @ W[:, :-1].T + W[:, -1]
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    ce = lse - (logits * Y).sum(axis=1)
    penalty = 0.5 * reg / N * np.sum(W[:, :-1] ** 2)
    loss = float(s @ ce / N + penalty)
    R = (np.exp(logits - lse[:, None]) - Y) * (s / N)[:, None]
    grad = np.empty_like(W)
    grad[:, :-1] = R.T @ Z + reg / N * W[:, :-1]
    grad[:, -1] = R.sum(axis=0)
    return loss, grad


def _descend(f, W, tol: float, max_iter: int):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    The Armijo condition makes the loss sequence non-increasing.
    """
    loss, grad = f(W)
    history = [loss]
    step = 1.0
    prev_W = prev_grad = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm2 = float(np.sum(grad * grad))
        if np.sqrt(gnorm2) < tol:
            converged = True
            it -= 1
            break
        if prev_W is not None:
            dW = W - prev_W
            dg = grad - prev_grad
            curv = float(np.sum(dW * dg))
            if curv > 0:
                step = float(np.sum(dW * dW)) / curv
        while True:
            cand = W - step * grad
            cand_loss, cand_grad = f(cand)
            if cand_loss <= loss - 1e-4 * step * gnorm2 or step < 1e-14:
                break
            step *= 0.5
        if cand_loss > loss:
            # no representable descent left
            converged = np.sqrt(gnorm2) < 10 * tol
            break
        prev_W, prev_grad = W, grad
        W, loss, grad = cand, cand_loss, cand_grad
        history.append(loss)
    else:
        converged = float(np.sqrt(np.sum(grad * grad))) < tol
    return W, it, converged, history


def fit_arrays(
    X,
    labels,
    n_classes: int,
    reg: float = 1.0,
    class_weighting: str = "uniform",
    tol: float = 1e-5,
    max_iter: int = 1000,
) -> ProbClassifier:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64) - 1
    if reg <= 0:
        raise ParameterError(f"regularization strength must be positive, got {reg}")
    counts = np.bincount(y, minlength=n_classes)
    present = counts > 0
    if np.count_nonzero(present) < 2:
        raise DegenerateTrainingError("training data must contain at least two distinct labels")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale

    # optimise only over classes seen in training
    cls = np.flatnonzero(present)
    remap = np.full(n_classes, -1)
    remap[cls] = np.arange(cls.size)
    y_local = remap[y]
    Y = np.eye(cls.size)[y_local]
    s = sample_weights(y_local, cls.size, class_weighting)
    W0 = np.zeros((cls.size, Z.shape[1] + 1))
    W_local, n_iter, converged, history = _descend(
        lambda W: training_objective(W, Z, Y, s, reg), W0, tol, max_iter
    )
    W = np.zeros((n_classes, Z.shape[1] + 1))
    W[cls] = W_local
    return ProbClassifier(
        W, mean, scale, present, float(reg), class_weighting, n_iter, bool(converged), tuple(history)
    )


def fit(train: Dataset, reg: float = 1.0, class_weighting: str = "uniform", **kwargs) -> ProbClassifier:
    return fit_arrays(train.features, train.labels, train.n_classes, reg, class_weighting, **kwargs)


def stratified_folds(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per instance; each class is spread round-robin over folds."""
    labels = np.asarray(labels)
    folds = np.empty(labels.shape[0], dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset = (offset + idx.size) % k
    return folds


def effective_folds(labels, k: int) -> int:
    """Fold count actually used for ``k`` requested folds.

    ``k >= N`` means leave-one-out. Otherwise ``k`` drops to the smallest
    class count, but never below 2.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ParameterError(f"need at least 2 folds, got {k}")
    if k >= labels.shape[0]:
        return labels.shape[0]
    min_count = np.bincount(labels)[np.unique(labels)].min()
    return int(max(2, min(k, min_count)))


def cv_posteriors(
    train: Dataset,
    k: int = 10,
    reg: float = 1.0,
    class_weighting: str = "uniform",
    rng: np.random.Generator | None = None,
    threads: int = 1,
):
    """Out-of-fold posteriors plus a model refit on all of ``train``."""
    if rng is None:
        rng = make_rng(0)
    k_eff = effective_folds(train.labels, k)
    if k_eff == len(train):
        folds = np.arange(len(train))
    else:
        folds = stratified_folds(train.labels, k_eff, rng)
    X, y = train.features, train.labels

    def one_fold(f):
        held = folds == f
        model = fit_arrays(X[~held], y[~held], train.n_classes, reg, class_weighting)
        return held, model.predict_proba(X[held])

    posteriors = np.empty((len(train), train.n_classes))
    for held, P in parallel_map(one_fold, range(k_eff), threads):
        posteriors[held] = P
    return posteriors, fit(train, reg, class_weighting)


def stratified_split(labels, fraction: float, rng: np.random.Generator):
    """Index arrays ``(first, second)`` with ``fraction`` of each class in ``first``."""
    labels = np.asarray(labels)
    first, second = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(fraction * idx.size))
        first.append(idx[:cut])
        second.append(idx[cut:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def grid_search(
    train: Dataset,
    grid: HyperGrid,
    quantifier_factory: Callable,
    *,
    train_fraction: float = 0.6,
    samples: int = 100,
    sample_size: int = 250,
    seed: int = 0,
    threads: int = 1,
) -> tuple[float, str]:
    """Pick the grid point whose quantifier has the lowest mean validation NMD.

    ``quantifier_factory(dataset, reg, class_weighting)`` must return an
    object with an ``estimate(features)`` method; objects that also expose
    ``posteriors``/``aggregate_many`` are scored from one batch of posteriors. Validation samples are
    drawn at uniformly random prevalences from a stratified hold-out of
    ``train``; every grid point sees the same samples. Ties go to the
    stronger regularization.
    """
    points = grid.points()
    if len(points) == 1:
        return points[0]
    rng = make_rng(seed, 0)
    fit_idx, val_idx = stratified_split(train.labels, train_fraction, rng)
    sub, val = train.subset(fit_idx), train.subset(val_idx)
    targets = kraemer_samples(train.n_classes, samples, rng)
    val_samples = []
    for i, p in enumerate(targets):
        try:
            idx = sample_indices(val.labels, p, sample_size, make_rng(seed, 1, i), val.n_classes)
        except InfeasibleSampleError:
            continue
        val_samples.append((idx, np.bincount(val.labels[idx] - 1, minlength=val.n_classes) / idx.size))
    if not val_samples:
        raise InfeasibleSampleError("no feasible validation sample for model selection")

    def score(point):
        reg, cw = point
        try:
            q = quantifier_factory(sub, reg, cw)
        except OrdQuantError as exc:
            log.warning("grid point reg=%g weighting=%s skipped: %s", reg, cw, exc)
            return np.inf
        if hasattr(q, "aggregate_many"):
            est = q.aggregate_many(q.posteriors(val.features), [idx for idx, _ in val_samples])
            errors = [nmd(truth, e) for (_, truth), e in zip(val_samples, est)]
        else:
            errors = [nmd(truth, q.estimate(val.features[idx])) for idx, truth in val_samples]
        return float(np.mean(errors))

    scores = parallel_map(score, points, threads)
    if not np.isfinite(scores).any():
        raise DegenerateTrainingError("every grid point failed to train")
    best = min(range(len(points)), key=lambda i: (scores[i], -points[i][0], i))
    return points[best]
