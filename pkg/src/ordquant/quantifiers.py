"""Prevalence estimators: CC, PACC, EMQ and the MLPE baseline.

All four share :class:`QuantifierModel`. Aggregative methods split estimation
into ``posteriors`` (classifier output for a sample) and ``aggregate``
(posteriors to prevalence) so a batch of posteriors can be reused across many
samples.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ordquant.classifier import ProbClassifier, cv_posteriors, fit
from ordquant.data import Dataset, empirical_prevalence
from ordquant.errors import EmptyInputError, ParameterError

KINDS = ("cc", "pacc", "emq", "mlpe")

EMQ_MAX_ITER = 1000
EMQ_EPS = 1e-6
PRIOR_FLOOR = 1e-9


class EMQResult(NamedTuple):
    prevalence: np.ndarray
    converged: bool
    steps: tuple  # L1 distance between successive prevalence iterates


@dataclass(frozen=True, eq=False)
class QuantifierModel:
    kind: str
    train_prior: np.ndarray
    classifier: ProbClassifier | None = None
    correction: np.ndarray | None = None
    max_iter: int = EMQ_MAX_ITER
    eps: float = EMQ_EPS

    @property
    def n_classes(self) -> int:
        return self.train_prior.shape[0]

    def posteriors(self, X) -> np.ndarray:
        if self.classifier is None:
            return np.empty((np.asarray(X).shape[0], self.n_classes))
        return self.classifier.predict_proba(X)

    def aggregate(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=np.float64)
        if P.shape[0] == 0:
            raise EmptyInputError("cannot estimate the prevalence of an empty sample")
        if self.kind == "mlpe":
            return self.train_prior.copy()
        if self.kind == "cc":
            return classify_and_count(P)
        if self.kind == "pacc":
            return simplex_least_squares(self.correction, P.mean(axis=0))
        if self.kind == "emq":
            return emq(P, self.train_prior, self.max_iter, self.eps).prevalence
        raise ParameterError(f"unknown quantifier kind {self.kind!r}")

    def aggregate_many(self, P, indices) -> np.ndarray:
        """Estimates for several samples, each given as row indices into ``P``."""
        P = np.asarray(P, dtype=np.float64)
        indices = list(indices)
        if not indices:
            return np.empty((0, self.n_classes))
        sizes = {len(idx) for idx in indices}
        if self.kind == "emq" and len(sizes) == 1 and 0 not in sizes:
            stack = np.stack([P[idx] for idx in indices])
            return np.array([r.prevalence for r in emq_batch(stack, self.train_prior, self.max_iter, self.eps)])
        return np.array([self.aggregate(P[idx]) for idx in indices])

    def estimate(self, X) -> np.ndarray:
        return self.aggregate(self.posteriors(X))


def classify_and_count(P: np.ndarray) -> np.ndarray:
    """Share of items whose argmax posterior is each class (lowest index wins ties)."""
    n = P.shape[1]
    return np.bincount(np.argmax(P, axis=1), minlength=n) / P.shape[0]


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def simplex_least_squares(A, b, max_iter: int = 10_000, tol: float = 1e-10) -> np.ndarray:
    """argmin over the simplex of ``||A p - b||_2`` by projected gradient.

    Starts from the projection of the unconstrained least-squares solution,
    which is already optimal whenever that solution is interior.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lipschitz = np.linalg.norm(A, 2) ** 2
    if lipschitz == 0:
        return np.full(A.shape[1], 1.0 / A.shape[1])
    step = 1.0 / lipschitz
    p = project_to_simplex(np.linalg.lstsq(A, b, rcond=None)[0])
    AtA, Atb = A.T @ A, A.T @ b
    for _ in range(max_iter):
        nxt = project_to_simplex(p - step * (AtA @ p - Atb))
        if np.abs(nxt - p).sum() < tol:
            p = nxt
            break
        p = nxt
    return p


def emq(P, train_prior, max_iter: int = EMQ_MAX_ITER, eps: float = EMQ_EPS) -> EMQResult:
    """Expectation-maximisation re-estimation of class priors.

    Each round rescales the original posteriors by current/training prior
    ratios, renormalises per item and takes the mean as the new prior. Stops
    once the L1 change falls below ``eps``.
    """
    P = np.asarray(P, dtype=np.float64)
    return emq_batch(P[None], train_prior, max_iter, eps)[0]


def emq_batch(P, train_prior, max_iter: int = EMQ_MAX_ITER, eps: float = EMQ_EPS) -> list[EMQResult]:
    """:func:`emq` over a stack ``(samples, items, classes)`` of equal-size samples.

    Samples iterate together; each one stops on its own convergence test.
    """
    P = np.asarray(P, dtype=np.float64)
    train_prior = np.asarray(train_prior, dtype=np.float64)
    S = P.shape[0]
    prev = np.tile(train_prior, (S, 1))
    steps = np.full((max_iter, S), np.nan)
    n_steps = np.zeros(S, dtype=np.int64)
    converged = np.zeros(S, dtype=bool)
    active = np.arange(S)
    Pa, cur = P, prev.copy()
    for t in range(max_iter):
        # mean_i of q_ic r_c / sum_k q_ik r_k, as two batched products
        ratio = cur / train_prior
        inv_norm = 1.0 / np.matmul(Pa, ratio[:, :, None])
        nxt = ratio * np.matmul(inv_norm.transpose(0, 2, 1), Pa)[:, 0, :] / Pa.shape[1]
        delta = np.abs(nxt - cur).sum(axis=1)
        cur = nxt
        steps[t, active] = delta
        n_steps[active] = t + 1
        done = delta < eps
        if done.any():
            prev[active] = cur
            converged[active[done]] = True
            active, Pa, cur = active[~done], Pa[~done], cur[~done]
            if active.size == 0:
                break
    prev[active] = cur
    return [
        EMQResult(prev[s], bool(converged[s]), tuple(steps[: n_steps[s], s].tolist()))
        for s in range(S)
    ]


def _prior(train: Dataset) -> np.ndarray:
    return empirical_prevalence(train.labels, train.n_classes)


def _floored(prior: np.ndarray) -> np.ndarray:
    prior = np.maximum(prior, PRIOR_FLOOR)
    return prior / prior.sum()


def fit_cc(train: Dataset, reg: float = 1.0, class_weighting: str = "uniform") -> QuantifierModel:
    return QuantifierModel("cc", _prior(train), fit(train, reg, class_weighting))


def fit_pacc(
    train: Dataset,
    reg: float = 1.0,
    class_weighting: str = "uniform",
    k: int = 10,
    rng: np.random.Generator | None = None,
    threads: int = 1,
) -> QuantifierModel:
    """PACC with a correction matrix estimated from out-of-fold posteriors.

    Column ``c`` of the correction matrix is the mean posterior of training
    items whose true class is ``c``; unseen classes get a unit column.
    """
    posteriors, model = cv_posteriors(train, k, reg, class_weighting, rng, threads)
    n = train.n_classes
    correction = np.eye(n)
    for c in range(n):
        mask = train.labels == c + 1
        if mask.any():
            correction[:, c] = posteriors[mask].mean(axis=0)
    return QuantifierModel("pacc", _prior(train), model, correction)


def fit_emq(
    train: Dataset,
    reg: float = 1.0,
    class_weighting: str = "uniform",
    max_iter: int = EMQ_MAX_ITER,
    eps: float = EMQ_EPS,
) -> QuantifierModel:
    return QuantifierModel(
        "emq", _floored(_prior(train)), fit(train, reg, class_weighting), max_iter=max_iter, eps=eps
    )


def estimate_emq(model: QuantifierModel, features, max_iter: int | None = None, eps: float | None = None) -> EMQResult:
    return emq(
        model.posteriors(features),
        model.train_prior,
        model.max_iter if max_iter is None else max_iter,
        model.eps if eps is None else eps,
    )


def fit_mlpe(train: Dataset) -> QuantifierModel:
    return QuantifierModel("mlpe", _prior(train))


def fit_quantifier(
    kind: str,
    train: Dataset,
    reg: float = 1.0,
    class_weighting: str = "uniform",
    rng: np.random.Generator | None = None,
    k: int = 10,
) -> QuantifierModel:
    if kind == "cc":
        return fit_cc(train, reg, class_weighting)
    if kind == "pacc":
        return fit_pacc(train, reg, class_weighting, k, rng)
    if kind == "emq":
        return fit_emq(train, reg, class_weighting)
    if kind == "mlpe":
        return fit_mlpe(train)
    raise ParameterError(f"unknown quantifier kind {kind!r}; expected one of {KINDS}")
