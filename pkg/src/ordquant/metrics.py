"""Ordinal quantification error measures."""
import numpy as np

from ordquant.errors import ShapeError, UndefinedRIEError


def match_distance(p, q) -> float:
    """L1 distance between the cumulative distributions of ``p`` and ``q``.

    Adjacent classes are one unit apart, so this is the earth mover's distance
    on the ordinal scale.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ShapeError(f"prevalence vectors differ in length: {p.size} vs {q.size}")
    if p.size < 2:
        raise ShapeError("match distance needs at least two classes")
    return float(np.abs(np.cumsum(p)[:-1] - np.cumsum(q)[:-1]).sum())


def nmd(p, q) -> float:
    """Match distance normalised by ``n - 1`` into [0, 1]."""
    return match_distance(p, q) / (len(p) - 1)


def nmd_rows(P, Q) -> np.ndarray:
    """Row-wise NMD between two stacks of prevalence vectors."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ShapeError(f"shape mismatch: {P.shape} vs {Q.shape}")
    n = P.shape[1]
    return np.abs(np.cumsum(P, axis=1)[:, :-1] - np.cumsum(Q, axis=1)[:, :-1]).sum(axis=1) / (n - 1)


def rie(mnmd_without: float, mnmd_with: float) -> float:
    """Relative increase in error caused by ablating a feature block."""
    if mnmd_with == 0:
        raise UndefinedRIEError("RIE is undefined when the reference MNMD is zero")
    return (mnmd_without - mnmd_with) / mnmd_with
