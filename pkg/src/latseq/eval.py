"""Result-set metrics and classical multidimensional scaling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .core import Dataset, median, min_hamming_to_set, pairwise_hamming

METRIC_COLUMNS = ["round", "fitness", "diversity", "d_init", "d_high", "oracle_calls", "epsilon",
                  "buffer_min", "buffer_max"]


@dataclass
class RoundMetrics:
    round: int
    fitness: float
    diversity: float
    d_init: float
    d_high: float | None
    oracle_calls: int = 0
    epsilon: float | None = None
    buffer_min: float | None = None
    buffer_max: float | None = None

    def as_row(self) -> dict:
        return asdict(self)


def high_fitness_subset(data: Dataset, fraction: float = 0.1) -> np.ndarray:
    """Sequences of the top ``fraction`` of ``data`` by fitness (at least one)."""
    k = max(1, int(round(fraction * len(data))))
    order = np.argsort(-data.fitness, kind="stable")
    return data.sequences[order[:k]]


def compute_metrics(sequences, fitness, init_sequences, high_sequences=None, round_index=0, **extra) -> RoundMetrics:
    """Median fitness, pairwise diversity and distances to the initial / high-fitness sets.

    ``high_sequences`` are the sequences the ``d_high`` distance is measured
    against (e.g. :func:`high_fitness_subset` of the full dataset); pass None
    when unavailable.
    """
    G = np.atleast_2d(np.asarray(sequences, dtype=np.int64))
    fitness = np.asarray(fitness, dtype=float)
    init = np.atleast_2d(np.asarray(init_sequences, dtype=np.int64))
    if len(G) == 0 or len(init) == 0 or init.size == 0:
        raise ValueError("result set and initial set must be non-empty")
    if len(G) > 1:
        D = pairwise_hamming(G)
        iu = np.triu_indices(len(G), k=1)
        diversity = median(D[iu])
    else:
        diversity = 0.0
    d_init = median(min_hamming_to_set(G, init))
    d_high = None
    if high_sequences is not None and len(high_sequences):
        d_high = median(min_hamming_to_set(G, np.atleast_2d(high_sequences)))
    return RoundMetrics(round=round_index, fitness=median(fitness), diversity=float(diversity),
                        d_init=float(d_init), d_high=None if d_high is None else float(d_high),
                        buffer_min=float(fitness.min()), buffer_max=float(fitness.max()), **extra)


def dataset_stats(data: Dataset, top: int = 128, percentiles=(10, 20, 30, 40, 50, 60, 70, 80, 90)) -> dict:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return {
        "n": len(data),
        "median": median(data.fitness),
        f"top{top}_median": median(data.top(top).fitness),
        "percentiles": {int(p): float(np.percentile(data.fitness, p)) for p in percentiles},
    }


def _power_iteration(M, start, ortho, tol, max_iter):
    """Dominant eigenpair of symmetric ``M`` within the complement of ``ortho``."""

    def project(x):
        for u in ortho:
            x = x - (x @ u) * u
        return x

    v = project(start)
    nrm = np.linalg.norm(v)
    if nrm < 1e-300:
        return 0.0, v
    v = v / nrm
    for _ in range(max_iter):
        w = project(M @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        if w @ v < 0:
            w = -w
        converged = np.linalg.norm(w - v) < tol
        v = w
        if converged:
            break
    return float(v @ M @ v), v


def mds_embed(distances, dims: int = 2, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Classical (Torgerson) MDS of a distance matrix.

    The leading eigenpairs of the double-centred squared-distance matrix
    come from power iteration with deflation; each output column has its
    first non-negligible entry positive.
    """
    D = np.asarray(distances, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if np.any(D < 0):
        raise ValueError("distances must be non-negative")
    if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, np.abs(D).max())):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.diag(D) != 0):
        raise ValueError("distance matrix must have a zero diagonal")
    n = len(D)
    out = np.zeros((n, dims))
    if n == 1:
        return out
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    scale = max(1.0, float(np.abs(B).max()))
    # B annihilates the constant vector, so iterate in its orthogonal complement
    ortho = [np.ones(n) / np.sqrt(n)]
    M = B.copy()
    for k in range(dims):
        if len(ortho) >= n:
            break
        start = np.cos(np.arange(n) * (k + 1.3) + 0.7)
        lam, vec = _power_iteration(M, start, ortho, tol, max_iter)
        if lam < 0:
            # dominant eigenvalue is negative: shift so the top of the spectrum dominates
            shift = -lam
            lam, vec = _power_iteration(M + shift * np.eye(n), start, ortho, tol, max_iter)
            lam -= shift
        if np.linalg.norm(vec) == 0:
            break
        M = M - lam * np.outer(vec, vec)
        ortho.append(vec)
        if lam > 1e-12 * scale:
            col = vec * np.sqrt(lam)
            nz = np.flatnonzero(np.abs(col) > 1e-9 * np.abs(col).max())
            if col[nz[0]] < 0:
                col = -col
            out[:, k] = col
    return out


class ClassicalMDS(BaseEstimator):
    """Estimator wrapper around :func:`mds_embed` for precomputed distances."""

    def __init__(self, n_components=2, tol=1e-10, max_iter=10_000):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        self.embedding_ = mds_embed(X, self.n_components, self.tol, self.max_iter)
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_
