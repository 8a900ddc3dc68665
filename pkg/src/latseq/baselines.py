"""Comparison optimisers sharing the oracle / budget interface.

* CMA-ES over a one-hot or VED-latent continuous encoding
* greedy threshold rollout (AdaLead-style, simplified)
* distance-prioritised Pareto search (PEX-style, simplified)
* random mutation search around the seeds
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import one_hot
from .landscape import OracleBudget, oracle_query

log = logging.getLogger(__name__)


class CmaesState:
    """(mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation."""

    def __init__(self, mean, sigma, popsize=None, rng=None):
        self.mean = np.asarray(mean, dtype=float).copy()
        n = self.n = len(self.mean)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.popsize = int(popsize or 4 + int(3 * np.log(n)))
        self.mu = self.popsize // 2
        w = np.log((self.popsize + 1) / 2) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chiN = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.generation = 0
        self.min_eigenvalues: list[float] = []

    def ask(self) -> np.ndarray:
        z = self.rng.standard_normal((self.popsize, self.n))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, X, values):
        """Update from candidates ``X`` and their objective values (minimised)."""
        X = np.asarray(X, dtype=float)
        order = np.argsort(np.asarray(values, dtype=float), kind="stable")[: self.mu]
        old = self.mean
        self.mean = self.weights @ X[order]
        y = (self.mean - old) / self.sigma
        invsqrtC = self.B @ np.diag(1 / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + np.sqrt(self.cs * (2 - self.cs) * self.mueff) * invsqrtC @ y
        self.generation += 1
        hsig = (np.linalg.norm(self.ps) / np.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chiN
                < 1.4 + 2 / (self.n + 1))
        self.pc = (1 - self.cc) * self.pc + hsig * np.sqrt(self.cc * (2 - self.cc) * self.mueff) * y
        artmp = (X[order] - old) / self.sigma
        self.C = ((1 - self.c1 - self.cmu) * self.C
                  + self.c1 * (np.outer(self.pc, self.pc) + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
                  + self.cmu * (artmp.T * self.weights) @ artmp)
        self.sigma *= np.exp((self.cs / self.damps) * (np.linalg.norm(self.ps) / self.chiN - 1))
        self.C = (self.C + self.C.T) / 2
        eig, self.B = np.linalg.eigh(self.C)
        self.min_eigenvalues.append(float(eig.min()))
        if eig.min() <= 0:
            raise FloatingPointError(f"covariance lost positive definiteness (min eigenvalue {eig.min()})")
        self.D = np.sqrt(eig)


def cmaes_minimize(f, x0, sigma0, max_evals, rng=None, target=-np.inf):
    """Minimise a vectorised objective ``f(X) -> values``; returns ``(best_x, best_f, state)``."""
    es = CmaesState(x0, sigma0, rng=rng)
    evals, best_x, best_f = 0, None, np.inf
    while evals + es.popsize <= max_evals:
        X = es.ask()
        vals = np.asarray(f(X), dtype=float)
        evals += len(X)
        j = int(np.argmin(vals))
        if vals[j] < best_f:
            best_f, best_x = float(vals[j]), X[j].copy()
        if best_f < target:
            break
        es.tell(X, vals)
    return best_x, best_f, es


@dataclass
class SearchResult:
    """Best sequences found plus per-round bookkeeping."""

    sequences: np.ndarray
    fitness: np.ndarray
    history: list = field(default_factory=list)
    oracle_calls: int = 0
    stalled: bool = False


class _Archive:
    """Every evaluated sequence with its measured fitness (first measurement kept)."""

    def __init__(self, seqs=None, fitness=None):
        self.index: dict[bytes, int] = {}
        self.seqs: list[np.ndarray] = []
        self.fit: list[float] = []
        if seqs is not None:
            self.add(seqs, fitness)

    def __contains__(self, s) -> bool:
        return np.asarray(s, dtype=np.int64).tobytes() in self.index

    def add(self, seqs, fitness):
        for s, f in zip(np.atleast_2d(seqs), fitness):
            k = np.asarray(s, dtype=np.int64).tobytes()
            if k not in self.index:
                self.index[k] = len(self.seqs)
                self.seqs.append(np.asarray(s, dtype=np.int64).copy())
                self.fit.append(float(f))

    def top(self, k):
        f = np.asarray(self.fit)
        order = np.argsort(-f, kind="stable")[:k]
        return np.array([self.seqs[i] for i in order]), f[order]


def _round_end(archive, history, budget, k, callback, round_index):
    seqs, fit = archive.top(k)
    row = {"round": round_index, "oracle_calls": budget.total_calls, "best": float(fit.max()),
           "median_topk": float(np.median(fit))}
    history.append(row)
    if callback is not None:
        callback(round_index, seqs, fit, budget)


def onehot_decode(vectors, seq_len, vocab_size):
    """Per-position argmax over the V-wide blocks of a flat vector."""
    V = np.atleast_2d(vectors).reshape(-1, seq_len, vocab_size)
    return V.argmax(axis=2)


def cmaes_optimize(oracle, seeds, seed_fitness, vocab_size, rounds, calls_per_round, encoding="onehot",
                   ved=None, m_decode=8, sigma0=None, top_k=128, rng=None, callback=None) -> SearchResult:
    """CMA-ES on a continuous encoding, decoding each candidate before oracle evaluation.

    The search starts from the encoding of the best seed. Each round runs
    whole generations until the next one would exceed the round budget.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.int64))
    seed_fitness = np.asarray(seed_fitness, dtype=float)
    L = seeds.shape[1]
    best_seed = seeds[int(np.argmax(seed_fitness))]
    if encoding == "onehot":
        x0 = one_hot(best_seed, vocab_size)
        decode = lambda X: onehot_decode(X, L, vocab_size)  # noqa: E731
        sigma0 = 0.5 if sigma0 is None else sigma0
    elif encoding == "latent":
        if ved is None:
            raise ValueError("latent encoding needs a fitted VED")
        x0 = ved.transform(best_seed)
        reference = ved.reference_
        decode = lambda X: ved.constrained_decode(np.clip(X, -1, 1), np.tile(reference, (len(X), 1)), m_decode)  # noqa: E731
        sigma0 = 0.2 if sigma0 is None else sigma0
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    es = CmaesState(x0, sigma0, rng=rng)
    archive = _Archive(seeds, seed_fitness)
    budget = OracleBudget(calls_per_round)
    history: list = []
    best_so_far = float(seed_fitness.max())
    _round_end(archive, history, budget, top_k, callback, 0)
    for r in range(1, rounds + 1):
        budget.new_round()
        while budget.remaining >= es.popsize:
            X = es.ask()
            seqs = decode(X)
            f = oracle_query(oracle, seqs, budget)
            archive.add(seqs, f)
            best_so_far = max(best_so_far, float(f.max()))
            es.tell(X, -f)
        _round_end(archive, history, budget, top_k, callback, r)
        history[-1]["best_so_far"] = best_so_far
        history[-1]["sigma"] = es.sigma
    seqs, fit = archive.top(top_k)
    res = SearchResult(seqs, fit, history, budget.total_calls)
    res.cmaes_state = es
    return res


def greedy_evolution(oracle, seeds, seed_fitness, vocab_size, rounds, calls_per_round, mutation_rate=None,
                     threshold=0.05, top_k=128, rng=None, callback=None, max_attempts_factor=20) -> SearchResult:
    """Greedy mutate-and-select rollouts.

    Parents are the archived sequences within ``threshold`` (relative) of
    the best. Parents are visited best first; each child is mutated at the
    per-position ``mutation_rate`` (default 1/L) and the rollout continues
    from the child for as long as it does not lose fitness. With
    ``threshold=0`` only the best sequence breeds (hill climbing).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("greedy_evolution needs a non-empty seed set")
    L = seeds.shape[1]
    rate = 1.0 / L if mutation_rate is None else float(mutation_rate)
    archive = _Archive(seeds, seed_fitness)
    budget = OracleBudget(calls_per_round)
    history: list = []
    stalled = False
    _round_end(archive, history, budget, top_k, callback, 0)
    for r in range(1, rounds + 1):
        budget.new_round()
        fit = np.asarray(archive.fit)
        best = fit.max()
        cutoff = best - threshold * abs(best)
        idx = np.flatnonzero(fit >= cutoff)
        parents = [(archive.seqs[i], fit[i]) for i in idx[np.argsort(-fit[idx], kind="stable")]]
        attempts = 0
        k = 0
        while budget.remaining > 0 and attempts < max_attempts_factor * calls_per_round:
            current, current_f = parents[k % len(parents)]
            k += 1
            while budget.remaining > 0 and attempts < max_attempts_factor * calls_per_round:
                attempts += 1
                mask = rng.random(L) < rate
                child = np.where(mask, (current + rng.integers(1, vocab_size, size=L)) % vocab_size, current)
                if child in archive:
                    continue
                f = float(oracle_query(oracle, child[None], budget)[0])
                archive.add(child[None], [f])
                if f < current_f:
                    break
                current, current_f = child, f
        if budget.calls_used_this_round == 0:
            stalled = True
            log.warning("greedy evolution stalled in round %d: no new children", r)
        _round_end(archive, history, budget, top_k, callback, r)
        history[-1]["stalled"] = budget.calls_used_this_round == 0
    seqs, fit = archive.top(top_k)
    return SearchResult(seqs, fit, history, budget.total_calls, stalled)


def pareto_frontier(distances, fitness) -> np.ndarray:
    """Indices of points not dominated in (distance ascending, fitness descending).

    A point is dominated when another is no farther and no worse, and
    strictly better in at least one. Result is ordered by distance.
    """
    d = np.asarray(distances, dtype=float)
    f = np.asarray(fitness, dtype=float)
    order = np.lexsort((-f, d))
    keep, best = [], -np.inf
    for i in order:
        if f[i] > best:
            keep.append(i)
            best = f[i]
    return np.asarray(keep, dtype=np.int64)


def distance_prioritized_search(oracle, reference, seeds, seed_fitness, vocab_size, rounds, calls_per_round,
                                top_k=128, rng=None, callback=None, max_attempts_factor=20) -> SearchResult:
    """Proposes single-mutation children of the distance/fitness Pareto frontier."""
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("distance_prioritized_search needs a non-empty seed set")
    reference = np.asarray(reference, dtype=np.int64)
    L = len(reference)
    archive = _Archive(seeds, seed_fitness)
    budget = OracleBudget(calls_per_round)
    history: list = []
    stalled = False
    _round_end(archive, history, budget, top_k, callback, 0)
    for r in range(1, rounds + 1):
        budget.new_round()
        S = np.array(archive.seqs)
        dist = (S != reference).sum(axis=1)
        front = pareto_frontier(dist, archive.fit)
        children, seen = [], set()
        attempts = 0
        while len(children) < calls_per_round and attempts < max_attempts_factor * calls_per_round:
            attempts += 1
            parent = S[front[rng.integers(len(front))]]
            child = parent.copy()
            pos = rng.integers(L)
            child[pos] = (child[pos] + rng.integers(1, vocab_size)) % vocab_size
            key = child.tobytes()
            if key in archive.index or key in seen:
                continue
            seen.add(key)
            children.append(child)
        if not children:
            stalled = True
            _round_end(archive, history, budget, top_k, callback, r)
            continue
        f = oracle_query(oracle, np.array(children), budget)
        archive.add(children, f)
        _round_end(archive, history, budget, top_k, callback, r)
        history[-1]["frontier_size"] = len(front)
    seqs, fit = archive.top(top_k)
    return SearchResult(seqs, fit, history, budget.total_calls, stalled)


def random_search(oracle, seeds, seed_fitness, vocab_size, rounds, calls_per_round, radius=3, top_k=128,
                  rng=None, callback=None) -> SearchResult:
    """Uniform mutants of the seeds with 1..``radius`` substitutions.

    ``radius=0`` re-evaluates the seeds themselves.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("random_search needs a non-empty seed set")
    L = seeds.shape[1]
    archive = _Archive(seeds, seed_fitness)
    budget = OracleBudget(calls_per_round)
    history: list = []
    _round_end(archive, history, budget, top_k, callback, 0)
    for r in range(1, rounds + 1):
        budget.new_round()
        batch = []
        for _ in range(calls_per_round):
            child = seeds[rng.integers(len(seeds))].copy()
            if radius > 0:
                k = int(rng.integers(1, radius + 1))
                pos = rng.choice(L, size=k, replace=False)
                child[pos] = (child[pos] + rng.integers(1, vocab_size, size=k)) % vocab_size
            batch.append(child)
        f = oracle_query(oracle, np.array(batch), budget)
        archive.add(batch, f)
        _round_end(archive, history, budget, top_k, callback, r)
    seqs, fit = archive.top(top_k)
    return SearchResult(seqs, fit, history, budget.total_calls)
