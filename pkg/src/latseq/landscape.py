"""Black-box fitness oracles and per-round call accounting."""
from __future__ import annotations

import csv
import itertools
import json
import logging
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import Dataset, Vocabulary, one_hot
from .neuralnet import AdamState, Mlp, adam_step, mse

log = logging.getLogger(__name__)


class BudgetExceededError(RuntimeError):
    """Raised when a query would exceed the per-round oracle budget."""


class LookupMissError(KeyError):
    """A strict tabular oracle was asked about an unknown sequence."""


class CsvParseError(ValueError):
    def __init__(self, path, row, message):
        self.path = str(path)
        self.row = row
        super().__init__(f"{path}: row {row}: {message}")


class NkLandscape:
    """NK landscape over a V-letter alphabet with random neighbourhoods.

    Fitness is the mean over positions of a table lookup keyed by the
    symbol at the position and at its ``K`` neighbours.
    """

    def __init__(self, L: int, K: int, vocabulary: Vocabulary | str = "ACGT", seed: int = 0,
                 neighbors=None, tables=None):
        if isinstance(vocabulary, str):
            vocabulary = Vocabulary(vocabulary)
        if L < 1:
            raise ValueError("L must be positive")
        if not 0 <= K <= L - 1:
            raise ValueError(f"K must lie in [0, L-1], got K={K}, L={L}")
        self.L, self.K, self.vocabulary, self.seed = int(L), int(K), vocabulary, int(seed)
        V = vocabulary.size
        rng = np.random.default_rng(seed)
        if neighbors is None:
            neighbors = np.empty((L, K), dtype=np.int64)
            for i in range(L):
                others = np.array([j for j in range(L) if j != i])
                neighbors[i] = rng.choice(others, size=K, replace=False)
        if tables is None:
            tables = rng.random((L, V ** (K + 1)))
        self.neighbors = np.asarray(neighbors, dtype=np.int64).reshape(L, K)
        self.tables = np.asarray(tables, dtype=np.float64)
        if self.tables.shape != (L, V ** (K + 1)):
            raise ValueError(f"tables must have shape {(L, V ** (K + 1))}")
        for i, nb in enumerate(self.neighbors):
            if len(set(nb.tolist())) != K or i in nb:
                raise ValueError(f"neighbour list of position {i} invalid: {nb}")
        self._weights = V ** np.arange(K, -1, -1)

    @property
    def V(self) -> int:
        return self.vocabulary.size

    def _context_index(self, X):
        cols = np.concatenate([np.arange(self.L)[:, None], self.neighbors], axis=1)  # (L, K+1)
        ctx = X[:, cols]  # (n, L, K+1)
        return ctx @ self._weights

    def fitness(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.L:
            raise ValueError(f"sequence length {X.shape[1]} != landscape L={self.L}")
        idx = self._context_index(X)
        vals = self.tables[np.arange(self.L)[None, :], idx].mean(axis=1)
        return vals[0] if single else vals

    __call__ = fitness

    def global_optimum(self, max_size: int = 10 ** 7, chunk: int = 1 << 16):
        """Exact maximiser by enumeration of all ``V ** L`` sequences."""
        if self.V ** self.L > max_size:
            raise ValueError(f"V^L = {self.V}^{self.L} exceeds enumeration limit {max_size}")
        best_f, best_x = -np.inf, None
        it = itertools.product(range(self.V), repeat=self.L)
        while True:
            block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
            if block.size == 0:
                break
            f = self.fitness(block)
            j = int(np.argmax(f))
            if f[j] > best_f:
                best_f, best_x = float(f[j]), block[j].copy()
        return best_x, best_f

    def descriptor(self) -> dict:
        return {"type": "nk", "L": self.L, "K": self.K, "vocabulary": self.vocabulary.symbols, "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "NkLandscape":
        return cls(desc["L"], desc["K"], desc.get("vocabulary", "ACGT"), desc.get("seed", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.descriptor(), indent=2))

    @classmethod
    def load(cls, path) -> "NkLandscape":
        return cls.from_descriptor(json.loads(Path(path).read_text()))


def nk_fitness(land: NkLandscape, seq) -> float:
    return land.fitness(seq)


def nk_global_optimum(land: NkLandscape):
    return land.global_optimum()


class TabularOracle:
    """Lookup oracle over measured sequences.

    ``mode="nearest"`` answers misses with the mean fitness of the
    Hamming-nearest measured sequences.
    """

    def __init__(self, data: Dataset, mode: str = "strict"):
        if mode not in ("strict", "nearest"):
            raise ValueError(f"unknown miss mode {mode!r}")
        self.mode = mode
        self.data = data
        self.L = data.length
        self.vocabulary = data.vocabulary
        sums: dict[bytes, list] = {}
        for s, f in zip(data.sequences, data.fitness):
            acc = sums.setdefault(s.tobytes(), [0.0, 0])
            acc[0] += f
            acc[1] += 1
        # repeated measurements of one sequence are averaged
        self.lookup = {k: v[0] / v[1] for k, v in sums.items()}
        self._keys = np.array([np.frombuffer(k, dtype=np.int64) for k in self.lookup], dtype=np.int64)
        self._vals = np.array(list(self.lookup.values()))

    def fitness(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        if X.shape[1] != self.L:
            raise ValueError(f"sequence length {X.shape[1]} != {self.L}")
        out = np.empty(len(X))
        for i, x in enumerate(X):
            v = self.lookup.get(x.tobytes())
            if v is None:
                if self.mode == "strict":
                    raise LookupMissError(self.vocabulary.decode(x))
                d = (self._keys != x).sum(axis=1)
                v = float(self._vals[d == d.min()].mean())
            out[i] = v
        return out

    __call__ = fitness


class OracleBudget:
    """Per-round oracle call ledger."""

    def __init__(self, calls_per_round: int = 256):
        self.calls_per_round = int(calls_per_round)
        self.calls_used_this_round = 0
        self.round_index = 0
        self.total_calls = 0

    @property
    def remaining(self) -> int:
        return self.calls_per_round - self.calls_used_this_round

    def new_round(self):
        self.round_index += 1
        self.calls_used_this_round = 0

    def charge(self, n: int):
        if n < 0:
            raise ValueError("negative charge")
        if self.calls_used_this_round + n > self.calls_per_round:
            raise BudgetExceededError(
                f"round {self.round_index}: {self.calls_used_this_round} + {n} calls exceeds "
                f"limit {self.calls_per_round}")
        self.calls_used_this_round += n
        self.total_calls += n
        assert self.calls_used_this_round <= self.calls_per_round


def oracle_query(oracle, batch, budget: OracleBudget) -> np.ndarray:
    """Evaluate ``batch`` with ``oracle``, charging the round budget."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        return np.zeros(0)
    batch = np.atleast_2d(batch)
    budget.charge(len(batch))
    return np.asarray(oracle(batch), dtype=np.float64)


def load_csv_dataset(path, vocabulary: Vocabulary | str | None = None, normalize: bool = False) -> Dataset:
    """Read a ``sequence,fitness`` CSV.

    With ``normalize`` fitness is min-max scaled over the loaded rows; a
    zero range maps every value to 0.
    """
    if isinstance(vocabulary, str):
        vocabulary = Vocabulary(vocabulary)
    vocabulary = vocabulary or Vocabulary()
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvParseError(path, 0, f"cannot open file: {exc.strerror}") from None
    seqs, fits = [], []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["sequence", "fitness"]:
            raise CsvParseError(path, 1, "expected header 'sequence,fitness'")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise CsvParseError(path, rowno, "expected two columns")
            s = row[0].strip()
            try:
                seqs.append(vocabulary.encode(s))
            except ValueError as exc:
                raise CsvParseError(path, rowno, str(exc)) from None
            if seqs and len(seqs[-1]) != len(seqs[0]):
                raise CsvParseError(path, rowno, f"sequence length {len(seqs[-1])} != {len(seqs[0])}")
            try:
                f = float(row[1])
            except ValueError:
                raise CsvParseError(path, rowno, f"non-numeric fitness {row[1]!r}") from None
            if not np.isfinite(f):
                raise CsvParseError(path, rowno, f"non-finite fitness {row[1]!r}")
            fits.append(f)
    if not seqs:
        raise CsvParseError(path, 2, "no data rows")
    fitness = np.asarray(fits)
    meta = {"source": str(path), "normalized": bool(normalize)}
    if normalize:
        lo, hi = float(fitness.min()), float(fitness.max())
        fitness = (fitness - lo) / (hi - lo) if hi > lo else np.zeros_like(fitness)
        meta["normalization_base"] = {"min": lo, "max": hi, "rows": len(fitness)}
    return Dataset(np.stack(seqs), fitness, vocabulary, meta)


def save_csv_dataset(data: Dataset, path, extra_columns: dict | None = None):
    extra_columns = extra_columns or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "fitness", *extra_columns])
        cols = list(extra_columns.values())
        for i, (s, f) in enumerate(zip(data.strings(), data.fitness)):
            w.writerow([s, repr(float(f)), *(c[i] for c in cols)])


class SurrogatePredictor(RegressorMixin, BaseEstimator):
    """MLP regressor over one-hot sequences (two ReLU hidden layers).

    ``fit`` holds out ``validation_fraction`` of the rows and records their
    Spearman correlation in ``training_log_``.
    """

    def __init__(self, vocab_size=20, hidden=64, epochs=100, batch_size=64, lr=1e-3,
                 weight_decay=1e-5, validation_fraction=0.1, random_state=0):
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y, dtype=np.float64)
        if len(X) < 2:
            raise ValueError(f"predictor needs at least 2 training rows, got {len(X)}")
        rng = np.random.default_rng(self.random_state)
        n = len(X)
        perm = rng.permutation(n)
        n_val = int(round(self.validation_fraction * n)) if self.validation_fraction else 0
        val, tr = perm[:n_val], perm[n_val:]
        F = one_hot(X, self.vocab_size)
        self.n_features_in_ = F.shape[1]
        self.seq_len_ = X.shape[1]
        self.y_mean_, self.y_std_ = float(y[tr].mean()), float(y[tr].std()) or 1.0
        yt = (y - self.y_mean_) / self.y_std_
        self.net_ = Mlp([F.shape[1], self.hidden, self.hidden, 1], ["relu", "relu", "identity"], rng=rng)
        opt = AdamState(lr=self.lr, weight_decay=self.weight_decay)
        losses = []
        for _ in range(self.epochs):
            order = rng.permutation(tr)
            ep = 0.0
            for start in range(0, len(order), self.batch_size):
                b = order[start:start + self.batch_size]
                out, cache = self.net_.forward(F[b])
                loss, g = mse(out[:, 0], yt[b])
                grads, _ = self.net_.backward(cache, g[:, None])
                adam_step(opt, self.net_.parameters(), grads)
                self.net_.mark_updated()
                ep += loss * len(b)
            losses.append(ep / len(tr))
        self.training_log_ = {"train_mse": losses, "n_train": len(tr), "n_holdout": len(val)}
        if len(val) >= 2:
            pred = self.predict(X[val])
            if np.ptp(y[val]) == 0 or np.ptp(pred) == 0:
                rho = None
                log.info("holdout Spearman undefined (constant labels or predictions)")
            else:
                rho = float(spearmanr(pred, y[val]).statistic)
            self.training_log_["holdout_spearman"] = rho
        else:
            self.training_log_["holdout_spearman"] = None
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        if X.shape[1] != self.seq_len_:
            raise ValueError(f"sequence length {X.shape[1]} != {self.seq_len_}")
        return self.net_(one_hot(X, self.vocab_size))[:, 0] * self.y_std_ + self.y_mean_

    __call__ = predict


def train_predictor(data: Dataset, **config) -> SurrogatePredictor:
    config.setdefault("vocab_size", data.vocabulary.size)
    return SurrogatePredictor(**config).fit(data.sequences, data.fitness)

