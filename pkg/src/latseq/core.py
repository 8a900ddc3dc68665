"""Alphabet, sequence, dataset and distance primitives.

Sequences are stored as integer index arrays over a :class:`Vocabulary`;
a batch of sequences is a ``(n, L)`` integer matrix.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PROTEIN_ALPHABET = "ACDEFGHIKLMNPQRSTVWY"


class Vocabulary:
    """Ordered set of distinct symbols."""

    def __init__(self, symbols: str = PROTEIN_ALPHABET):
        if len(symbols) < 2:
            raise ValueError("vocabulary needs at least 2 symbols")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"vocabulary symbols must be distinct: {symbols!r}")
        self.symbols = symbols
        self._index = {c: i for i, c in enumerate(symbols)}

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other.symbols == self.symbols

    def __hash__(self) -> int:
        return hash(self.symbols)

    def __repr__(self) -> str:
        return f"Vocabulary({self.symbols!r})"

    def encode(self, seq: str) -> np.ndarray:
        try:
            return np.fromiter((self._index[c] for c in seq), dtype=np.int64, count=len(seq))
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in vocabulary {self.symbols!r}") from None

    def encode_batch(self, seqs: Iterable[str]) -> np.ndarray:
        rows = [self.encode(s) for s in seqs]
        if not rows:
            return np.zeros((0, 0), dtype=np.int64)
        lengths = {len(r) for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"sequences have mixed lengths {sorted(lengths)}")
        return np.stack(rows)

    def decode(self, seq) -> str:
        return "".join(self.symbols[int(i)] for i in seq)

    def decode_batch(self, seqs) -> list[str]:
        return [self.decode(s) for s in np.asarray(seqs)]


@dataclass
class Dataset:
    """Sequences of a common length paired with fitness values."""

    sequences: np.ndarray
    fitness: np.ndarray
    vocabulary: Vocabulary = field(default_factory=Vocabulary)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.int64)
        self.fitness = np.asarray(self.fitness, dtype=np.float64)
        if self.sequences.ndim != 2:
            raise ValueError("sequences must be a (n, L) matrix")
        if len(self.sequences) != len(self.fitness):
            raise ValueError("sequences and fitness differ in length")
        if self.sequences.size and (self.sequences.min() < 0 or self.sequences.max() >= self.vocabulary.size):
            raise ValueError("sequence index outside vocabulary")

    @classmethod
    def from_strings(cls, seqs: Sequence[str], fitness, vocabulary: Vocabulary | None = None) -> "Dataset":
        vocabulary = vocabulary or Vocabulary()
        return cls(vocabulary.encode_batch(seqs), np.asarray(fitness, dtype=float), vocabulary)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    def strings(self) -> list[str]:
        return self.vocabulary.decode_batch(self.sequences)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.sequences[idx], self.fitness[idx], self.vocabulary, dict(self.meta))

    def top(self, n: int) -> "Dataset":
        """The ``n`` highest-fitness entries (stable: earlier entries win ties)."""
        order = np.argsort(-self.fitness, kind="stable")
        return self.subset(order[:n])


def hamming_distance(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def pairwise_hamming(A, B=None, chunk: int = 512) -> np.ndarray:
    """Hamming distance matrix between rows of ``A`` and rows of ``B``."""
    A = np.asarray(A)
    B = A if B is None else np.asarray(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError("length mismatch")
    out = np.empty((len(A), len(B)), dtype=np.int64)
    for start in range(0, len(A), chunk):
        blk = A[start:start + chunk]
        out[start:start + chunk] = (blk[:, None, :] != B[None, :, :]).sum(axis=2)
    return out


def min_hamming_to_set(A, B, chunk: int = 64) -> np.ndarray:
    """For each row of ``A`` the minimum distance to any row of ``B``."""
    A = np.asarray(A)
    B = np.asarray(B)
    out = np.empty(len(A), dtype=np.int64)
    # keep the (chunk, |B|, L) intermediate bounded for large reference sets
    step = max(1, min(chunk, 4_000_000 // max(1, B.size)))
    for start in range(0, len(A), step):
        blk = A[start:start + step]
        out[start:start + step] = (blk[:, None, :] != B[None, :, :]).sum(axis=2).min(axis=1)
    return out


def select_reference(data: Dataset | np.ndarray) -> np.ndarray:
    """Sequence with the minimum mean Hamming distance to all other entries.

    Ties go to the lowest entry index.
    """
    seqs = data.sequences if isinstance(data, Dataset) else np.asarray(data)
    n = len(seqs)
    if n == 0:
        raise ValueError("empty dataset")
    if n == 1:
        return seqs[0].copy()
    # sum_j d(i, j) = sum_p (n - count of seq_i's symbol at position p)
    V = int(seqs.max()) + 1
    L = seqs.shape[1]
    counts = np.zeros((L, V), dtype=np.int64)
    for p in range(L):
        counts[p] = np.bincount(seqs[:, p], minlength=V)
    totals = (n - counts[np.arange(L)[None, :], seqs]).sum(axis=1)
    return seqs[int(np.argmin(totals))].copy()


def percentile_subset(data: Dataset, lo: float, hi: float) -> Dataset:
    """Entries whose ascending fitness rank ``r`` satisfies ``lo <= 100 r / N < hi``.

    Ranks are 0-based with ties broken by entry index.
    """
    if not 0 <= lo < hi <= 100:
        raise ValueError(f"invalid percentile band [{lo}, {hi})")
    n = len(data)
    if n == 0:
        raise ValueError("empty dataset")
    order = np.argsort(data.fitness, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    pct = 100.0 * ranks / n
    keep = np.flatnonzero((pct >= lo) & (pct < hi))
    return data.subset(keep)


def random_mutate(seq, expected_mutations: float, vocab_size: int, rng: np.random.Generator) -> np.ndarray:
    """Mutate each position independently with probability ``expected_mutations / L``.

    A mutated position takes a uniform symbol among the other ``V - 1``.
    Accepts a single sequence or a ``(n, L)`` batch.
    """
    seq = np.asarray(seq, dtype=np.int64)
    L = seq.shape[-1]
    if not 0 <= expected_mutations <= L:
        raise ValueError(f"expected_mutations must lie in [0, {L}], got {expected_mutations}")
    mask = rng.random(seq.shape) < expected_mutations / L
    shift = rng.integers(1, vocab_size, size=seq.shape)
    return np.where(mask, (seq + shift) % vocab_size, seq)


def one_hot(seqs, vocab_size: int) -> np.ndarray:
    """Flattened one-hot encoding, shape ``(n, L * V)`` (or ``(L * V,)``)."""
    seqs = np.asarray(seqs, dtype=np.int64)
    single = seqs.ndim == 1
    seqs = np.atleast_2d(seqs)
    n, L = seqs.shape
    out = np.zeros((n, L, vocab_size))
    out[np.arange(n)[:, None], np.arange(L)[None, :], seqs] = 1.0
    out = out.reshape(n, L * vocab_size)
    return out[0] if single else out


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from a root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def median(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("median of empty sequence")
    # numpy averages the central pair for even counts
    return float(np.median(values))
