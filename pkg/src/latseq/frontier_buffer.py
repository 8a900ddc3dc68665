"""Frontier buffer: a fixed-size archive of the best sequences found so far.

Episode start states are drawn from it with an epsilon-greedy rule that
mixes visit-count-based exploration and fitness-softmax exploitation.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import Dataset, Vocabulary


class FrontierBuffer:
    def __init__(self, capacity=128, epsilon=1.0, epsilon_min=0.05, epsilon_decay=0.96,
                 update_period=50, temperature=10.0, rng: np.random.Generator | None = None):
        self.capacity = int(capacity)
        self.epsilon_init = float(epsilon)
        self.epsilon = float(epsilon)
        self.epsilon_min = float(epsilon_min)
        self.epsilon_decay = float(epsilon_decay)
        self.update_period = int(update_period)
        self.temperature = float(temperature)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.calls = 0
        self.sequences: list[np.ndarray] = []
        self.fitness: list[float] = []
        self.visits: list[int] = []
        self._keys: set[bytes] = set()

    def __len__(self) -> int:
        return len(self.sequences)

    def __contains__(self, seq) -> bool:
        return np.asarray(seq, dtype=np.int64).tobytes() in self._keys

    def initialize(self, data: Dataset):
        """Fill with ``capacity`` distinct sequences sampled from ``data``.

        Duplicate sequences are collapsed first, keeping their best fitness.
        """
        best: dict[bytes, int] = {}
        for i, s in enumerate(data.sequences):
            k = s.tobytes()
            j = best.get(k)
            if j is None or data.fitness[i] > data.fitness[j]:
                best[k] = i
        uniq = np.array(sorted(best.values()), dtype=np.int64)
        if len(uniq) < self.capacity:
            raise ValueError(f"need {self.capacity} distinct sequences, dataset has {len(uniq)}")
        pick = np.sort(self.rng.choice(uniq, size=self.capacity, replace=False))
        self.sequences = [data.sequences[i].copy() for i in pick]
        self.fitness = [float(data.fitness[i]) for i in pick]
        self.visits = [1] * self.capacity
        self._keys = {s.tobytes() for s in self.sequences}
        return self

    def explore_probabilities(self) -> np.ndarray:
        w = 1.0 / np.sqrt(np.asarray(self.visits, dtype=float))
        return w / w.sum()

    def exploit_probabilities(self) -> np.ndarray:
        z = self.temperature * np.asarray(self.fitness, dtype=float)
        z = np.exp(z - z.max())
        return z / z.sum()

    def _tick(self):
        self.calls += 1
        if self.calls % self.update_period == 0:
            # closed form of repeated max(floor, decay * eps); avoids accumulated rounding
            k = self.calls // self.update_period
            self.epsilon = max(self.epsilon_min, self.epsilon_init * self.epsilon_decay ** k)

    def sample_index(self, force: str | None = None) -> int:
        """Advance the call counter and draw an entry index.

        ``force`` pins the branch (``"explore"`` or ``"exploit"``) for testing.
        """
        if not self.sequences:
            raise ValueError("frontier buffer is empty")
        self._tick()
        r = self.rng.random()
        explore = r < self.epsilon if force is None else force == "explore"
        p = self.explore_probabilities() if explore else self.exploit_probabilities()
        b = int(self.rng.choice(len(p), p=p))
        self.visits[b] += 1
        return b

    def top(self, force: str | None = None) -> np.ndarray:
        return self.sequences[self.sample_index(force)].copy()

    def update(self, seq, fitness: float) -> bool:
        """Replace the weakest entry when ``fitness`` strictly beats it.

        Returns True when the buffer changed.
        """
        seq = np.asarray(seq, dtype=np.int64)
        key = seq.tobytes()
        if key in self._keys or not self.sequences:
            return False
        b_min = int(np.argmin(self.fitness))
        if fitness > self.fitness[b_min]:
            self._keys.discard(self.sequences[b_min].tobytes())
            self.sequences[b_min] = seq.copy()
            self.fitness[b_min] = float(fitness)
            self.visits[b_min] = 1
            self._keys.add(key)
            return True
        return False

    def as_dataset(self, vocabulary: Vocabulary) -> Dataset:
        return Dataset(np.array(self.sequences), np.array(self.fitness), vocabulary)

    def snapshot(self, path, vocabulary: Vocabulary):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "fitness", "visits"])
            for s, f, v in zip(self.sequences, self.fitness, self.visits):
                w.writerow([vocabulary.decode(s), repr(float(f)), v])
