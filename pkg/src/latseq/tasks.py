"""Synthetic benchmark tasks built on NK landscapes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, percentile_subset, random_mutate, substream
from .landscape import NkLandscape

TASK_BANDS = {"medium": (20.0, 40.0), "hard": (10.0, 30.0)}


@dataclass
class NkTask:
    landscape: NkLandscape
    pool: Dataset
    data: Dataset

    @property
    def oracle(self):
        return self.landscape


def sample_pool(land: NkLandscape, size: int, expected_mutations: float, rng) -> Dataset:
    """Random variants of a random wild type, scored on ``land``.

    A pool of uniformly random sequences would have almost no shared
    structure for an encoder to learn, so the pool is a mutant cloud
    around one parent.
    """
    wild_type = rng.integers(land.V, size=land.L)
    seqs = random_mutate(np.tile(wild_type, (size, 1)), expected_mutations, land.V, rng)
    return Dataset(seqs, land.fitness(seqs), land.vocabulary, {"wild_type": land.vocabulary.decode(wild_type)})


def make_nk_task(L=20, K=2, vocabulary="ACGT", pool_size=10_000, band=(10.0, 30.0),
                 expected_mutations=4.0, seed=0) -> NkTask:
    """NK landscape, sampled pool and the percentile band used as the starting dataset."""
    if isinstance(band, str):
        band = TASK_BANDS[band]
    land = NkLandscape(L, K, vocabulary, seed=int(substream(seed, "landscape").integers(2**31)))
    pool = sample_pool(land, pool_size, expected_mutations, substream(seed, "pool"))
    return NkTask(land, pool, percentile_subset(pool, *band))
