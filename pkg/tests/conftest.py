import numpy as np
import pytest

from latseq.landscape import NkLandscape
from latseq.tasks import make_nk_task
from latseq.ved import VariantEncoderDecoder


class ScriptedVed:
    """Decoder stand-in: each decode call flips the next ``k`` fresh positions.

    ``k`` is read from a queue, so a test fixes the per-step mutation counts.
    """

    latent_dim = 2

    def __init__(self, counts):
        self.counts = list(counts)
        self.pointer = 0

    def transform(self, x):
        return np.zeros(self.latent_dim)

    def constrained_decode(self, z, template, m_decode):
        k = self.counts.pop(0)
        out = np.array(template, copy=True)
        for _ in range(k):
            p = self.pointer % len(out)
            out[p] = (out[p] + 1) % 4
            self.pointer += 1
        return out


class FixedStarts:
    def __init__(self, seq):
        self.seq = np.asarray(seq, dtype=np.int64)

    def top(self):
        return self.seq.copy()


@pytest.fixture(scope="session")
def small_task():
    return make_nk_task(L=10, K=1, pool_size=800, band=(0, 60), seed=3)


@pytest.fixture(scope="session")
def small_ved(small_task):
    return VariantEncoderDecoder(latent_dim=4, vocab_size=4, epochs=8, decoder_hidden=(32,),
                                 random_state=0).fit(small_task.data.sequences)


@pytest.fixture
def tiny_landscape():
    return NkLandscape(6, 2, "ACGT", seed=5)
