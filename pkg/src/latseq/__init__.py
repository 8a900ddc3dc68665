"""Sequence optimisation by reinforcement learning in a learned latent space."""
from .core import Dataset, Vocabulary, hamming_distance, select_reference
from .driver import LatProtRL
from .frontier_buffer import FrontierBuffer
from .landscape import NkLandscape, OracleBudget, SurrogatePredictor, TabularOracle
from .eval import ClassicalMDS, compute_metrics, mds_embed
from .ved import VariantEncoderDecoder

__version__ = "0.1.0"
