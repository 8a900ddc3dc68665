"""Variant encoder-decoder.

The encoder sees only how a sequence differs from a fixed reference
(one-hot difference features), so the reference maps to the zero latent.
The decoder emits per-position logits; :func:`constrained_decode` applies
only its most confident disagreements to a template sequence.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import Dataset, Vocabulary, one_hot, random_mutate, select_reference
from .neuralnet import AdamState, Mlp, adam_step, cross_entropy, load_checkpoint, save_checkpoint, softmax

log = logging.getLogger(__name__)


def default_latent_dim(L: int) -> int:
    return 16 if L <= 40 else 32


def constrained_decode_logits(logits, template, m_decode: int) -> np.ndarray:
    """Apply the ``m_decode`` most probable decoder disagreements to ``template``.

    ``logits`` is ``(L, V)`` or ``(n, L, V)``; ``template`` matches the
    leading shape. Candidates are positions whose argmax differs from the
    template, ranked by the argmax softmax probability (ties: lower position).
    """
    logits = np.asarray(logits, dtype=np.float64)
    template = np.asarray(template, dtype=np.int64)
    if m_decode < 0:
        raise ValueError("m_decode must be non-negative")
    single = logits.ndim == 2
    logits = logits[None] if single else logits
    template = np.atleast_2d(template)
    if template.shape != logits.shape[:2]:
        raise ValueError(f"template shape {template.shape} does not match logits {logits.shape[:2]}")
    probs = softmax(logits)
    best = probs.argmax(axis=2)
    conf = probs.max(axis=2)
    out = template.copy()
    if m_decode == 0:
        return out[0] if single else out
    cand = best != template
    # mask non-candidates below any probability, then stable sort keeps position order on ties
    key = np.where(cand, -conf, np.inf)
    order = np.argsort(key, axis=1, kind="stable")[:, :m_decode]
    rows = np.arange(len(out))[:, None]
    chosen = cand[rows, order]
    r, c = np.nonzero(chosen)
    pos = order[r, c]
    out[r, pos] = best[r, pos]
    return out[0] if single else out


@dataclass
class VedTrainConfig:
    latent_dim: int = 16
    augmentation: int = 4
    expected_mutations: float = 3.0
    holdout_fraction: float = 0.05
    epochs: int = 64
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    encoder_hidden: tuple = ()
    decoder_hidden: tuple = (256,)
    seed: int = 0


class VariantEncoderDecoder(TransformerMixin, BaseEstimator):
    """Maps sequences to a latent vector in ``(-1, 1)^R`` relative to a reference.

    ``fit`` selects the reference (minimum mean Hamming distance), holds out
    a fraction of rows, augments the rest with random mutants and minimises
    per-position cross-entropy of the reconstruction.
    """

    def __init__(self, latent_dim=16, vocab_size=20, augmentation=4, expected_mutations=3.0,
                 holdout_fraction=0.05, epochs=64, batch_size=64, lr=1e-3, weight_decay=1e-5,
                 encoder_hidden=(), decoder_hidden=(256,), random_state=0):
        self.latent_dim = latent_dim
        self.vocab_size = vocab_size
        self.augmentation = augmentation
        self.expected_mutations = expected_mutations
        self.holdout_fraction = holdout_fraction
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: VedTrainConfig, vocab_size: int) -> "VariantEncoderDecoder":
        c = asdict(config)
        seed = c.pop("seed")
        return cls(vocab_size=vocab_size, random_state=seed, **c)

    # -- architecture -------------------------------------------------------
    def _build(self, reference, rng):
        L, V, R = len(reference), self.vocab_size, self.latent_dim
        self.reference_ = np.asarray(reference, dtype=np.int64)
        self.seq_len_ = L
        self._ref_onehot = one_hot(self.reference_, V)
        enc_sizes = [L * V, *self.encoder_hidden, R]
        # bias-free throughout so that zero features give exactly zero latent
        self.encoder_ = Mlp(enc_sizes, ["tanh"] * (len(enc_sizes) - 1), bias=False, rng=rng)
        dec_sizes = [R, *self.decoder_hidden, L * V]
        self.decoder_ = Mlp(dec_sizes, ["relu"] * len(self.decoder_hidden) + ["identity"], rng=rng)

    def _features(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        if X.shape[1] != self.seq_len_:
            raise ValueError(f"sequence length {X.shape[1]} != reference length {self.seq_len_}")
        return one_hot(X, self.vocab_size) - self._ref_onehot

    def _logits_from(self, z_out):
        # decoder predicts a correction on top of the reference sequence
        n = len(z_out)
        return (z_out + self._ref_onehot).reshape(n, self.seq_len_, self.vocab_size)

    # -- public API ---------------------------------------------------------
    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.int64)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("need a non-empty (n, L) sequence matrix")
        if X.max() >= self.vocab_size:
            raise ValueError("sequence index outside vocabulary")
        rng = np.random.default_rng(self.random_state)
        reference = select_reference(X)
        self._build(reference, rng)

        n = len(X)
        perm = rng.permutation(n)
        n_hold = int(round(self.holdout_fraction * n)) if n > 1 else 0
        hold, train = X[perm[:n_hold]], X[perm[n_hold:]]
        augmented = [train] + [random_mutate(train, self.expected_mutations, self.vocab_size, rng)
                               for _ in range(self.augmentation)]
        train_rows = np.concatenate(augmented)
        self.n_train_rows_ = len(train_rows)

        opt = AdamState(lr=self.lr, weight_decay=self.weight_decay)
        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(train_rows))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                batch = train_rows[order[start:start + self.batch_size]]
                total += self._train_step(batch, opt) * len(batch)
            history.append({"epoch": epoch, "loss": total / len(train_rows),
                            "train_accuracy": float((self.inverse_transform(self.transform(train)) == train).mean())})
        self.history_ = history
        self.report_ = self.accuracy_report(hold) if len(hold) else {}
        self.report_.update({"n_train": len(train), "n_holdout": len(hold), "n_train_rows": len(train_rows)})
        log.info("VED trained: %s", self.report_)
        return self

    def _train_step(self, batch, opt):
        feats = one_hot(batch, self.vocab_size) - self._ref_onehot
        z, enc_cache = self.encoder_.forward(feats)
        out, dec_cache = self.decoder_.forward(z)
        logits = self._logits_from(out)
        loss, g = cross_entropy(logits, batch)
        # cross_entropy averages over n*L rows; rescale to a per-sequence sum over positions
        g = g.reshape(len(batch), -1) * self.seq_len_
        dec_grads, gz = self.decoder_.backward(dec_cache, g)
        enc_grads, _ = self.encoder_.backward(enc_cache, gz)
        params = self.encoder_.parameters() + self.decoder_.parameters()
        adam_step(opt, params, enc_grads + dec_grads)
        self.encoder_.mark_updated()
        self.decoder_.mark_updated()
        return loss * self.seq_len_

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        X = np.asarray(X, dtype=np.int64)
        Z = self.encoder_(self._features(X))
        return Z[0] if X.ndim == 1 else Z

    encode = transform

    def decode_logits(self, Z):
        check_is_fitted(self, "decoder_")
        Z = np.asarray(Z, dtype=np.float64)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        if Z.shape[1] != self.latent_dim:
            raise ValueError(f"latent dimension {Z.shape[1]} != {self.latent_dim}")
        logits = self._logits_from(self.decoder_(Z))
        return logits[0] if single else logits

    def inverse_transform(self, Z):
        return self.decode_logits(Z).argmax(axis=-1)

    def constrained_decode(self, Z, template, m_decode: int):
        return constrained_decode_logits(self.decode_logits(Z), template, m_decode)

    def accuracy_report(self, X) -> dict:
        """Top-1 reconstruction accuracy split by mutated / non-mutated positions."""
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        pred = self.inverse_transform(self.transform(X))
        mutated = X != self.reference_
        correct = pred == X
        return {
            "mutated_accuracy": float(correct[mutated].mean()) if mutated.any() else None,
            "non_mutated_accuracy": float(correct[~mutated].mean()) if (~mutated).any() else None,
            "overall_accuracy": float(correct.mean()),
        }

    # -- persistence --------------------------------------------------------
    def save(self, path, vocabulary: Vocabulary | None = None):
        check_is_fitted(self, "encoder_")
        extra = {
            "reference": self.reference_.tolist(),
            "vocabulary": vocabulary.symbols if vocabulary else None,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "report": getattr(self, "report_", {}),
        }
        save_checkpoint(path, {"encoder": self.encoder_, "decoder": self.decoder_}, extra)

    @classmethod
    def load(cls, path) -> "VariantEncoderDecoder":
        nets, extra = load_checkpoint(path)
        params = dict(extra["params"])
        for k in ("encoder_hidden", "decoder_hidden"):
            params[k] = tuple(params[k])
        model = cls(**params)
        model.reference_ = np.asarray(extra["reference"], dtype=np.int64)
        model.seq_len_ = len(model.reference_)
        model._ref_onehot = one_hot(model.reference_, model.vocab_size)
        model.encoder_, model.decoder_ = nets["encoder"], nets["decoder"]
        if model.encoder_.n_in != model.seq_len_ * model.vocab_size or model.decoder_.n_out != model.seq_len_ * model.vocab_size:
            raise ValueError(f"{path}: network shapes do not match reference/vocabulary")
        model.report_ = extra.get("report", {})
        model.vocabulary_symbols_ = extra.get("vocabulary")
        return model


def train_ved(data: Dataset, config: VedTrainConfig | None = None) -> VariantEncoderDecoder:
    if len(data) == 0:
        raise ValueError("empty dataset")
    config = config or VedTrainConfig(latent_dim=default_latent_dim(data.length))
    return VariantEncoderDecoder.from_config(config, data.vocabulary.size).fit(data.sequences)
