"""Estimator front end over the tokenizer, model, and training engine.

PairEncoder is a fit/transform step from raw sentence pairs to encoded id
sequences. NliClassifier wires encoding, initialization, and the training
loop into a fit/predict classifier whose constructor arguments mirror the
architecture and optimization knobs.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .base import (
    ConfigError,
    ContractError,
    ParamsMixin,
    check_fitted,
    check_pair_list,
    split_seed,
)
from .model import (
    ModelConfig,
    ModelParameters,
    forward_batch,
    make_batch,
)
from .text import (
    CLASSES,
    LABEL_TO_INDEX,
    MAX_SEQUENCE_LENGTH,
    EncodedPair,
    NliExample,
    Vocabulary,
    build_vocab,
    encode_pair,
)
from .training import SEED_INIT, TrainConfig, Trainer

SEED_HOLDOUT = 3


class PairEncoder(ParamsMixin):
    """Learns a vocabulary from a corpus and encodes sentence pairs."""

    def __init__(self, min_count: int = 1, max_len: int = MAX_SEQUENCE_LENGTH):
        self.min_count = min_count
        self.max_len = max_len
        self.vocabulary_: Vocabulary | None = None

    def fit(self, examples: Sequence[NliExample], y=None) -> "PairEncoder":
        self.vocabulary_ = build_vocab(examples, min_count=self.min_count)
        return self

    def transform(self, pairs: Iterable) -> list[EncodedPair]:
        """Encode (premise, hypothesis) tuples or labeled examples."""
        check_fitted(self, ["vocabulary_"])
        encoded = []
        for item in pairs:
            label = getattr(item, "label", None)
            if hasattr(item, "premise"):
                premise, hypothesis = item.premise, item.hypothesis
            else:
                premise, hypothesis = item
            encoded.append(
                encode_pair(
                    premise,
                    hypothesis,
                    self.vocabulary_,
                    max_len=self.max_len,
                    label=label,
                )
            )
        return encoded

    def fit_transform(self, examples: Sequence[NliExample], y=None) -> list[EncodedPair]:
        return self.fit(examples).transform(examples)


class NliClassifier(ParamsMixin):
    """Three-way inference classifier over sentence pairs.

    fit builds the vocabulary, initializes the decoder stack, and trains
    with Adam under the warmup/decay schedule, keeping the weights of the
    best validation epoch. predict and predict_proba run the deterministic
    inference path.
    """

    def __init__(
        self,
        n_blocks: int = 12,
        n_heads: int = 12,
        d_model: int = 240,
        d_ffn: int | None = None,
        max_len: int = MAX_SEQUENCE_LENGTH,
        dropout: float = 0.0,
        min_count: int = 1,
        base_lr: float = 6.25e-5,
        warmup_fraction: float = 0.002,
        clip_bound: float = 1.0,
        batch_size: int = 16,
        patience_epochs: int = 10,
        max_epochs: int = 100,
        seed: int = 0,
        dtype: str = "float32",
    ):
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ffn = d_ffn
        self.max_len = max_len
        self.dropout = dropout
        self.min_count = min_count
        self.base_lr = base_lr
        self.warmup_fraction = warmup_fraction
        self.clip_bound = clip_bound
        self.batch_size = batch_size
        self.patience_epochs = patience_epochs
        self.max_epochs = max_epochs
        self.seed = seed
        self.dtype = dtype
        self.params_: ModelParameters | None = None
        self.encoder_: PairEncoder | None = None

    def _np_dtype(self):
        dt = np.dtype(self.dtype)
        if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return dt

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            base_lr=self.base_lr,
            warmup_fraction=self.warmup_fraction,
            clip_bound=self.clip_bound,
            batch_size=self.batch_size,
            patience_epochs=self.patience_epochs,
            max_epochs=self.max_epochs,
            seed=self.seed,
        )

    def fit(
        self,
        examples: Sequence[NliExample],
        validation: Sequence[NliExample] | None = None,
    ) -> "NliClassifier":
        examples = list(examples)
        if not examples:
            raise ContractError("fit needs at least one training example")
        if validation is None:
            examples, validation = self._holdout_split(examples)

        self.encoder_ = PairEncoder(min_count=self.min_count, max_len=self.max_len)
        self.encoder_.fit(examples)
        train_pairs = self.encoder_.transform(examples)
        val_pairs = self.encoder_.transform(validation)

        config = ModelConfig(
            vocab_words=len(self.encoder_.vocabulary_),
            n_blocks=self.n_blocks,
            n_heads=self.n_heads,
            d_model=self.d_model,
            d_ffn=self.d_ffn,
            max_len=self.max_len,
            dropout=self.dropout,
        )
        init_rng = np.random.default_rng(split_seed(self.seed, SEED_INIT))
        params = ModelParameters.initialize(config, init_rng, dtype=self._np_dtype())

        result = Trainer(self._train_config()).fit(params, train_pairs, val_pairs)
        self.params_ = result.params
        self.train_log_ = result.log
        self.model_config_ = config
        self.classes_ = np.asarray(CLASSES, dtype=object)
        return self

    def _holdout_split(self, examples):
        if len(examples) < 2:
            raise ContractError(
                "fit needs a validation set or at least two examples to hold out"
            )
        rng = np.random.default_rng(split_seed(self.seed, SEED_HOLDOUT))
        order = rng.permutation(len(examples))
        n_val = max(1, len(examples) // 10)
        val_idx = set(order[:n_val].tolist())
        train = [e for i, e in enumerate(examples) if i not in val_idx]
        val = [e for i, e in enumerate(examples) if i in val_idx]
        return train, val

    @classmethod
    def from_artifacts(
        cls, params: ModelParameters, vocabulary: Vocabulary, **constructor_args
    ) -> "NliClassifier":
        """A fitted classifier from existing weights and a vocabulary."""
        config = params.config
        clf = cls(
            n_blocks=config.n_blocks,
            n_heads=config.n_heads,
            d_model=config.d_model,
            d_ffn=config.d_ffn,
            max_len=config.max_len,
            dropout=config.dropout,
            dtype=str(params.dtype),
            **constructor_args,
        )
        encoder = PairEncoder(max_len=config.max_len)
        encoder.vocabulary_ = vocabulary
        clf.encoder_ = encoder
        clf.params_ = params
        clf.model_config_ = config
        clf.classes_ = np.asarray(CLASSES, dtype=object)
        return clf

    def predict_proba(self, pairs) -> np.ndarray:
        """Class probability rows aligned with the input order."""
        check_fitted(self, ["params_", "encoder_"])
        pairs = check_pair_list(pairs)
        encoded = self.encoder_.transform(pairs)
        out = np.empty((len(encoded), len(CLASSES)), dtype=np.float64)
        order = sorted(range(len(encoded)), key=lambda i: len(encoded[i]))
        step = max(1, self.batch_size)
        for start in range(0, len(order), step):
            idx = order[start : start + step]
            probs = forward_batch(make_batch([encoded[i] for i in idx]), self.params_)
            out[idx] = probs.data
        return out

    def predict(self, pairs) -> np.ndarray:
        probs = self.predict_proba(pairs)
        return np.asarray(CLASSES, dtype=object)[probs.argmax(axis=1)]

    def score(self, examples, y=None) -> float:
        """Accuracy against gold labels taken from the examples or from y."""
        examples = list(examples)
        if y is not None:
            labels = list(y)
        else:
            labels = [getattr(e, "label", None) for e in examples]
            if any(label is None for label in labels):
                raise ContractError("score needs labeled examples or explicit y")
        if len(labels) != len(examples):
            raise ContractError(
                f"{len(labels)} labels for {len(examples)} examples"
            )
        unknown = sorted(set(labels) - set(CLASSES))
        if unknown:
            raise ContractError(f"unknown labels {unknown}; expected {CLASSES}")
        predicted = self.predict(examples)
        gold = np.asarray(labels, dtype=object)
        return float((predicted == gold).mean())

    @property
    def vocabulary_(self) -> Vocabulary:
        check_fitted(self, ["encoder_"])
        return self.encoder_.vocabulary_

    def n_parameters(self) -> int:
        check_fitted(self, ["params_"])
        return self.params_.n_parameters()
