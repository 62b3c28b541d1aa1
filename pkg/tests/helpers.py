"""Shared numeric oracles for the test suite.

The finite-difference gradient oracle is deliberately independent of the
package's autodiff: it only calls a black-box scalar function and perturbs
raw float64 arrays.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f with respect to array x.

    x is mutated in place during probing and restored afterwards; it must
    be float64 for the stated accuracy.
    """
    assert x.dtype == np.float64
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Largest elementwise relative error with a small denominator floor.

    The floor keeps coordinates where both gradients are essentially zero
    from registering as spurious mismatches of finite-difference noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def build_toy_config(vocab_words=24, n_blocks=2, n_heads=2, d_model=8, max_len=16, **kw):
    from norminfer.model import ModelConfig

    return ModelConfig(
        vocab_words=vocab_words,
        n_blocks=n_blocks,
        n_heads=n_heads,
        d_model=d_model,
        max_len=max_len,
        **kw,
    )


def build_toy_params(config, seed=0, dtype=np.float32):
    from norminfer.model import ModelParameters

    return ModelParameters.initialize(config, np.random.default_rng(seed), dtype=dtype)


def build_random_pair(rng, config, t=None, label_id=None):
    """An EncodedPair with random in-vocabulary ids ending in end-of-sequence."""
    from norminfer.text import EOS_ID, EncodedPair

    if t is None:
        t = int(rng.integers(2, config.max_len + 1))
    ids = rng.integers(3, config.vocab_words, size=t).astype(np.int64)
    ids[-1] = EOS_ID
    return EncodedPair(
        token_ids=ids,
        position_ids=np.arange(1, t + 1, dtype=np.int64),
        premise_len=max(1, (t - 1) // 2),
        eos_index=t - 1,
        truncated=False,
        label_id=label_id,
    )


CORPUS_PLACES = ("park", "street", "kitchen", "garden", "market", "river")
CORPUS_NOUNS = ("dog", "man", "woman", "child", "bird", "runner")
CORPUS_VERBS = ("walking", "sleeping", "eating", "running", "singing", "waiting")


def make_corpus(n, seed=0):
    """Small labeled corpus with a learnable surface cue per class."""
    from norminfer.text import CLASSES, NliExample

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        noun = CORPUS_NOUNS[rng.integers(len(CORPUS_NOUNS))]
        verb = CORPUS_VERBS[rng.integers(len(CORPUS_VERBS))]
        place = CORPUS_PLACES[rng.integers(len(CORPUS_PLACES))]
        premise = f"a {noun} is {verb} in the {place}"
        label = CLASSES[rng.integers(3)]
        if label == "entailment":
            hypothesis = f"a {noun} is {verb}"
        elif label == "contradiction":
            hypothesis = f"a {noun} is not {verb}"
        else:
            other = CORPUS_PLACES[(CORPUS_PLACES.index(place) + 1) % len(CORPUS_PLACES)]
            hypothesis = f"a {noun} is {verb} in the {other}"
        out.append(NliExample(premise=premise, hypothesis=hypothesis, label=label))
    return out


def fit_tiny_classifier(**overrides):
    """A quickly trained classifier for plumbing tests; accuracy is not the point."""
    from norminfer.estimator import NliClassifier

    kw = dict(
        n_blocks=1,
        n_heads=2,
        d_model=8,
        max_len=16,
        batch_size=8,
        max_epochs=2,
        seed=7,
    )
    kw.update(overrides)
    return NliClassifier(**kw).fit(make_corpus(24), make_corpus(8, seed=1))
