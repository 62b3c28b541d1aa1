import logging
import math

import numpy as np
import pytest
from helpers import build_random_pair, build_toy_config, build_toy_params

from norminfer.base import ConfigError, ContractError, NumericError
from norminfer.model import forward_batch, make_batch
from norminfer.tensor import GradTape, Tensor, parameter
from norminfer.training import (
    AdamOptimizer,
    TrainConfig,
    Trainer,
    accuracy,
    clip,
    clip_gradients,
    count_clamped,
    lr_at,
    make_batches,
    nll_loss,
    train,
)

LN3 = 1.0986122886681098
LN2 = 0.6931471805599453

# Frozen trace: scalar parameter starting at 1.0, loss w^2, lr 0.1,
# gradients 2w, three hand-applied Adam updates with bias correction.
ADAM_QUADRATIC_TRACE = [0.9000000005, 0.8004122286917928, 0.7015862729460303]


def cfg(**kw):
    return TrainConfig(**kw)


class TestLrSchedule:
    def test_zero_at_origin(self):
        assert lr_at(0, 500_000, cfg()) == 0.0

    def test_exact_base_rate_at_warmup_end(self):
        c = cfg()
        total = 500_000
        warmup_end = c.warmup_fraction * total
        assert lr_at(warmup_end, total, c) == c.base_lr

    def test_exact_base_rate_at_fractional_boundary(self):
        c = cfg()
        total = 1234
        warmup_end = c.warmup_fraction * total
        assert lr_at(warmup_end, total, c) == c.base_lr

    def test_zero_at_final_step(self):
        assert lr_at(500_000, 500_000, cfg()) == 0.0

    def test_linear_within_segments(self):
        c = cfg()
        total = 500_000
        warmup_end = c.warmup_fraction * total
        assert lr_at(warmup_end / 2, total, c) == c.base_lr * 0.5
        mid_decay = (warmup_end + total) / 2
        assert abs(lr_at(mid_decay, total, c) - c.base_lr * 0.5) < 1e-18

    def test_maximum_sits_at_warmup_boundary(self):
        c = cfg()
        total = 10_000
        warmup_end = c.warmup_fraction * total
        grid = list(np.linspace(0, total, 401)) + [warmup_end]
        rates = [lr_at(s, total, c) for s in grid]
        assert max(rates) == c.base_lr
        assert rates.index(max(rates)) == len(grid) - 1 or math.isclose(
            grid[int(np.argmax(rates))], warmup_end, abs_tol=total / 400
        )

    def test_monotone_ramp_and_decay(self):
        c = cfg()
        total = 10_000
        warmup_end = c.warmup_fraction * total
        ramp = [lr_at(s, total, c) for s in np.linspace(0, warmup_end, 10)]
        assert all(a < b for a, b in zip(ramp, ramp[1:]))
        decay = [lr_at(s, total, c) for s in np.linspace(warmup_end, total, 10)]
        assert all(a > b for a, b in zip(decay, decay[1:]))

    def test_past_schedule_clamps_to_zero_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="norminfer.training"):
            assert lr_at(600, 500, cfg()) == 0.0
        assert "past the schedule" in caplog.text

    def test_invalid_inputs(self):
        with pytest.raises(ContractError):
            lr_at(1, 0, cfg())
        with pytest.raises(ContractError):
            lr_at(-1, 10, cfg())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            cfg(base_lr=0.0)
        with pytest.raises(ConfigError):
            cfg(warmup_fraction=0.0)
        with pytest.raises(ConfigError):
            cfg(warmup_fraction=1.0)
        with pytest.raises(ConfigError):
            cfg(clip_bound=-1.0)
        with pytest.raises(ConfigError):
            cfg(max_epochs=-1)


class TestClip:
    def test_clamps_to_bound(self):
        g = np.array([-5.0, -1.0, 0.25, 3.0])
        np.testing.assert_array_equal(clip(g, 1.0), [-1.0, -1.0, 0.25, 1.0])

    def test_idempotent(self):
        rng = np.random.default_rng(61)
        for _ in range(10):
            g = rng.normal(scale=3.0, size=20)
            once = clip(g, 1.0)
            np.testing.assert_array_equal(clip(once, 1.0), once)

    def test_within_bound_untouched(self):
        g = np.array([0.5, -0.5])
        np.testing.assert_array_equal(clip(g, 1.0), g)

    def test_invalid_bound(self):
        with pytest.raises(ContractError):
            clip(np.zeros(2), 0.0)


class TestAdam:
    def test_scalar_quadratic_matches_hand_recurrence(self):
        w = parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamOptimizer([("w", w)])
        for expected in ADAM_QUADRATIC_TRACE:
            w.grad = 2.0 * w.data
            opt.step(0.1)
            np.testing.assert_allclose(w.data[0], expected, rtol=0, atol=1e-12)

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        w = parameter(np.array([0.0]), dtype=np.float64)
        opt = AdamOptimizer([("w", w)])
        lr = 0.01
        for _ in range(100):
            before = w.data.copy()
            w.grad = np.array([0.3])
            opt.step(lr)
            delta = w.data - before
            assert delta[0] < 0  # moves against the gradient
            assert abs(abs(delta[0]) - lr) < lr * 1e-6

    def test_state_mirrors_parameter_shapes_and_step_counts(self):
        params = build_toy_params(build_toy_config(vocab_words=8))
        opt = AdamOptimizer(params)
        for name, tensor in params.named_tensors():
            assert opt.m[name].shape == tensor.shape
            assert opt.v[name].shape == tensor.shape
        assert opt.step_count == 0
        for name, tensor in params.named_tensors():
            tensor.grad = np.zeros_like(tensor.data)
        opt.step(1e-3)
        assert opt.step_count == 1

    def test_gradients_cleared_after_step(self):
        w = parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamOptimizer([("w", w)])
        w.grad = np.array([1.0])
        opt.step(0.1)
        assert w.grad is None

    def test_non_finite_gradient_raises(self):
        w = parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamOptimizer([("w", w)])
        w.grad = np.array([np.nan])
        with pytest.raises(NumericError, match="w"):
            opt.step(0.1)

    def test_parameters_without_gradient_skipped(self):
        w = parameter(np.array([1.0]), dtype=np.float64)
        opt = AdamOptimizer([("w", w)])
        opt.step(0.1)
        assert w.data[0] == 1.0


class TestNllLoss:
    def test_uniform_three_class_gives_ln3(self):
        probs = Tensor(np.full((1, 3), 1.0 / 3.0), dtype=np.float64)
        loss = nll_loss(probs, np.array([0]))
        assert abs(loss.item() - LN3) < 1e-9

    def test_uniform_two_class_gives_ln2(self):
        probs = Tensor(np.full((1, 2), 0.5), dtype=np.float64)
        assert abs(nll_loss(probs, np.array([1])).item() - LN2) < 1e-9

    def test_certain_correct_prediction_gives_zero(self):
        probs = Tensor(np.array([[1.0, 0.0, 0.0]]), dtype=np.float64)
        assert nll_loss(probs, np.array([0])).item() == 0.0

    def test_zero_gold_probability_stays_finite(self):
        probs = Tensor(np.array([[1.0, 0.0, 0.0]]), dtype=np.float64)
        loss = nll_loss(probs, np.array([1]))
        assert math.isfinite(loss.item())
        np.testing.assert_allclose(loss.item(), -math.log(1e-12), rtol=1e-12)
        assert count_clamped(probs, np.array([1])) == 1
        assert count_clamped(probs, np.array([0])) == 0

    def test_batch_mean(self):
        probs = Tensor(
            np.array([[1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]]), dtype=np.float64
        )
        loss = nll_loss(probs, np.array([0, 2]))
        assert abs(loss.item() - LN3 / 2) < 1e-9

    def test_validation(self):
        probs = Tensor(np.full((2, 3), 1 / 3), dtype=np.float64)
        with pytest.raises(ContractError):
            nll_loss(probs, np.array([0]))
        with pytest.raises(ContractError):
            nll_loss(probs, np.array([0, 3]))


class TestMakeBatches:
    def build_pairs(self, n, config, seed=0):
        rng = np.random.default_rng(seed)
        return [
            build_random_pair(rng, config, t=int(rng.integers(2, config.max_len)),
                              label_id=int(rng.integers(0, 3)))
            for _ in range(n)
        ]

    def test_every_pair_used_exactly_once(self):
        config = build_toy_config(vocab_words=10, max_len=12)
        pairs = self.build_pairs(23, config)
        batches = make_batches(pairs, cfg(batch_size=4), epoch_seed=5)
        assert sum(b.size for b in batches) == 23
        seen = sorted(
            tuple(b.token_ids[i, : b.eos_index[i] + 1]) for b in batches
            for i in range(b.size)
        )
        expected = sorted(tuple(p.token_ids) for p in pairs)
        assert seen == expected

    def test_same_seed_same_batches(self):
        config = build_toy_config(vocab_words=10, max_len=12)
        pairs = self.build_pairs(20, config)
        a = make_batches(pairs, cfg(batch_size=6), epoch_seed=3)
        b = make_batches(pairs, cfg(batch_size=6), epoch_seed=3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.token_ids, y.token_ids)

    def test_different_seed_changes_order(self):
        config = build_toy_config(vocab_words=10, max_len=12)
        pairs = self.build_pairs(40, config)
        a = make_batches(pairs, cfg(batch_size=4), epoch_seed=1)
        b = make_batches(pairs, cfg(batch_size=4), epoch_seed=2)
        assert any(
            x.token_ids.shape != y.token_ids.shape
            or not np.array_equal(x.token_ids, y.token_ids)
            for x, y in zip(a, b)
        )

    def test_lengths_sorted_within_batches(self):
        config = build_toy_config(vocab_words=10, max_len=14)
        pairs = self.build_pairs(30, config, seed=9)
        for batch in make_batches(pairs, cfg(batch_size=8), epoch_seed=7):
            lengths = [int(e) + 1 for e in batch.eos_index]
            assert lengths == sorted(lengths)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ContractError):
            make_batches([], cfg(), epoch_seed=0)


class FixedTraceTrainer(Trainer):
    """Trainer whose validation accuracy follows a scripted sequence."""

    def __init__(self, config, trace):
        super().__init__(config)
        self.trace = trace
        self.head_snapshots = {}

    def evaluate(self, params, batches):
        epoch = len(self.head_snapshots) + 1
        self.head_snapshots[epoch] = params.w_cls.data.copy()
        return 1.0, self.trace[epoch - 1]


class TestTrainerLoop:
    def small_dataset(self, config, n_train=8, n_val=4, seed=0):
        rng = np.random.default_rng(seed)
        train_pairs = [
            build_random_pair(rng, config, t=5, label_id=i % 3)
            for i in range(n_train)
        ]
        val_pairs = [
            build_random_pair(rng, config, t=5, label_id=i % 3)
            for i in range(n_val)
        ]
        return train_pairs, val_pairs

    def test_scripted_peak_stops_after_patience_and_restores_best(self):
        config = build_toy_config(vocab_words=10, n_blocks=1, d_model=8)
        train_pairs, val_pairs = self.small_dataset(config)
        trace = [0.5 + 0.01 * e for e in range(1, 13)] + [0.5] * 30
        trainer = FixedTraceTrainer(
            cfg(max_epochs=40, patience_epochs=10, base_lr=1e-3, batch_size=4),
            trace,
        )
        params = build_toy_params(config, seed=3)
        result = trainer.fit(params, train_pairs, val_pairs)

        assert len(result.log.epochs) == 22
        assert result.log.best_epoch == 12
        assert result.log.stopped_early
        assert np.array_equal(
            result.params.w_cls.data, trainer.head_snapshots[12]
        )
        assert not np.array_equal(
            result.params.w_cls.data, trainer.head_snapshots[22]
        )

    def test_deterministic_given_seed(self):
        config = build_toy_config(vocab_words=10, n_blocks=1, d_model=8)
        # enough batches that two seeds almost surely shuffle differently
        train_pairs, val_pairs = self.small_dataset(config, n_train=16)

        def run(seed):
            params = build_toy_params(config, seed=7)
            result = train(
                params, train_pairs, val_pairs,
                cfg(max_epochs=3, batch_size=2, base_lr=1e-3, seed=seed),
            )
            return result

        a, b = run(11), run(11)
        assert a.log == b.log
        for (_, ta), (_, tb) in zip(a.params.named_tensors(),
                                    b.params.named_tensors()):
            assert np.array_equal(ta.data, tb.data)

        c = run(12)
        assert any(
            not np.array_equal(ta.data, tc.data)
            for (_, ta), (_, tc) in zip(a.params.named_tensors(),
                                        c.params.named_tensors())
        )

    def test_loss_decreases_on_a_fixed_batch(self):
        config = build_toy_config(vocab_words=12, n_blocks=1, n_heads=2, d_model=8)
        rng = np.random.default_rng(77)
        pairs = [build_random_pair(rng, config, t=5, label_id=i % 3)
                 for i in range(8)]
        batch = make_batch(pairs)
        params = build_toy_params(config, seed=5)
        opt = AdamOptimizer(params)
        losses = []
        for _ in range(50):
            with GradTape() as tape:
                probs = forward_batch(batch, params)
                loss = nll_loss(probs, batch.labels)
                tape.backward(loss)
            clip_gradients(params, 1.0)
            opt.step(1e-3)
            losses.append(loss.item())
        non_decreases = sum(b >= a for a, b in zip(losses, losses[1:]))
        assert non_decreases <= 2
        assert losses[-1] < losses[0]

    def test_zero_epochs_returns_initial_weights_and_empty_log(self):
        config = build_toy_config(vocab_words=10)
        train_pairs, val_pairs = self.small_dataset(config)
        params = build_toy_params(config, seed=1)
        before = params.embedding.data.copy()
        result = train(params, train_pairs, val_pairs, cfg(max_epochs=0))
        assert result.log.epochs == []
        np.testing.assert_array_equal(result.params.embedding.data, before)

    def test_unlabeled_training_pairs_rejected(self):
        config = build_toy_config(vocab_words=10)
        rng = np.random.default_rng(0)
        unlabeled = [build_random_pair(rng, config, t=4)]
        labeled = [build_random_pair(rng, config, t=4, label_id=0)]
        params = build_toy_params(config)
        with pytest.raises(ContractError):
            train(params, unlabeled, labeled, cfg(max_epochs=1))

    def test_divergence_aborts_with_flag(self):
        config = build_toy_config(vocab_words=10, n_blocks=1, d_model=8)
        train_pairs, val_pairs = self.small_dataset(config)
        params = build_toy_params(config, seed=2)
        params.embedding.data[:] = np.nan
        result = train(params, train_pairs, val_pairs,
                       cfg(max_epochs=3, batch_size=4))
        assert result.log.aborted
        assert result.log.epochs == []

    def test_log_export_format(self, tmp_path):
        config = build_toy_config(vocab_words=10, n_blocks=1, d_model=8)
        train_pairs, val_pairs = self.small_dataset(config)
        params = build_toy_params(config, seed=4)
        result = train(params, train_pairs, val_pairs,
                       cfg(max_epochs=2, batch_size=4))
        out = tmp_path / "log.tsv"
        result.log.to_tsv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"
        assert len(lines) == 1 + 2 + 1
        assert lines[-1].startswith("# best_epoch\t")
        assert lines[1].split("\t")[0] == "1"

    def test_accuracy_helper(self):
        config = build_toy_config(vocab_words=10)
        params = build_toy_params(config, seed=6)
        rng = np.random.default_rng(3)
        pairs = [build_random_pair(rng, config, t=4, label_id=i % 3)
                 for i in range(9)]
        value = accuracy(params, pairs)
        assert 0.0 <= value <= 1.0
        with pytest.raises(ContractError):
            accuracy(params, [])
