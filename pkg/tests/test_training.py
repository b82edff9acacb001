import numpy as np
import pytest

from prunelab.data import Dataset
from prunelab.network import dense, mlp_specs
from prunelab.training import (
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    train,
    train_model,
)

from conftest import make_net


def test_zero_learning_rate_keeps_initial_weights(toy_data):
    train_set, test_set = toy_data
    net = make_net(mlp_specs(train_set.inputs.shape[1], 8, 1, train_set.kappa), (8,), seed=1)
    before = net.flatten()
    cfg = TrainConfig(epochs=3, batch_size=16, learning_rate=0.0, seed=0)
    record = train(net, train_set, test_set, cfg)
    np.testing.assert_array_equal(record.network.flatten(), before)


def test_single_step_matches_hand_computed_update():
    # one sample, one epoch, batch covers the set, no momentum: w1 = w0 - lr*g
    x = np.array([[2.0]])
    y = np.array([0], dtype=np.int64)
    data = Dataset(x, y, kappa=2)
    net = make_net([dense(1, 2, use_bias=False)], (1,))
    net.params[0]["W"][...] = [[0.3, -0.1]]
    cfg = TrainConfig(epochs=1, batch_size=1, learning_rate=0.5, momentum=0.0, seed=0)
    record = train(net, data, data, cfg)
    # logits = (0.6, -0.2); p = softmax; grad_wk = x * (p_k - [y == k])
    z = np.array([0.6, -0.2])
    p = np.exp(z) / np.exp(z).sum()
    g = 2.0 * (p - np.array([1.0, 0.0]))
    expected = np.array([0.3, -0.1]) - 0.5 * g
    np.testing.assert_allclose(record.network.flatten(), expected, rtol=1e-12)


def test_same_seed_gives_bitwise_identical_records(toy_data):
    train_set, test_set = toy_data
    cfg = TrainConfig(
        epochs=4, batch_size=16, learning_rate=0.1, augment=True, seed=42
    )
    specs = mlp_specs(train_set.inputs.shape[1], 8, 2, train_set.kappa, dropout_rate=0.2)
    a = train_model(specs, (train_set.inputs.shape[1],), train_set, test_set, cfg)
    b = train_model(specs, (train_set.inputs.shape[1],), train_set, test_set, cfg)
    assert a.epoch_losses.tobytes() == b.epoch_losses.tobytes()
    assert a.network.flatten().tobytes() == b.network.flatten().tobytes()
    assert (a.final_train_ce, a.final_test_ce, a.gap) == (b.final_train_ce, b.final_test_ce, b.gap)


def test_epoch_loss_trace_has_length_epochs(trained_toy):
    assert len(trained_toy.epoch_losses) == trained_toy.config.epochs
    assert np.isfinite(trained_toy.epoch_losses).all()


def test_gap_is_exact_difference(trained_toy):
    assert trained_toy.gap == trained_toy.final_test_err01 - trained_toy.final_train_err01


def test_divergence_raises_with_diagnostic(toy_data):
    # lr * weight_decay >> 1 multiplies |w| every step until it overflows
    train_set, test_set = toy_data
    cfg = TrainConfig(epochs=12, batch_size=16, learning_rate=1e9, weight_decay=1e-3, seed=0)
    specs = mlp_specs(train_set.inputs.shape[1], 8, 2, train_set.kappa)
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train_model(specs, (train_set.inputs.shape[1],), train_set, test_set, cfg)


def test_lr_schedule_piecewise_decay():
    cfg = TrainConfig(epochs=10, learning_rate=1.0, lr_decay_epochs=(4, 8), lr_decay_factor=0.1)
    assert cfg.lr_at(0) == 1.0
    assert cfg.lr_at(3) == 1.0
    assert cfg.lr_at(4) == pytest.approx(0.1)
    assert cfg.lr_at(9) == pytest.approx(0.01)


def test_augmentation_changes_training_but_not_eval(toy_data):
    train_set, test_set = toy_data
    specs = mlp_specs(train_set.inputs.shape[1], 8, 1, train_set.kappa)
    cfg_a = TrainConfig(epochs=3, batch_size=16, learning_rate=0.1, augment=False, seed=9)
    cfg_b = TrainConfig(epochs=3, batch_size=16, learning_rate=0.1, augment=True, seed=9)
    a = train_model(specs, (train_set.inputs.shape[1],), train_set, test_set, cfg_a)
    b = train_model(specs, (train_set.inputs.shape[1],), train_set, test_set, cfg_b)
    assert a.network.flatten().tobytes() != b.network.flatten().tobytes()
    # evaluation itself is deterministic and augmentation-free
    assert evaluate(a.network, train_set) == evaluate(a.network, train_set)


def test_train_rejects_empty_dataset():
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), kappa=2)
    net = make_net([dense(2, 2)], (2,))
    with pytest.raises(ValueError):
        train(net, empty, empty, TrainConfig(epochs=1))
