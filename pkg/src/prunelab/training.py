"""SGD-with-momentum training loop with a per-epoch train-loss trace.

Determinism contract: given the same (network, data, config) the loop is
bitwise reproducible. Shuffling, dropout and augmentation each draw from
their own stream derived from the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as K
from .network import Network, build_network, cross_entropy, error01, loss_and_grad


class TrainingDivergedError(RuntimeError):
    """Raised when the minibatch loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: bool = False
    augment_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("invalid training configuration")

    def lr_at(self, epoch):
        decays = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor**decays

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay_epochs": list(self.lr_decay_epochs),
            "lr_decay_factor": self.lr_decay_factor,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "augment": self.augment,
            "augment_noise": self.augment_noise,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["lr_decay_epochs"] = tuple(d.get("lr_decay_epochs", ()))
        return TrainConfig(**d)


@dataclass
class ModelRecord:
    network: Network
    config: TrainConfig
    epoch_losses: np.ndarray
    final_train_ce: float
    final_test_ce: float
    final_train_err01: float
    final_test_err01: float
    gap: float
    seed: int
    hyperparams: Optional[dict] = None
    model_id: str = ""
    aux: dict = field(default_factory=dict)


def evaluate(net, dataset):
    """(cross-entropy, 0-1 error) of the network on a dataset, eval mode."""
    logits = net.forward(dataset.inputs, mode="eval")
    return cross_entropy(logits, dataset.labels), error01(logits, dataset.labels)


def _augment_batch(x, rng, noise):
    if x.ndim == 2:
        return x + noise * rng.standard_normal(x.shape)
    # image batches get per-sample horizontal flips
    flip = rng.random(x.shape[0]) < 0.5
    out = x.copy()
    out[flip] = out[flip][..., ::-1]
    return out


def train(network, train_set, test_set, config):
    """Train in place and return a ModelRecord with the full epoch-loss trace."""
    if train_set.m < 1:
        raise ValueError("training set is empty")
    ss = np.random.SeedSequence([int(config.seed), 0x7261])
    shuffle_rng, dropout_rng, augment_rng = [
        np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)
    ]
    vel = np.zeros(network.param_count)
    flat = network.flatten()
    epoch_losses = np.empty(config.epochs)
    m = train_set.m
    # divergence shows up as overflow before the loss check catches it
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            lr = config.lr_at(epoch)
            order = shuffle_rng.permutation(m)
            for start in range(0, m, config.batch_size):
                idx = order[start : start + config.batch_size]
                xb = train_set.inputs[idx]
                yb = train_set.labels[idx]
                if config.augment:
                    xb = _augment_batch(xb, augment_rng, config.augment_noise)
                loss, grad = loss_and_grad(network, xb, yb, mode="train", rng=dropout_rng)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch offset {start}"
                    )
                K.sgd_momentum(flat, vel, grad, lr, config.momentum, config.weight_decay)
                network.set_flat(flat)
            epoch_losses[epoch] = evaluate(network, train_set)[0]
            if not np.isfinite(epoch_losses[epoch]):
                raise TrainingDivergedError(f"non-finite epoch loss at epoch {epoch}")
    train_ce, train_err = evaluate(network, train_set)
    test_ce, test_err = evaluate(network, test_set)
    return ModelRecord(
        network=network,
        config=config,
        epoch_losses=epoch_losses,
        final_train_ce=train_ce,
        final_test_ce=test_ce,
        final_train_err01=train_err,
        final_test_err01=test_err,
        gap=test_err - train_err,
        seed=config.seed,
    )


def train_model(specs, input_shape, train_set, test_set, config):
    """Build (seeded init) and train a fresh network."""
    init_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(config.seed), 0x696e]))
    )
    net = build_network(specs, input_shape, init_rng)
    return train(net, train_set, test_set, config)
