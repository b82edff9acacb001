"""Pure-numpy reference implementations of the hot training kernels.

This backend is always available and defines the numerical contract that the
compiled backend must match (up to floating-point summation order in the
matrix products).
"""

import numpy as np

NAME = "python"


def affine(x, w, b):
    """y = x @ w + b for a (batch, fan_in) input."""
    return x @ w + b


def affine_grad(x, w, dy):
    """Gradients of an affine layer: returns (dx, dw, db)."""
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, dy):
    """Backward of relu given the pre-activation x."""
    return np.where(x > 0.0, dy, 0.0)


def softmax(logits):
    """Row-wise softmax, log-sum-exp stabilized."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Returns (loss, dlogits) where dlogits is the gradient of the *mean* loss.
    """
    m = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    loss = float(np.mean(np.log(z) - shifted[np.arange(m), labels]))
    dlogits = e / z[:, None]
    dlogits[np.arange(m), labels] -= 1.0
    dlogits /= m
    return loss, dlogits


def sgd_momentum(w, vel, grad, lr, momentum, weight_decay):
    """In-place SGD step with classical momentum and coupled weight decay."""
    g = grad + weight_decay * w
    vel *= momentum
    vel += g
    w -= lr * vel
