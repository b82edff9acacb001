"""Feedforward-network engine with explicit parameters and reverse-mode gradients.

Arrays are C-contiguous float64 ndarrays throughout. A network owns one
parameter tensor pair (weight, bias) per dense/conv layer and exposes a flat
parameter vector: layers in order, each layer's weight entries (row-major)
followed by its bias entries. ``flat_slices`` is the bijection between flat
positions and (layer, tensor, offset).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K


class ConfigurationError(ValueError):
    """Raised for architecture or shape mismatches."""


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv2d | relu | gap | dropout
    in_dim: int = 0
    out_dim: int = 0
    use_bias: bool = True
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    rate: float = 0.0

    @property
    def has_params(self):
        return self.kind in ("dense", "conv2d")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "dense":
            d.update(in_dim=self.in_dim, out_dim=self.out_dim, use_bias=self.use_bias)
        elif self.kind == "conv2d":
            d.update(
                in_channels=self.in_channels,
                out_channels=self.out_channels,
                kernel_size=self.kernel_size,
                stride=self.stride,
                padding=self.padding,
                use_bias=self.use_bias,
            )
        elif self.kind == "dropout":
            d["rate"] = self.rate
        return d

    @staticmethod
    def from_dict(d):
        return LayerSpec(**d)


def dense(in_dim, out_dim, use_bias=True):
    if in_dim < 1 or out_dim < 1:
        raise ConfigurationError("dense layer dimensions must be positive")
    return LayerSpec("dense", in_dim=in_dim, out_dim=out_dim, use_bias=use_bias)


def conv2d(in_channels, out_channels, kernel_size, stride=1, padding=0, use_bias=True):
    if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
        raise ConfigurationError("invalid conv2d dimensions")
    return LayerSpec(
        "conv2d",
        in_channels=in_channels,
        out_channels=out_channels,
        kernel_size=kernel_size,
        stride=stride,
        padding=padding,
        use_bias=use_bias,
    )


def relu():
    return LayerSpec("relu")


def global_avg_pool():
    return LayerSpec("gap")


def dropout(rate):
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError("dropout rate must lie in [0, 1)")
    return LayerSpec("dropout", rate=rate)


def mlp_specs(input_dim, width, hidden_layers, kappa, dropout_rate=0.0):
    """Specs for an MLP: hidden_layers blocks of dense+relu(+dropout), then a
    dense readout to kappa logits."""
    if hidden_layers < 1:
        raise ConfigurationError("need at least one hidden layer")
    specs = []
    fan_in = input_dim
    for _ in range(hidden_layers):
        specs.append(dense(fan_in, width))
        specs.append(relu())
        if dropout_rate > 0.0:
            specs.append(dropout(dropout_rate))
        fan_in = width
    specs.append(dense(fan_in, kappa))
    return specs


def _infer_shapes(specs, input_shape):
    """Propagate a (sample-level) shape through the stack; raises if layers
    do not compose."""
    shape = tuple(input_shape)
    shapes = [shape]
    for spec in specs:
        if spec.kind == "dense":
            if len(shape) != 1 or shape[0] != spec.in_dim:
                raise ConfigurationError(
                    f"dense layer expects ({spec.in_dim},), got {shape}"
                )
            shape = (spec.out_dim,)
        elif spec.kind == "conv2d":
            if len(shape) != 3 or shape[0] != spec.in_channels:
                raise ConfigurationError(
                    f"conv2d expects ({spec.in_channels}, H, W), got {shape}"
                )
            h = (shape[1] + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
            w = (shape[2] + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
            if h < 1 or w < 1:
                raise ConfigurationError("conv2d output collapses to zero size")
            shape = (spec.out_channels, h, w)
        elif spec.kind == "gap":
            if len(shape) != 3:
                raise ConfigurationError(f"global-avg-pool expects (C, H, W), got {shape}")
            shape = (shape[0],)
        elif spec.kind in ("relu", "dropout"):
            pass
        else:
            raise ConfigurationError(f"unknown layer kind {spec.kind!r}")
        shapes.append(shape)
    if len(shape) != 1:
        raise ConfigurationError("network must end in a logit vector per sample")
    return shapes


# ---------------------------------------------------------------------------
# network


@dataclass
class Network:
    specs: tuple
    params: list = field(default_factory=list)  # one {"W", "b"} per parameterized spec
    input_shape: tuple = ()

    @property
    def depth(self):
        return len(self.params)

    @property
    def kappa(self):
        return _infer_shapes(self.specs, self.input_shape)[-1][0]

    @property
    def param_count(self):
        return sum(p["W"].size + p["b"].size for p in self.params)

    def copy(self):
        return Network(
            self.specs,
            [{"W": p["W"].copy(), "b": p["b"].copy()} for p in self.params],
            self.input_shape,
        )

    def flat_slices(self):
        """Bijection (layer, tensor) -> slice of the flat vector."""
        out = []
        pos = 0
        for i, p in enumerate(self.params):
            out.append((i, "W", slice(pos, pos + p["W"].size)))
            pos += p["W"].size
            out.append((i, "b", slice(pos, pos + p["b"].size)))
            pos += p["b"].size
        return out

    def flatten(self):
        return np.concatenate(
            [np.concatenate([p["W"].ravel(), p["b"].ravel()]) for p in self.params]
        )

    def set_flat(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.param_count,):
            raise ConfigurationError(
                f"flat vector has length {w.size}, expected {self.param_count}"
            )
        for i, name, sl in self.flat_slices():
            self.params[i][name][...] = w[sl].reshape(self.params[i][name].shape)

    def forward(self, batch, mode="eval", rng=None):
        return forward(self, batch, mode=mode, rng=rng)


def build_network(specs, input_shape, rng):
    """Initialize parameters with fan-in-scaled uniform weights (He-style
    bounds, limit sqrt(6 / fan_in)) and zero biases."""
    specs = tuple(specs)
    _infer_shapes(specs, input_shape)  # validates composition
    params = []
    for spec in specs:
        if spec.kind == "dense":
            limit = np.sqrt(6.0 / spec.in_dim)
            w = rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim))
            b = np.zeros(spec.out_dim if spec.use_bias else 0)
            params.append({"W": w, "b": b})
        elif spec.kind == "conv2d":
            fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(
                -limit,
                limit,
                size=(spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size),
            )
            b = np.zeros(spec.out_channels if spec.use_bias else 0)
            params.append({"W": w, "b": b})
    net = Network(specs, params, tuple(input_shape))
    if net.depth < 1:
        raise ConfigurationError("network needs at least one parameterized layer")
    return net


# ---------------------------------------------------------------------------
# conv plumbing (im2col; the GEMM goes through the kernel backend)


def _im2col(x, ksize, stride, padding):
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (ksize, ksize), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, OH, OW, k, k)
    oh, ow = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b * oh * ow, c * ksize * ksize
    )
    return cols, oh, ow


def _col2im(dcols, x_shape, ksize, stride, padding, oh, ow):
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    dx = np.zeros((b, c, hp, wp))
    d6 = dcols.reshape(b, oh, ow, c, ksize, ksize).transpose(0, 3, 1, 2, 4, 5)
    for i in range(ksize):
        for j in range(ksize):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d6[
                :, :, :, :, i, j
            ]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


# ---------------------------------------------------------------------------
# forward / backward


def _forward_cached(net, x, mode, rng):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[1:] != net.input_shape:
        raise ConfigurationError(
            f"batch shape {x.shape[1:]} does not match network input {net.input_shape}"
        )
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    caches = []
    h = x
    p_idx = 0
    for spec in net.specs:
        if spec.kind == "dense":
            p = net.params[p_idx]
            caches.append(("dense", p_idx, h))
            b = p["b"] if p["b"].size else np.zeros(spec.out_dim)
            h = K.affine(h, p["W"], b)
            p_idx += 1
        elif spec.kind == "conv2d":
            p = net.params[p_idx]
            cols, oh, ow = _im2col(h, spec.kernel_size, spec.stride, spec.padding)
            wmat = np.ascontiguousarray(p["W"].reshape(spec.out_channels, -1).T)
            b = p["b"] if p["b"].size else np.zeros(spec.out_channels)
            y = K.affine(cols, wmat, b)
            caches.append(("conv2d", p_idx, (h.shape, cols, wmat, oh, ow)))
            h = np.ascontiguousarray(
                y.reshape(h.shape[0], oh, ow, spec.out_channels).transpose(0, 3, 1, 2)
            )
            p_idx += 1
        elif spec.kind == "relu":
            caches.append(("relu", None, h))
            h = K.relu(h)
        elif spec.kind == "gap":
            caches.append(("gap", None, h.shape))
            h = h.mean(axis=(2, 3))
        elif spec.kind == "dropout":
            if mode == "train" and spec.rate > 0.0:
                if rng is None:
                    raise ConfigurationError("dropout in train mode needs an rng")
                keep = rng.random(h.shape) >= spec.rate
                scale = 1.0 / (1.0 - spec.rate)
                caches.append(("dropout", None, (keep, scale)))
                h = h * keep * scale
            else:
                caches.append(("dropout", None, None))
    return h, caches


def _backward_cached(net, caches, dlogits, want_param_grads=True, probes=()):
    """Walk the caches in reverse, propagating dlogits.

    Returns (param_grads, probe_grads). Probe names: 'input', 'output',
    'last_hidden' (input of the final parameterized layer), or 'layer_in:<j>'
    for the input activation of parameterized layer j.
    """
    probe_grads = {}
    if "output" in probes:
        probe_grads["output"] = dlogits
    grads = {}
    dh = dlogits
    last_param_idx = max((i for _, i, _ in caches if i is not None), default=None)
    for entry in reversed(caches):
        kind, p_idx, cache = entry
        if kind == "dense":
            x = cache
            p = net.params[p_idx]
            dh = np.ascontiguousarray(dh)
            dx, dw, db = K.affine_grad(x, p["W"], dh)
            if want_param_grads:
                grads[p_idx] = (dw, db)
            dh = dx
        elif kind == "conv2d":
            x_shape, cols, wmat, oh, ow = cache
            spec = [s for s in net.specs if s.has_params][p_idx]
            b = x_shape[0]
            dy_mat = np.ascontiguousarray(
                dh.transpose(0, 2, 3, 1).reshape(b * oh * ow, -1)
            )
            dcols, dwmat, db = K.affine_grad(cols, wmat, dy_mat)
            if want_param_grads:
                dw = np.ascontiguousarray(dwmat.T).reshape(net.params[p_idx]["W"].shape)
                grads[p_idx] = (dw, db)
            dh = _col2im(dcols, x_shape, spec.kernel_size, spec.stride, spec.padding, oh, ow)
        elif kind == "relu":
            dh = K.relu_grad(cache, dh)
        elif kind == "gap":
            x_shape = cache
            area = x_shape[2] * x_shape[3]
            dh = np.broadcast_to(dh[:, :, None, None] / area, x_shape).copy()
        elif kind == "dropout":
            if cache is not None:
                keep, scale = cache
                dh = dh * keep * scale
        if p_idx is not None:
            if f"layer_in:{p_idx}" in probes:
                probe_grads[f"layer_in:{p_idx}"] = dh
            if p_idx == last_param_idx and "last_hidden" in probes:
                probe_grads["last_hidden"] = dh
    if "input" in probes:
        probe_grads["input"] = dh
    return grads, probe_grads


def forward(net, batch, mode="eval", rng=None):
    """Logits of shape (batch, kappa). Dropout is active only in train mode."""
    logits, _ = _forward_cached(net, batch, mode, rng)
    return logits


def cross_entropy(logits, labels):
    """Mean of -log softmax(logits)[label] over the batch."""
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    loss, _ = K.softmax_xent(logits, labels)
    return loss


def error01(logits, labels):
    """Fraction of samples misclassified; argmax ties go to the lowest class index."""
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred != np.asarray(labels)))


def loss_and_grad(net, batch, labels, mode="eval", rng=None):
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
    labels = np.asarray(labels, dtype=np.int64)
    logits, caches = _forward_cached(net, batch, mode, rng)
    loss, dlogits = K.softmax_xent(logits, labels)
    grads, _ = _backward_cached(net, caches, dlogits)
    flat = np.empty(net.param_count)
    for i, name, sl in net.flat_slices():
        if sl.start == sl.stop:  # bias-free layer
            continue
        g = grads[i][0] if name == "W" else grads[i][1]
        flat[sl] = g.ravel()
    return loss, flat


def backward(net, batch, labels):
    """Gradient of the mean cross-entropy w.r.t. the flat parameters (eval mode)."""
    return loss_and_grad(net, batch, labels, mode="eval")[1]


def probe_gradients(net, batch, dlogits, probes):
    """Per-sample gradients of dlogits . logits w.r.t. probed activations.

    dlogits is a (batch, kappa) seed matrix, *not* divided by the batch size;
    returns {probe: array} with one gradient row per sample.
    """
    logits, caches = _forward_cached(net, batch, "eval", None)
    _, probe_grads = _backward_cached(
        net, caches, np.ascontiguousarray(dlogits, dtype=np.float64),
        want_param_grads=False, probes=tuple(probes),
    )
    return logits, probe_grads
