"""Dense networks with hand-written forward and backward passes.

The adaptation model is three small multilayer perceptrons sharing no
parameters: a feature extractor (ReLU hidden layers, linear output), a linear
classifier head over the feature space, and a linear + sigmoid head that maps
a feature vector to a scalar instance weight in (0, 1). Everything runs in
float64 and all gradients are computed by explicit backpropagation below; no
autograd framework is involved anywhere in the package.

Checkpoints are versioned JSON documents ("iwot-checkpoint", version 1)
holding, per network, the activation list and each layer's shape and
row-major entries. Floats go through repr so a save/load round trip is
bit-exact.
"""

import json
import math
import os

import numpy as np

from .errors import DataFormatError
from .fileio import atomic_write_text

ACTIVATIONS = ("relu", "sigmoid", "identity")

CHECKPOINT_FORMAT = "iwot-checkpoint"
CHECKPOINT_VERSION = 1


def glorot_uniform(fan_in, fan_out, rng):
    """Weight matrix drawn uniformly from [-s, s] with s = sqrt(6 / (fan_in + fan_out))."""
    scale = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


def _apply_activation(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # Piecewise form avoids overflow in exp for large |z|.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "identity":
        return z
    raise ValueError("unknown activation %r" % (name,))


def _activation_grad(name, z, post):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError("unknown activation %r" % (name,))


class ForwardTrace:
    """Cached per-layer pre- and post-activations from one forward pass."""

    def __init__(self, batch, pre, post):
        self.batch = batch
        self.pre = pre
        self.post = post


class Mlp:
    """A stack of affine layers with elementwise activations.

    Parameters are plain float64 arrays: weights[i] has shape
    (fan_in, fan_out) and biases[i] shape (fan_out,). Layer i computes
    act(x @ weights[i] + biases[i]).
    """

    def __init__(self, weights, biases, activations):
        weights = [np.asarray(w, dtype=np.float64) for w in weights]
        biases = [np.asarray(b, dtype=np.float64) for b in biases]
        activations = list(activations)
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("weights, biases and activations must align layer by layer")
        if not weights:
            raise ValueError("network needs at least one layer")
        for i, (w, b, act) in enumerate(zip(weights, biases, activations)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError("layer %d has inconsistent weight/bias shapes" % i)
            if act not in ACTIVATIONS:
                raise ValueError("layer %d has unknown activation %r" % (i, act))
            if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError("layer %d input width does not match layer %d output" % (i, i - 1))
        self.weights = weights
        self.biases = biases
        self.activations = activations

    @classmethod
    def init(cls, dims, activations, rng):
        """Fresh network over layer widths `dims` with Glorot weights and zero biases."""
        if len(dims) < 2:
            raise ValueError("dims must list at least input and output width")
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        weights = [glorot_uniform(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(weights, biases, activations)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, batch):
        """Run a (batch, input_dim) array through the network.

        Returns (output, trace); feed the trace back to `backward`.
        """
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ValueError(
                "expected batch of shape (n, %d), got %r" % (self.input_dim, batch.shape)
            )
        pre, post = [], []
        current = batch
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = current @ w + b
            current = _apply_activation(act, z)
            pre.append(z)
            post.append(current)
        return current, ForwardTrace(batch, pre, post)

    def backward(self, trace, output_grad):
        """Backpropagate d(loss)/d(output) through the cached forward pass.

        Returns (grads, input_grad) where grads is a list of (dW, db) pairs in
        layer order and input_grad is d(loss)/d(batch).
        """
        output_grad = np.asarray(output_grad, dtype=np.float64)
        if output_grad.shape != trace.post[-1].shape:
            raise ValueError("output_grad shape must match the forward output")
        grads = [None] * self.n_layers
        upstream = output_grad
        for i in range(self.n_layers - 1, -1, -1):
            dz = upstream * _activation_grad(self.activations[i], trace.pre[i], trace.post[i])
            below = trace.post[i - 1] if i > 0 else trace.batch
            grads[i] = (below.T @ dz, dz.sum(axis=0))
            upstream = dz @ self.weights[i].T
        return grads, upstream

    def copy(self):
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def has_finite_params(self):
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


def cross_entropy(logits, labels):
    """Mean cross-entropy over a batch, via a stable log-softmax.

    Returns (loss, dloss/dlogits). Labels are integer class indices.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("logits must be 2-D")
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be 1-D with one entry per row of logits")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label outside [0, %d)" % k)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class SgdMomentum:
    """Classical momentum SGD with decoupled-from-nothing weight decay.

    The update per parameter p with gradient g is
        v <- momentum * v + g + weight_decay * p
        p <- p - lr * v
    Buffers start at zero and live with the optimizer.
    """

    def __init__(self, net, lr, momentum=0.9, weight_decay=0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._vel_w = [np.zeros_like(w) for w in net.weights]
        self._vel_b = [np.zeros_like(b) for b in net.biases]

    def step(self, grads):
        """Apply one update from `grads`, a list of (dW, db) as returned by Mlp.backward."""
        if len(grads) != self.net.n_layers:
            raise ValueError("gradient list does not match network depth")
        for i, (dw, db) in enumerate(grads):
            self._vel_w[i] = (
                self.momentum * self._vel_w[i] + dw + self.weight_decay * self.net.weights[i]
            )
            self._vel_b[i] = (
                self.momentum * self._vel_b[i] + db + self.weight_decay * self.net.biases[i]
            )
            self.net.weights[i] = self.net.weights[i] - self.lr * self._vel_w[i]
            self.net.biases[i] = self.net.biases[i] - self.lr * self._vel_b[i]


def _net_to_json(net):
    layers = []
    for w, b in zip(net.weights, net.biases):
        layers.append(
            {
                "rows": int(w.shape[0]),
                "cols": int(w.shape[1]),
                "weight": [float(x) for x in w.ravel(order="C")],
                "bias": [float(x) for x in b],
            }
        )
    return {"activations": list(net.activations), "layers": layers}


def _net_from_json(doc, name):
    try:
        activations = doc["activations"]
        weights, biases = [], []
        for layer in doc["layers"]:
            rows, cols = int(layer["rows"]), int(layer["cols"])
            flat = np.asarray(layer["weight"], dtype=np.float64)
            if flat.shape != (rows * cols,):
                raise DataFormatError(
                    "network %r: weight entry count does not match declared shape" % name
                )
            weights.append(flat.reshape(rows, cols))
            biases.append(np.asarray(layer["bias"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise DataFormatError("network %r: malformed checkpoint entry (%s)" % (name, exc)) from exc
    try:
        return Mlp(weights, biases, activations)
    except ValueError as exc:
        raise DataFormatError("network %r: %s" % (name, exc)) from exc


def save_checkpoint(path, networks, meta=None):
    """Write named networks plus a free-form metadata dict as versioned JSON."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "networks": {name: _net_to_json(net) for name, net in networks.items()},
    }
    atomic_write_text(path, json.dumps(doc, indent=1))


def load_checkpoint(path):
    """Read a checkpoint written by `save_checkpoint`; returns (networks, meta)."""
    if not os.path.exists(path):
        raise DataFormatError("checkpoint %s does not exist" % (path,))
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError("checkpoint %s is not valid JSON: %s" % (path, exc)) from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError("checkpoint %s has an unrecognized format tag" % (path,))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(
            "checkpoint %s has unsupported version %r (expected %d)"
            % (path, doc.get("version"), CHECKPOINT_VERSION)
        )
    networks = {
        name: _net_from_json(entry, name) for name, entry in doc.get("networks", {}).items()
    }
    return networks, doc.get("meta", {})
