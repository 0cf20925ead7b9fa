from __future__ import annotations

import numpy as np

from .base import TrainingError, sigmoid

BATCH_SIZE = 32
MOMENTUM = 0.9
# stop once the epoch loss has failed to improve by TOL for PATIENCE epochs
TOL, PATIENCE = 1e-4, 10

ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "logistic": (sigmoid, lambda z, a: a * (1.0 - a)),
}


def layer_shapes(n_in, hidden):
    sizes = [n_in, *hidden, 1]
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def unflatten(flat, shapes):
    params, pos = [], 0
    for fan_in, fan_out in shapes:
        W = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        params.append((W, b))
    return params


def flatten(params):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])


def forward(params, X, activation):
    act, _ = ACTIVATIONS[activation]
    zs, As = [], [X]
    a = X
    for W, b in params[:-1]:
        z = a @ W + b
        a = act(z)
        zs.append(z)
        As.append(a)
    W, b = params[-1]
    out = (a @ W + b)[:, 0]
    return out, zs, As


def loss_and_grad(flat, X, y, hidden, activation, alpha):
    """Mean log-loss plus ``alpha/(2n) * sum ||W||^2`` and its gradient w.r.t. the flat params."""
    shapes = layer_shapes(X.shape[1], hidden)
    params = unflatten(flat, shapes)
    n = X.shape[0]
    logits, zs, As = forward(params, X, activation)
    loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
    loss += alpha / (2.0 * n) * sum(np.sum(W * W) for W, _ in params)
    _, dact = ACTIVATIONS[activation]
    delta = ((sigmoid(logits) - y) / n)[:, None]
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        gW = As[layer].T @ delta + alpha / n * W
        gb = delta.sum(axis=0)
        grads[layer] = (gW, gb)
        if layer > 0:
            delta = (delta @ W.T) * dact(zs[layer - 1], As[layer])
    return loss, flatten(grads)


class MLP:
    def __init__(self, hidden_layer_sizes=(32,), activation="relu", solver="momentum",
                 alpha=1e-4, learning_rate=1e-2, max_iter=200):
        if activation not in ACTIVATIONS:
            raise TrainingError(f"unknown activation {activation!r}")
        if solver not in ("gd", "momentum"):
            raise TrainingError(f"unknown solver {solver!r}")
        self.hidden = tuple(int(h) for h in hidden_layer_sizes)
        self.activation, self.solver = activation, solver
        self.alpha, self.learning_rate, self.max_iter = float(alpha), float(learning_rate), int(max_iter)
        self.coefs = None
        self.converged = False
        self.loss_curve: list[float] = []

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = np.random.default_rng(seed)
        shapes = layer_shapes(X.shape[1], self.hidden)
        init = []
        for fan_in, fan_out in shapes:
            # Glorot uniform; logistic units get the wider bound
            factor = 2.0 if self.activation == "logistic" else 6.0
            bound = np.sqrt(factor / (fan_in + fan_out))
            init.append((rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)))
        flat = flatten(init)
        velocity = np.zeros_like(flat)
        best, stale = np.inf, 0
        n = X.shape[0]
        self.loss_curve = []
        for _ in range(self.max_iter):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, BATCH_SIZE):
                batch = order[start:start + BATCH_SIZE]
                loss, grad = loss_and_grad(flat, X[batch], y[batch], self.hidden, self.activation, self.alpha)
                total += loss * len(batch)
                if self.solver == "momentum":
                    velocity = MOMENTUM * velocity - self.learning_rate * grad
                    flat = flat + velocity
                else:
                    flat = flat - self.learning_rate * grad
            epoch_loss = total / n
            self.loss_curve.append(epoch_loss)
            if not np.isfinite(epoch_loss):
                raise TrainingError("MLP training diverged")
            if epoch_loss > best - TOL:
                stale += 1
            else:
                stale = 0
            best = min(best, epoch_loss)
            if stale >= PATIENCE:
                self.converged = True
                break
        self.coefs = unflatten(flat, shapes)
        return self

    def predict_proba(self, X):
        logits, _, _ = forward(self.coefs, np.asarray(X, dtype=np.float64), self.activation)
        return sigmoid(logits)

    def to_state(self):
        return {"coefs": [[W.tolist(), b.tolist()] for W, b in self.coefs],
                "converged": self.converged, "loss_curve": self.loss_curve}

    def load_state(self, state):
        self.coefs = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                      for W, b in state["coefs"]]
        self.converged = bool(state["converged"])
        self.loss_curve = list(state["loss_curve"])
        return self
