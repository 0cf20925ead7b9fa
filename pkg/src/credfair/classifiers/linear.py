from __future__ import annotations

import numpy as np

from .base import TrainingError, sigmoid

MAX_ITER = {"gradient-descent": 5000, "newton": 100}
TOL = {"gradient-descent": 1e-6, "newton": 1e-10}


def loss_and_grad(params, X, y, C=1.0):
    """L2-regularised mean log-loss and its gradient; last entry of ``params`` is the bias."""
    n = X.shape[0]
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + w @ w / (2.0 * C * n)
    r = sigmoid(z) - y
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r / n + w / (C * n)
    grad[-1] = r.mean()
    return loss, grad


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


class LogisticRegression:
    def __init__(self, C=1.0, penalty="l2", solver="newton"):
        if penalty not in ("l1", "l2"):
            raise TrainingError(f"unknown penalty {penalty!r}")
        if solver not in MAX_ITER:
            raise TrainingError(f"unknown solver {solver!r}")
        if penalty == "l1" and solver == "newton":
            raise TrainingError("l1 penalty requires the gradient-descent solver")
        if C <= 0:
            raise TrainingError("C must be positive")
        self.C, self.penalty, self.solver = float(C), penalty, solver
        self.coef_ = None
        self.intercept_ = 0.0
        self.converged = False
        self.n_iter = 0

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        params = np.zeros(X.shape[1] + 1)
        if self.solver == "newton":
            params = self._newton(X, y, params)
        else:
            params = self._gradient_descent(X, y, params)
        self.coef_, self.intercept_ = params[:-1].copy(), float(params[-1])
        return self

    def _newton(self, X, y, params):
        n, d = X.shape
        Xa = np.hstack([X, np.ones((n, 1))])
        ridge = np.full(d + 1, 1.0 / (self.C * n))
        ridge[-1] = 1e-12
        for it in range(1, MAX_ITER["newton"] + 1):
            _, grad = loss_and_grad(params, X, y, self.C)
            self.n_iter = it
            if np.max(np.abs(grad)) < TOL["newton"]:
                self.converged = True
                break
            p = sigmoid(Xa @ params)
            H = (Xa * (p * (1 - p))[:, None]).T @ Xa / n + np.diag(ridge)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            params = params - step
        return params

    def _gradient_descent(self, X, y, params):
        n = X.shape[0]
        Xa = np.hstack([X, np.ones((n, 1))])
        # 1/L step with L bounding the log-loss curvature plus the ridge term
        lipschitz = 0.25 * np.linalg.norm(Xa, 2) ** 2 / n + 1.0 / (self.C * n)
        step = 1.0 / lipschitz
        l1 = self.penalty == "l1"
        C = np.inf if l1 else self.C
        for it in range(1, MAX_ITER["gradient-descent"] + 1):
            _, grad = loss_and_grad(params, X, y, C)
            new = params - step * grad
            if l1:
                new[:-1] = _soft_threshold(new[:-1], step / (self.C * n))
            delta = np.max(np.abs(new - params)) / step
            params = new
            self.n_iter = it
            if delta < TOL["gradient-descent"]:
                self.converged = True
                break
        return params

    def predict_proba(self, X):
        return sigmoid(np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_)

    def column_importances(self):
        return np.abs(self.coef_)

    def to_state(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_,
                "converged": self.converged, "n_iter": self.n_iter}

    def load_state(self, state):
        self.coef_ = np.asarray(state["coef"], dtype=np.float64)
        self.intercept_ = float(state["intercept"])
        self.converged = bool(state["converged"])
        self.n_iter = int(state["n_iter"])
        return self
