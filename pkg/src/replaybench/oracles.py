"""Reward-score models backing the exploration agents.

Three oracle families:

* :class:`RidgeOracle` -- closed-form ridge regression with uncertainty
  bookkeeping (design matrix A, response b), shared or per-arm.
* :class:`LogisticOracle` -- sigmoid linear scorer trained by adaptive-
  moment gradient descent on a (optionally counterfactually reweighted)
  negative log-likelihood.
* :class:`NonlinearOracle` -- one-hidden-layer scorer whose hidden
  representation also feeds a ridge uncertainty head.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError


# ---------------------------------------------------------------------------
# Ridge

class _RidgeState:
    def __init__(self, dim: int, lam: float, sherman_morrison: bool):
        self.A = lam * np.eye(dim)
        self.b = np.zeros(dim)
        self._sm = sherman_morrison
        self._A_inv = np.eye(dim) / lam if sherman_morrison else None
        self._theta = None
        self._chol = None

    def update(self, phi: np.ndarray, r: float):
        if not np.all(np.isfinite(phi)):
            raise DataError("non-finite feature vector")
        self.A += np.outer(phi, phi)
        self.b += r * phi
        self._theta = None
        self._chol = None
        if self._sm:
            Av = self._A_inv @ phi
            self._A_inv -= np.outer(Av, Av) / (1.0 + phi @ Av)
        else:
            self._A_inv = None

    @property
    def theta(self) -> np.ndarray:
        if self._theta is None:
            self._theta = np.linalg.solve(self.A, self.b)
        return self._theta

    @property
    def A_inv(self) -> np.ndarray:
        if self._A_inv is None:
            self._A_inv = np.linalg.inv(self.A)
        return self._A_inv

    @property
    def inv_chol(self) -> np.ndarray:
        """Lower-triangular L with L L' = A^-1, for posterior draws."""
        if self._chol is None:
            inv = (self.A_inv + self.A_inv.T) / 2.0
            self._chol = np.linalg.cholesky(inv)
        return self._chol


class RidgeOracle:
    """Linear reward model with uncertainty, per-arm or shared parameters."""

    def __init__(self, dim: int, lam: float = 1.0, per_arm: bool = False,
                 sherman_morrison: bool = False):
        if lam <= 0:
            raise ConfigError("regularization must be positive")
        self.dim = dim
        self.lam = lam
        self.per_arm = per_arm
        self._sm = sherman_morrison
        self._shared = _RidgeState(dim, lam, sherman_morrison)
        self._arms: dict = {}

    def _state(self, arm=None) -> _RidgeState:
        if not self.per_arm:
            return self._shared
        if arm not in self._arms:
            self._arms[arm] = _RidgeState(self.dim, self.lam, self._sm)
        return self._arms[arm]

    def update(self, phi: np.ndarray, r: float, arm=None):
        self._state(arm).update(np.asarray(phi, dtype=float), r)

    def score(self, phis: np.ndarray, arms=None) -> np.ndarray:
        """Mean scores theta . phi, one per row of ``phis``."""
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        if phis.shape[1] != self.dim:
            raise DataError(f"feature dim {phis.shape[1]} != oracle dim {self.dim}")
        if not self.per_arm:
            return phis @ self._shared.theta
        return np.array([phi @ self._state(a).theta
                         for phi, a in zip(phis, arms)])

    def ucb_bonus(self, phis: np.ndarray, arms=None) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        if not self.per_arm:
            A_inv = self._shared.A_inv
            return np.sqrt(np.einsum("ij,jk,ik->i", phis, A_inv, phis))
        return np.array([np.sqrt(phi @ self._state(a).A_inv @ phi)
                         for phi, a in zip(phis, arms)])

    def sample_theta(self, rng: np.random.Generator, v: float, arm=None) -> np.ndarray:
        """Posterior-style draw theta ~ N(theta, v^2 A^-1)."""
        st = self._state(arm)
        if v == 0:
            return st.theta.copy()
        z = rng.standard_normal(self.dim)
        return st.theta + v * (st.inv_chol @ z)

    # -- checkpointing ------------------------------------------------------

    def schema_hash(self) -> str:
        key = json.dumps(["ridge", self.dim, self.lam, self.per_arm])
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        arms = {str(a): {"A": st.A.tolist(), "b": st.b.tolist()}
                for a, st in self._arms.items()}
        return {"kind": "ridge", "schema_hash": self.schema_hash(),
                "dim": self.dim, "lam": self.lam, "per_arm": self.per_arm,
                "shared": {"A": self._shared.A.tolist(),
                           "b": self._shared.b.tolist()},
                "arms": arms}

    @classmethod
    def from_dict(cls, d: dict) -> "RidgeOracle":
        o = cls(d["dim"], d["lam"], d["per_arm"])
        if d["schema_hash"] != o.schema_hash():
            raise DataError("checkpoint schema hash mismatch")
        o._shared.A = np.array(d["shared"]["A"])
        o._shared.b = np.array(d["shared"]["b"])
        for a, st in d["arms"].items():
            state = o._state(a)
            state.A = np.array(st["A"])
            state.b = np.array(st["b"])
        return o


# ---------------------------------------------------------------------------
# Gradient-trained oracles

@dataclass
class CRMExample:
    """One training example for counterfactual batch learning."""

    phi: np.ndarray
    reward: int
    propensity: float
    n_candidates: int

    def __post_init__(self):
        if self.propensity <= 0:
            raise DataError("propensity must be positive")
        if self.n_candidates < 1:
            raise DataError("candidate count must be positive")


class AdamState:
    def __init__(self, n_params: int, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class LogisticOracle:
    """sigmoid(theta . phi + bias), trained on weighted Bernoulli NLL."""

    def __init__(self, dim: int, lr: float = 1e-3, weight_decay: float = 0.0):
        self.dim = dim
        self.lr = lr
        self.weight_decay = weight_decay
        self.theta = np.zeros(dim)
        self.bias = 0.0
        self.opt = AdamState(dim + 1, lr=lr)

    @property
    def n_params(self) -> int:
        return self.dim + 1

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.theta, [self.bias]])

    def set_params(self, params: np.ndarray):
        self.theta = params[:self.dim].copy()
        self.bias = float(params[self.dim])

    def score(self, phis: np.ndarray) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        if phis.shape[1] != self.dim:
            raise DataError(f"feature dim {phis.shape[1]} != oracle dim {self.dim}")
        return expit(phis @ self.theta + self.bias)

    def loss_and_grad(self, X: np.ndarray, r: np.ndarray, w: np.ndarray,
                      params: np.ndarray | None = None):
        """Weighted NLL and its gradient in flat-parameter form."""
        if params is None:
            params = self.get_params()
        theta, bias = params[:self.dim], params[self.dim]
        n = len(r)
        z = X @ theta + bias
        p = expit(z)
        eps = 1e-12
        nll = -(w * (r * np.log(p + eps) + (1 - r) * np.log(1 - p + eps))).sum() / n
        dz = w * (p - r) / n
        grad = np.concatenate([X.T @ dz, [dz.sum()]])
        if self.weight_decay:
            nll += 0.5 * self.weight_decay * (theta @ theta)
            grad[:self.dim] += self.weight_decay * theta
        return nll, grad


class NonlinearOracle:
    """Two-layer scorer: sigmoid(w2 . tanh(W1 phi + b1) + b2).

    ``hidden(phi)`` exposes the learned representation so a ridge head can
    track uncertainty over it.
    """

    def __init__(self, dim: int, hidden_width: int = 64, lr: float = 1e-3,
                 weight_decay: float = 0.0, seed: int = 0):
        self.dim = dim
        self.h = hidden_width
        self.lr = lr
        self.weight_decay = weight_decay
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(dim)
        self.W1 = rng.normal(0, scale, size=(hidden_width, dim))
        self.b1 = np.zeros(hidden_width)
        self.w2 = rng.normal(0, 1.0 / np.sqrt(hidden_width), size=hidden_width)
        self.b2 = 0.0
        self.opt = AdamState(self.n_params, lr=lr)

    @property
    def n_params(self) -> int:
        return self.h * self.dim + self.h + self.h + 1

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    def set_params(self, params: np.ndarray):
        hd = self.h * self.dim
        self.W1 = params[:hd].reshape(self.h, self.dim).copy()
        self.b1 = params[hd:hd + self.h].copy()
        self.w2 = params[hd + self.h:hd + 2 * self.h].copy()
        self.b2 = float(params[-1])

    def hidden(self, phis: np.ndarray) -> np.ndarray:
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        return np.tanh(phis @ self.W1.T + self.b1)

    def score(self, phis: np.ndarray) -> np.ndarray:
        return expit(self.hidden(phis) @ self.w2 + self.b2)

    def loss_and_grad(self, X: np.ndarray, r: np.ndarray, w: np.ndarray,
                      params: np.ndarray | None = None):
        if params is not None:
            saved = self.get_params()
            self.set_params(params)
        try:
            n = len(r)
            H = np.tanh(X @ self.W1.T + self.b1)
            z = H @ self.w2 + self.b2
            p = expit(z)
            eps = 1e-12
            nll = -(w * (r * np.log(p + eps)
                         + (1 - r) * np.log(1 - p + eps))).sum() / n
            dz = w * (p - r) / n
            g_w2 = H.T @ dz
            g_b2 = dz.sum()
            dH = np.outer(dz, self.w2) * (1 - H * H)
            g_W1 = dH.T @ X
            g_b1 = dH.sum(axis=0)
            grad = np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])
            if self.weight_decay:
                cur = self.get_params()
                nll += 0.5 * self.weight_decay * (cur[:-1] @ cur[:-1])
                grad[:-1] += self.weight_decay * cur[:-1]
            return nll, grad
        finally:
            if params is not None:
                self.set_params(saved)


# ---------------------------------------------------------------------------
# Counterfactual batch learning

def crm_weights(batch: list[CRMExample], use_crm: bool,
                w_max: float = 15.0) -> np.ndarray:
    """Importance weight uniform(a)/propensity per example, capped at w_max.

    With ``use_crm=False`` every weight is 1 (plain likelihood).
    """
    if not use_crm:
        return np.ones(len(batch))
    w = np.empty(len(batch))
    for i, ex in enumerate(batch):
        if ex.propensity <= 0:
            raise DataError("zero/negative propensity in training batch")
        w[i] = min((1.0 / ex.n_candidates) / ex.propensity, w_max)
    return w


def fit_crm(oracle, batch: list[CRMExample], use_crm: bool = True,
            w_max: float = 15.0, epochs: int = 10, batch_size: int = 128,
            rng: np.random.Generator | None = None) -> list[float]:
    """Train a gradient oracle on the batch; returns the per-epoch loss trace."""
    if not batch:
        return []
    rng = rng or np.random.default_rng(0)
    X = np.array([ex.phi for ex in batch], dtype=float)
    r = np.array([ex.reward for ex in batch], dtype=float)
    w = crm_weights(batch, use_crm, w_max)
    n = len(batch)
    trace = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grad = oracle.loss_and_grad(X[idx], r[idx], w[idx])
            oracle.set_params(oracle.opt.step(oracle.get_params(), grad))
            epoch_loss += loss
            n_batches += 1
        trace.append(epoch_loss / n_batches)
    return trace


# ---------------------------------------------------------------------------
# Checkpoint helpers for gradient oracles

def gradient_oracle_to_dict(oracle) -> dict:
    kind = "logistic" if isinstance(oracle, LogisticOracle) else "nonlinear"
    meta = [kind, oracle.dim, getattr(oracle, "h", None)]
    return {"kind": kind,
            "schema_hash": hashlib.sha256(json.dumps(meta).encode()).hexdigest()[:16],
            "dim": oracle.dim,
            "hidden_width": getattr(oracle, "h", None),
            "params": oracle.get_params().tolist()}


def gradient_oracle_from_dict(d: dict):
    if d["kind"] == "logistic":
        oracle = LogisticOracle(d["dim"])
    else:
        oracle = NonlinearOracle(d["dim"], hidden_width=d["hidden_width"])
    check = gradient_oracle_to_dict(oracle)["schema_hash"]
    if check != d["schema_hash"]:
        raise DataError("checkpoint schema hash mismatch")
    oracle.set_params(np.array(d["params"]))
    return oracle
