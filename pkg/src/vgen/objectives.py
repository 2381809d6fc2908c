"""Training objective: segment cross-entropy, watch-time Huber and ordinal penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import MASKED
from .errors import ConfigError, NumericError

PROB_FLOOR = 1e-7


@dataclass
class LossConfig:
    lambda_1: float = 1.0
    lambda_2: float = 0.1
    lambda_3: float = 0.01
    omega_0: float = 1.0
    rho: float = 0.1
    delta: float = 5.0
    epsilon: float = 0.0
    mu: float = 0.01

    def validate(self):
        lams = (self.lambda_1, self.lambda_2, self.lambda_3)
        if min(lams) < 0 or sum(lams) <= 0:
            raise ConfigError(f"loss weights must be non-negative with a positive sum, got {lams}")
        if self.omega_0 <= 0 or self.rho < 0:
            raise ConfigError("need omega_0 > 0 and rho >= 0")
        if self.delta <= 0:
            raise ConfigError("Huber delta must be positive")
        if self.epsilon < 0 or self.mu < 0:
            raise ConfigError("ordinal epsilon and mu must be non-negative")


def position_weights(M, omega_0, rho):
    return omega_0 * np.exp(-rho * np.arange(M))


def loss_seq(q, labels, omega_0=1.0, rho=0.0):
    """Position-weighted binary cross-entropy on the conditional probabilities.

    ``q`` is a ``(batch, M)`` tensor, ``labels`` an integer array using
    ``MASKED`` for positions after the stop; masked positions contribute
    nothing.  Returns the batch mean of the per-example sums.
    """
    labels = np.asarray(labels)
    if labels.shape != q.shape:
        raise ConfigError(f"labels shape {labels.shape} does not match probabilities {q.shape}")
    dtype = q.data.dtype
    w = position_weights(q.shape[-1], omega_0, rho).astype(dtype)
    pos = np.where(labels == 1, w, 0.0).astype(dtype)
    neg = np.where(labels == 0, w, 0.0).astype(dtype)
    qc = nx.clip(q, PROB_FLOOR, 1.0 - PROB_FLOOR)
    per = nx.neg(nx.mul(nx.log(qc), pos) + nx.mul(nx.log(1.0 - qc), neg))
    return nx.mean(nx.sum_(per, axis=-1))


def loss_huber(t_pred, t_true, delta):
    """Batch-mean Huber penalty on ``t_true - t_pred``."""
    t_true = np.asarray(t_true, dtype=t_pred.data.dtype)
    if t_true.shape != t_pred.shape:
        raise ConfigError(f"target shape {t_true.shape} does not match predictions {t_pred.shape}")
    return nx.mean(nx.huber(nx.neg(t_pred) + t_true, delta))


def loss_ord(p, epsilon=0.0, mu=0.0):
    """Hinge on increases of the marginal curve plus ``mu`` times its total variation."""
    step = p[..., 1:] - p[..., :-1]
    per = nx.sum_(nx.relu(step + epsilon), axis=-1)
    if mu:
        per = per + nx.mul(nx.sum_(nx.abs_(step), axis=-1), mu)
    return nx.mean(per)


def loss_total(components, cfg):
    """Weighted sum of the ``seq``, ``huber`` and ``ord`` components."""
    cfg.validate()
    weights = {"seq": cfg.lambda_1, "huber": cfg.lambda_2, "ord": cfg.lambda_3}
    total = None
    for name, lam in weights.items():
        comp = components[name]
        value = comp.item() if isinstance(comp, nx.Tensor) else float(comp)
        if not math.isfinite(value):
            raise NumericError(f"loss component '{name}' is not finite ({value})")
        term = nx.mul(comp, lam) if isinstance(comp, nx.Tensor) else nx.Tensor(lam * value)
        total = term if total is None else total + term
    return total


def compute_losses(curve, labels, observed, cfg):
    """All three components for one decoded batch, plus their weighted total."""
    parts = {
        "seq": loss_seq(curve.q, labels, cfg.omega_0, cfg.rho),
        "huber": loss_huber(curve.expected_time, observed, cfg.delta),
        "ord": loss_ord(curve.p, cfg.epsilon, cfg.mu),
    }
    return loss_total(parts, cfg), parts


__all__ = [
    "LossConfig",
    "MASKED",
    "compute_losses",
    "loss_huber",
    "loss_ord",
    "loss_seq",
    "loss_total",
    "position_weights",
]
