"""Segment scores, continuation probabilities and expected watch time.

Two decoders turn position-biased scores ``s`` into a curve:

* ``chain``: ``q_i = sigmoid(s_i / tau)`` and ``p_i = prod_{t<=i} q_t``.  All
  positions are computed at once and ``p`` is non-increasing by construction.
* ``recursive``: ``p_i = sigmoid(s_i + gamma * sum_{j<i} exp(-alpha (i-j)) p_j)``,
  evaluated left to right; ``q`` is reported as ``p_i / p_{i-1}`` clipped to (0, 1].

In both cases ``q_i`` is the probability of continuing into segment ``i`` given
segment ``i-1`` was entered, ``p_i`` the probability of entering segment ``i``,
and the expected watch time is ``sum_i p_i d_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError

CHAIN = "chain"
RECURSIVE = "recursive"


@dataclass
class DecoderParams:
    variant: str = CHAIN
    tau: float = 1.0
    gamma: float = 0.5
    alpha: float = 0.5
    rank: int = 4
    phi: str = "log1p"

    def validate(self, d_model=None):
        if self.variant not in (CHAIN, RECURSIVE):
            raise ConfigError(f"unknown decoder variant {self.variant!r}")
        if self.tau <= 0 or self.alpha <= 0:
            raise ConfigError("tau and alpha must be positive")
        if self.phi not in ("log1p", "linear"):
            raise ConfigError(f"unknown position encoding {self.phi!r}")
        if self.rank < 0 or (d_model is not None and self.rank > d_model // 2):
            raise ConfigError(f"bilinear rank {self.rank} must lie in [0, d_model/2]")


@dataclass
class SegmentCurve:
    q: nx.Tensor
    p: nx.Tensor
    expected_time: nx.Tensor
    d: np.ndarray


def init_decoder(store, d_model, hidden, params, rng):
    params.validate(d_model)
    d, r = d_model, params.rank
    store.add("head.W1", rng.standard_normal((d, hidden)) / math.sqrt(d))
    store.add("head.b1", np.zeros(hidden))
    store.add("head.W2", rng.standard_normal((hidden, d)) / math.sqrt(hidden))
    store.add("head.b2", np.zeros(d))
    store.add("interest.w1", rng.standard_normal(d) / math.sqrt(d))
    store.add("interest.R", rng.standard_normal((d, r)) / math.sqrt(d))
    store.add("interest.C", rng.standard_normal((d, r)) / math.sqrt(d))
    store.add("interest.lam", np.full(r, 0.1))
    store.add("interest.bf", 0.0)
    store.add("bias.w_p", 0.0)
    store.add("bias.b_p", 0.0)
    if params.variant == RECURSIVE:
        store.add("decoder.gamma", params.gamma)


def position_code(M, kind="log1p"):
    """Monotone position encoding used by the positional bias."""
    i = np.arange(M, dtype=np.float64)
    if kind == "log1p":
        return np.log1p(i)
    if kind == "linear":
        return i / max(M - 1, 1)
    raise ConfigError(f"unknown position encoding {kind!r}")


def segment_features(store, tokens):
    """Shared two-layer MLP over encoded segment tokens (B, M, d) -> (B, M, d)."""
    hidden = nx.gelu(nx.matmul(tokens, store["head.W1"]) + store["head.b1"])
    return nx.matmul(hidden, store["head.W2"]) + store["head.b2"]


def bilinear_scores(h, w1, R, C, lam, bf):
    """Interest score for each segment from features ``h`` (B, M, d).

    ``z_i = w1.h_i + sum_{j != i} h_i^T A h_j + sum_k <R_k, h_i><C_k, h_i> + bf``
    with ``A = sum_k lam_k R_k C_k^T`` never formed explicitly.
    """
    h, w1, R, C, lam = (_tensor(x) for x in (h, w1, R, C, lam))
    b, M, d = h.shape
    z = nx.reshape(nx.matmul(h, nx.reshape(w1, (d, 1))), (b, M))
    if R.shape[-1]:
        r = R.shape[-1]
        hr = nx.matmul(h, R)
        hc = nx.matmul(h, C)
        col_sum = nx.broadcast_to(nx.sum_(hc, axis=1, keepdims=True), (b, M, r))
        cross = nx.sum_(nx.mul(nx.mul(hr, lam), col_sum - hc), axis=-1)
        own = nx.sum_(nx.mul(hr, hc), axis=-1)
        z = z + cross + own
    return z + bf


def interest_scores(store, tokens):
    h = segment_features(store, tokens)
    return bilinear_scores(
        h, store["interest.w1"], store["interest.R"], store["interest.C"], store["interest.lam"], store["interest.bf"]
    )


def positional_bias(z, w_p, b_p, phi="log1p"):
    """``s_i = z_i + w_p * phi(i) + b_p``."""
    z = _tensor(z)
    code = position_code(z.shape[-1], phi).astype(z.data.dtype)
    return z + nx.mul(np.broadcast_to(code, z.shape), _tensor(w_p)) + _tensor(b_p)


def aggregate(p, d):
    """Expected watch time ``sum_i p_i d_i`` over the last axis."""
    p = _tensor(p)
    d = np.asarray(d, dtype=p.data.dtype)
    if d.shape != p.shape:
        d = np.broadcast_to(d, p.shape)
    return nx.sum_(nx.mul(p, d), axis=-1)


def decode_chain(s, tau=1.0, d=None):
    s = _tensor(s)
    if tau <= 0:
        raise ConfigError("tau must be positive")
    q = nx.sigmoid(nx.mul(s, 1.0 / tau))
    p = nx.cumprod(q)
    return _curve(q, p, d)


def decode_recursive(s, gamma=0.5, alpha=0.5, d=None):
    s = _tensor(s)
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    gamma = _tensor(gamma)
    M = s.shape[-1]
    cols = [s[..., i] for i in range(M)]
    probs = []
    for i in range(M):
        logit = cols[i]
        if i:
            carry = None
            for j in range(i):
                term = nx.mul(probs[j], math.exp(-alpha * (i - j)))
                carry = term if carry is None else carry + term
            logit = logit + nx.mul(carry, gamma)
        probs.append(nx.sigmoid(logit))
    p = nx.stack(probs, axis=-1)
    ratios = [probs[0]] + [nx.clip(nx.div(probs[i], probs[i - 1]), 0.0, 1.0) for i in range(1, M)]
    q = nx.stack(ratios, axis=-1)
    return _curve(q, p, d)


def decode(s, params, gamma=None, d=None):
    """Dispatch on ``params.variant``; ``gamma`` overrides the configured value (learnable)."""
    if params.variant == CHAIN:
        return decode_chain(s, params.tau, d)
    return decode_recursive(s, params.gamma if gamma is None else gamma, params.alpha, d)


def _curve(q, p, d):
    if d is None:
        d = np.ones(p.shape)
    d = np.broadcast_to(np.asarray(d, dtype=p.data.dtype), p.shape)
    return SegmentCurve(q=q, p=p, expected_time=aggregate(p, d), d=d)


def _tensor(x):
    return x if isinstance(x, nx.Tensor) else nx.Tensor(np.asarray(x, dtype=np.float64))
