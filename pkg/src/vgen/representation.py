"""User tower, segment decomposition of the target video, and the two-stream encoder.

All functions take a :class:`~vgen.numerics.ParameterStore` and batched index
arrays; a single example is a batch of one.  Shapes below use ``B`` for the
batch, ``Lh`` for the history length, ``M`` for segments and ``d`` for
``d_model``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError


@dataclass
class TowerConfig:
    d_model: int = 32
    d_v: int = 32
    d_p: int = 8
    hidden: int = 64
    heads: int = 2
    L: int = 2
    L_hist: int = 20
    M: int = 8
    n_users: int = 1
    n_videos: int = 1
    n_behaviors: int = 5
    tied_segment_mlp: bool = False
    history_positions: bool = False

    def validate(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.L < 0:
            raise ConfigError("L must be >= 0")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if min(self.d_model, self.d_v, self.d_p, self.hidden, self.heads, self.L_hist) < 1:
            raise ConfigError("widths, heads and L_hist must be positive")
        if self.d_model < 2:
            raise ConfigError("d_model must be >= 2 for layer normalisation")

    @property
    def d_k(self):
        return self.d_model // self.heads


def sinusoidal_positions(n, d):
    """Fixed sin/cos position table of shape ``(n, d)``."""
    pos = np.arange(n)[:, None]
    rate = 1.0 / (10_000 ** (2 * (np.arange(d) // 2) / d))
    angle = pos * rate[None, :]
    return np.where(np.arange(d) % 2 == 0, np.sin(angle), np.cos(angle))


def _normal(rng, shape, std):
    return rng.standard_normal(shape) * std


def init_representation(store, cfg, rng):
    """Create every tower parameter in ``store``."""
    cfg.validate()
    d, h = cfg.d_model, cfg.hidden
    emb_std = 0.1
    store.add("user_emb", _normal(rng, (cfg.n_users + 1, d), emb_std))
    store.add("hist_video_emb", _normal(rng, (cfg.n_videos + 1, d), emb_std))
    store.add("behavior_emb", _normal(rng, (cfg.n_behaviors, d), emb_std))
    for name in ("Wq", "Wk", "Wv", "Wo"):
        store.add(f"hist_attn.{name}", _normal(rng, (d, d), 1 / math.sqrt(d)))
    store.add("hist_default", _normal(rng, (d,), emb_std))
    store.add("gate.W", _normal(rng, (2 * d, d), 1 / math.sqrt(2 * d)))
    store.add("gate.b", np.zeros(d))
    store.add("video_emb", _normal(rng, (cfg.n_videos + 1, cfg.d_v), emb_std))
    store.add("seg_emb", _normal(rng, (cfg.M, cfg.d_p), emb_std))
    k = cfg.d_v + cfg.d_p
    lead = () if cfg.tied_segment_mlp else (cfg.M,)
    store.add("seg_mlp.W1", _normal(rng, lead + (k, h), 1 / math.sqrt(k)))
    store.add("seg_mlp.b1", np.zeros(lead + (h,)))
    store.add("seg_mlp.W2", _normal(rng, lead + (h, d), 1 / math.sqrt(h)))
    store.add("seg_mlp.b2", np.zeros(lead + (d,)))
    for layer in range(cfg.L):
        for name in ("Wq_u", "Wk_u", "Wv_u", "Wq_v", "Wk_v", "Wv_v"):
            store.add(f"enc{layer}.{name}", _normal(rng, (d, d), 1 / math.sqrt(d)))
        for stream in ("u", "v"):
            store.add(f"enc{layer}.ln_{stream}.g", np.ones(d))
            store.add(f"enc{layer}.ln_{stream}.b", np.zeros(d))


# ----------------------------------------------------------------------------
# attention helpers
# ----------------------------------------------------------------------------


def _split_heads(x, heads):
    b, n, d = x.shape
    return nx.transpose(nx.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, n, dk = x.shape
    return nx.reshape(nx.transpose(x, (0, 2, 1, 3)), (b, n, h * dk))


def attention_weights(q, k, key_mask=None):
    """Scaled dot-product weights for split-head ``q`` (B,H,Lq,dk) and ``k`` (B,H,Lk,dk)."""
    dk = q.shape[-1]
    scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    mask = None if key_mask is None else key_mask[:, None, None, :]
    return nx.softmax_rows(scores, mask)


# ----------------------------------------------------------------------------
# user tower
# ----------------------------------------------------------------------------


def embed_user(store, user_idx):
    """(B,) user indices -> (B, d); unknown users use the last (OOV) row."""
    return nx.take(store["user_emb"], user_idx)


def history_tokens(store, cfg, hist_video, hist_behavior):
    tokens = nx.take(store["hist_video_emb"], hist_video) + nx.take(store["behavior_emb"], hist_behavior)
    if cfg.history_positions:
        b, n, d = tokens.shape
        tokens = tokens + np.broadcast_to(sinusoidal_positions(n, d), (b, n, d)).astype(tokens.data.dtype)
    return tokens


def encode_history(store, cfg, hist_video, hist_behavior, hist_mask):
    """Self-attention over the history; returns ``(U_seq, encoded_tokens)``.

    ``U_seq`` (B, d) is the mean of the attention outputs over real
    (unpadded) positions; an empty history yields the learned default vector.
    """
    hist_mask = np.asarray(hist_mask, dtype=bool)
    if hist_mask.shape[1] > cfg.L_hist:
        raise DimensionError(f"history length {hist_mask.shape[1]} exceeds L_hist={cfg.L_hist}")
    tokens = history_tokens(store, cfg, hist_video, hist_behavior)
    b, n, d = tokens.shape
    q = _split_heads(nx.matmul(tokens, store["hist_attn.Wq"]), cfg.heads)
    k = _split_heads(nx.matmul(tokens, store["hist_attn.Wk"]), cfg.heads)
    v = _split_heads(nx.matmul(tokens, store["hist_attn.Wv"]), cfg.heads)
    attn = attention_weights(q, k, hist_mask)
    encoded = nx.matmul(_merge_heads(nx.matmul(attn, v)), store["hist_attn.Wo"])

    dtype = tokens.data.dtype
    count = hist_mask.sum(axis=1)
    weights = (hist_mask / np.maximum(count, 1)[:, None]).astype(dtype)
    pooled = nx.sum_(nx.mul(encoded, np.repeat(weights[:, :, None], d, axis=2)), axis=1)
    empty = np.repeat((count == 0).astype(dtype)[:, None], d, axis=1)
    default = nx.broadcast_to(store["hist_default"], (b, d))
    return pooled + nx.mul(default, empty), encoded


def fuse_gate(store, u_id, u_seq):
    """Gated blend ``g * u_id + (1 - g) * u_seq`` with ``g = sigmoid([u_id; u_seq] W + b)``."""
    gate = nx.sigmoid(nx.matmul(nx.concat([u_id, u_seq], axis=-1), store["gate.W"]) + store["gate.b"])
    return nx.mul(gate, u_id) + nx.mul(1.0 - gate, u_seq)


def user_stream(store, cfg, user_idx, hist_video, hist_behavior, hist_mask):
    """Fused user token followed by the encoded history: ``(tokens (B, 1+Lh, d), mask)``."""
    u_id = embed_user(store, user_idx)
    u_seq, encoded = encode_history(store, cfg, hist_video, hist_behavior, hist_mask)
    fused = fuse_gate(store, u_id, u_seq)
    b, d = fused.shape
    tokens = nx.concat([nx.reshape(fused, (b, 1, d)), encoded], axis=1)
    mask = np.concatenate([np.ones((b, 1), dtype=bool), np.asarray(hist_mask, dtype=bool)], axis=1)
    return tokens, mask


# ----------------------------------------------------------------------------
# video segments
# ----------------------------------------------------------------------------


def decompose_segments(store, cfg, video_idx):
    """Segment tokens (B, M, d): per-segment MLP on ``[video; Emb(i)]`` plus PE(i)."""
    video = nx.take(store["video_emb"], video_idx)
    b = video.shape[0]
    M, dv, dp = cfg.M, cfg.d_v, cfg.d_p
    if store["seg_emb"].shape[0] != M:
        raise DimensionError(f"segment embedding has {store['seg_emb'].shape[0]} rows, config M={M}")
    vid = nx.broadcast_to(nx.reshape(video, (b, 1, dv)), (b, M, dv))
    seg = nx.broadcast_to(nx.reshape(store["seg_emb"], (1, M, dp)), (b, M, dp))
    x = nx.concat([vid, seg], axis=-1)
    W1, b1, W2, b2 = (store[f"seg_mlp.{n}"] for n in ("W1", "b1", "W2", "b2"))
    if cfg.tied_segment_mlp:
        hidden = nx.gelu(nx.matmul(x, W1) + b1)
        out = nx.matmul(hidden, W2) + b2
    else:
        xs = nx.transpose(x, (1, 0, 2))
        hidden = nx.matmul(xs, W1) + nx.broadcast_to(nx.reshape(b1, (M, 1, cfg.hidden)), (M, b, cfg.hidden))
        hidden = nx.gelu(hidden)
        out = nx.matmul(hidden, W2) + nx.broadcast_to(nx.reshape(b2, (M, 1, cfg.d_model)), (M, b, cfg.d_model))
        out = nx.transpose(out, (1, 0, 2))
    pe = sinusoidal_positions(M, cfg.d_model).astype(out.data.dtype)
    return out + np.broadcast_to(pe, out.shape)


# ----------------------------------------------------------------------------
# two-stream encoder
# ----------------------------------------------------------------------------


def encoder_layer(store, cfg, layer, users, user_mask, segs, return_weights=False):
    p = f"enc{layer}."
    h = cfg.heads
    q_u = _split_heads(nx.matmul(users, store[p + "Wq_u"]), h)
    k_u = _split_heads(nx.matmul(users, store[p + "Wk_u"]), h)
    v_u = _split_heads(nx.matmul(users, store[p + "Wv_u"]), h)
    q_v = _split_heads(nx.matmul(segs, store[p + "Wq_v"]), h)
    k_v = _split_heads(nx.matmul(segs, store[p + "Wk_v"]), h)
    v_v = _split_heads(nx.matmul(segs, store[p + "Wv_v"]), h)

    a_uv = attention_weights(q_v, k_u, user_mask)  # segments attend to user tokens
    a_vv = attention_weights(q_v, k_v)
    a_vu = attention_weights(q_u, k_v)  # user tokens attend to segments
    a_uu = attention_weights(q_u, k_u, user_mask)

    seg_update = _merge_heads(nx.matmul(a_uv, v_u) + nx.matmul(a_vv, v_v))
    user_update = _merge_heads(nx.matmul(a_vu, v_v) + nx.matmul(a_uu, v_u))
    segs = nx.layer_norm(seg_update + segs, store[p + "ln_v.g"], store[p + "ln_v.b"])
    users = nx.layer_norm(user_update + users, store[p + "ln_u.g"], store[p + "ln_u.b"])
    if return_weights:
        return users, segs, {"uv": a_uv, "vv": a_vv, "vu": a_vu, "uu": a_uu}
    return users, segs


def cross_encode(store, cfg, users, user_mask, segs):
    """Run ``cfg.L`` encoder layers; returns the updated ``(users, segs)``."""
    if users.shape[-1] != cfg.d_model or segs.shape[-1] != cfg.d_model:
        raise DimensionError(f"stream widths {users.shape[-1]}, {segs.shape[-1]} != d_model={cfg.d_model}")
    if users.shape[:2] != np.shape(user_mask):
        raise DimensionError(f"user mask shape {np.shape(user_mask)} does not match stream {users.shape}")
    for layer in range(cfg.L):
        users, segs = encoder_layer(store, cfg, layer, users, user_mask, segs)
    return users, segs
