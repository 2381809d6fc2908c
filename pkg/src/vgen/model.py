"""Full watch-time model: user tower + segment tokens + encoder + decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .decoder import RECURSIVE, DecoderParams, decode, init_decoder, interest_scores, positional_bias
from .errors import CompatibilityError
from .representation import TowerConfig, cross_encode, decompose_segments, init_representation, user_stream


class Vocab:
    """Maps opaque ids to contiguous indices; unknown ids map to ``len(vocab)``."""

    def __init__(self, ids=()):
        self.ids = list(ids)
        self.index = {k: i for i, k in enumerate(self.ids)}

    @classmethod
    def from_values(cls, values):
        return cls(sorted(set(values)))

    def __len__(self):
        return len(self.ids)

    @property
    def oov(self):
        return len(self.ids)

    def lookup(self, key):
        return self.index.get(key, len(self.ids))

    def lookup_many(self, keys):
        return np.fromiter((self.index.get(k, len(self.ids)) for k in keys), dtype=np.int64)


@dataclass
class Vocabs:
    users: Vocab
    videos: Vocab

    @classmethod
    def from_examples(cls, examples):
        users = Vocab.from_values(e.user_id for e in examples)
        videos = set(e.target_video_id for e in examples)
        for e in examples:
            videos.update(h.video_id for h in e.history)
        return cls(users, Vocab(sorted(videos)))

    def to_json(self):
        return {"users": self.users.ids, "videos": self.videos.ids}

    @classmethod
    def from_json(cls, obj):
        return cls(Vocab(obj["users"]), Vocab(obj["videos"]))


@dataclass
class Batch:
    """Array form of a list of training examples."""

    user_idx: np.ndarray
    hist_video: np.ndarray
    hist_behavior: np.ndarray
    hist_mask: np.ndarray
    video_idx: np.ndarray
    durations: np.ndarray
    labels: np.ndarray
    observed: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.user_idx.shape[0])

    def subset(self, idx):
        return Batch(
            self.user_idx[idx],
            self.hist_video[idx],
            self.hist_behavior[idx],
            self.hist_mask[idx],
            self.video_idx[idx],
            self.durations[idx],
            self.labels[idx],
            self.observed[idx],
        )

    @property
    def video_duration(self):
        return self.durations.sum(axis=1)


def encode_examples(examples, vocabs, L_hist, M):
    n = len(examples)
    hist_video = np.full((n, L_hist), vocabs.videos.oov, dtype=np.int64)
    hist_behavior = np.zeros((n, L_hist), dtype=np.int64)
    hist_mask = np.zeros((n, L_hist), dtype=bool)
    durations = np.zeros((n, M))
    labels = np.zeros((n, M), dtype=np.int64)
    for k, e in enumerate(examples):
        if len(e.segment_durations) != M:
            raise CompatibilityError(f"example has {len(e.segment_durations)} segments, model expects M={M}")
        hist = e.history[-L_hist:]
        m = len(hist)
        if m:
            hist_video[k, :m] = vocabs.videos.lookup_many(h.video_id for h in hist)
            hist_behavior[k, :m] = [h.behavior_token for h in hist]
            hist_mask[k, :m] = True
        durations[k] = e.segment_durations
        labels[k] = e.labels
    return Batch(
        user_idx=vocabs.users.lookup_many(e.user_id for e in examples),
        hist_video=hist_video,
        hist_behavior=hist_behavior,
        hist_mask=hist_mask,
        video_idx=vocabs.videos.lookup_many(e.target_video_id for e in examples),
        durations=durations,
        labels=labels,
        observed=np.array([e.observed_watch_time_sec for e in examples], dtype=np.float64),
    )


@dataclass
class ModelConfig:
    tower: TowerConfig
    decoder: DecoderParams

    def validate(self):
        self.tower.validate()
        self.decoder.validate(self.tower.d_model)


def init_model(cfg, seed=0, dtype=np.float64):
    """Fresh parameter store; creation order is fixed so the seed fully determines it."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    store = nx.ParameterStore(seed, dtype)
    init_representation(store, cfg.tower, rng)
    init_decoder(store, cfg.tower.d_model, cfg.tower.hidden, cfg.decoder, rng)
    return store


def encode_segments(store, cfg, batch):
    """Encoder output for the segment stream, (B, M, d)."""
    users, mask = user_stream(store, cfg.tower, batch.user_idx, batch.hist_video, batch.hist_behavior, batch.hist_mask)
    segs = decompose_segments(store, cfg.tower, batch.video_idx)
    _, segs = cross_encode(store, cfg.tower, users, mask, segs)
    return segs


def forward(store, cfg, batch):
    """Decoded :class:`~vgen.decoder.SegmentCurve` for every example in ``batch``."""
    segs = encode_segments(store, cfg, batch)
    z = interest_scores(store, segs)
    s = positional_bias(z, store["bias.w_p"], store["bias.b_p"], cfg.decoder.phi)
    gamma = store["decoder.gamma"] if cfg.decoder.variant == RECURSIVE else None
    return decode(s, cfg.decoder, gamma=gamma, d=batch.durations.astype(store.dtype))


def predict_curves(store, cfg, batch, batch_size=1024):
    """Forward-only ``(q, p, expected_time)`` arrays for a whole dataset."""
    qs, ps, ts = [], [], []
    with nx.no_grad():
        for start in range(0, len(batch), batch_size):
            part = batch.subset(slice(start, start + batch_size))
            curve = forward(store, cfg, part)
            qs.append(curve.q.data)
            ps.append(curve.p.data)
            ts.append(curve.expected_time.data)
    M = cfg.tower.M
    if not qs:
        return np.zeros((0, M)), np.zeros((0, M)), np.zeros(0)
    return np.concatenate(qs), np.concatenate(ps), np.concatenate(ts)
