"""Reference watch-time predictors on a shared feature set.

* VR: value regression, an MLP fit to watch time with squared error.
* WLR: weighted logistic regression; positives weighted by watch time and
  served as ``exp(logit)``.
* OR: ordinal regression over equal-frequency watch-time thresholds.
* D2Q: duration groups, regression of the within-group watch-time quantile,
  mapped back through the group's empirical inverse CDF.

Every baseline sees the same features: the fused user vector and the target
video embedding taken from a watch-time model's parameters (encoder bypassed),
plus ``log1p(duration)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import numerics as nx
from .errors import ConfigError, DegenerateFitError, DomainError
from .metrics import evaluate_predictions
from .representation import embed_user, encode_history, fuse_gate
from .training import Adam, Checkpoint

BASELINES = ("VR", "WLR", "OR", "D2Q")


def shared_features(store, model_cfg, batch, chunk=2048):
    """``[fused user vector, video embedding, log1p(duration)]`` for every example."""
    tower = model_cfg.tower
    rows = []
    with nx.no_grad():
        for start in range(0, len(batch), chunk):
            part = batch.subset(slice(start, start + chunk))
            u_id = embed_user(store, part.user_idx)
            u_seq, _ = encode_history(store, tower, part.hist_video, part.hist_behavior, part.hist_mask)
            user = fuse_gate(store, u_id, u_seq).data
            video = store["video_emb"].data[part.video_idx]
            dur = np.log1p(part.video_duration)[:, None]
            rows.append(np.concatenate([user, video, dur], axis=1).astype(np.float64))
    return np.concatenate(rows) if rows else np.zeros((0, tower.d_model + tower.d_v + 1))


@dataclass
class FitConfig:
    hidden: int = 32
    epochs: int = 10
    lr: float = 3e-3
    batch_size: int = 256
    seed: int = 0


class MLP:
    """Two-layer GELU network with standardised inputs and a zero-initialised output layer."""

    def __init__(self, n_in, n_out, hidden, seed):
        rng = np.random.default_rng(seed)
        self.store = nx.ParameterStore(seed)
        self.store.add("W1", rng.standard_normal((n_in, hidden)) / math.sqrt(n_in))
        self.store.add("b1", np.zeros(hidden))
        # zero output layer: training starts from the standardised-target mean
        self.store.add("W2", np.zeros((hidden, n_out)))
        self.store.add("b2", np.zeros(n_out))
        self.mean = np.zeros(n_in)
        self.scale = np.ones(n_in)

    def __call__(self, X):
        x = nx.Tensor((X - self.mean) / self.scale)
        s = self.store
        return nx.matmul(nx.gelu(nx.matmul(x, s["W1"]) + s["b1"]), s["W2"]) + s["b2"]

    def outputs(self, X):
        with nx.no_grad():
            return self(X).data

    def fit(self, X, loss_fn, cfg):
        """Minimise ``loss_fn(outputs, row_indices)`` with mini-batch Adam."""
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        opt = Adam(self.store, cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        for _ in range(cfg.epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), cfg.batch_size):
                idx = np.sort(order[start : start + cfg.batch_size])
                loss = loss_fn(self(X[idx]), idx)
                opt.step(self.store, nx.backward(loss, self.store))
        return self

    def tensors(self, prefix):
        out = {f"{prefix}.{n}": t.data for n, t in self.store.items()}
        out[f"{prefix}.feature_mean"] = self.mean
        out[f"{prefix}.feature_scale"] = self.scale
        return out

    @classmethod
    def from_tensors(cls, tensors, prefix):
        W1, W2 = tensors[f"{prefix}.W1"], tensors[f"{prefix}.W2"]
        mlp = cls(W1.shape[0], W2.shape[1], W1.shape[1], 0)
        for name in ("W1", "b1", "W2", "b2"):
            mlp.store[name].data = np.asarray(tensors[f"{prefix}.{name}"], dtype=np.float64).copy()
        mlp.mean = np.asarray(tensors[f"{prefix}.feature_mean"], dtype=np.float64)
        mlp.scale = np.asarray(tensors[f"{prefix}.feature_scale"], dtype=np.float64)
        return mlp


def _bce_with_logits(logits, targets, weights):
    """Weighted mean binary cross-entropy; ``targets``/``weights`` are arrays shaped like ``logits``."""
    p = nx.clip(nx.sigmoid(logits), 1e-7, 1 - 1e-7)
    per = nx.mul(nx.log(p), targets) + nx.mul(nx.log(1.0 - p), 1.0 - targets)
    return nx.neg(nx.mul(nx.sum_(nx.mul(per, weights)), 1.0 / float(weights.sum())))


# ----------------------------------------------------------------------------
# value regression
# ----------------------------------------------------------------------------


class ValueRegression:
    name = "VR"

    def __init__(self, cfg=None):
        self.cfg = cfg or FitConfig()

    def fit(self, X, watch, durations):
        self.mu = float(np.mean(watch))
        sd = float(np.std(watch))
        self.sd = sd if sd > 0 else 1.0
        y = ((np.asarray(watch) - self.mu) / self.sd)[:, None]
        self.mlp = MLP(X.shape[1], 1, self.cfg.hidden, self.cfg.seed)

        def loss(out, idx):
            return nx.mean(nx.huber(out - y[idx], 1e9))

        self.mlp.fit(X, loss, self.cfg)
        return self

    def predict(self, X, durations):
        raw = self.mlp.outputs(X)[:, 0] * self.sd + self.mu
        return np.clip(raw, 0.0, durations)

    def tensors(self):
        return {**self.mlp.tensors("mlp"), "target": np.array([self.mu, self.sd])}

    def load(self, tensors):
        self.mlp = MLP.from_tensors(tensors, "mlp")
        self.mu, self.sd = (float(v) for v in tensors["target"])
        return self


# ----------------------------------------------------------------------------
# weighted logistic regression
# ----------------------------------------------------------------------------


class WeightedLogisticRegression:
    name = "WLR"

    def __init__(self, cfg=None, theta=0.05):
        self.cfg = cfg or FitConfig()
        self.theta = theta

    def fit(self, X, watch, durations):
        watch = np.asarray(watch, dtype=np.float64)
        pos = watch > self.theta * np.asarray(durations)
        if pos.all() or not pos.any():
            raise DegenerateFitError("weighted logistic regression needs both positive and negative examples")
        targets = pos.astype(np.float64)[:, None]
        weights = np.where(pos, watch, 1.0)[:, None]
        self.mlp = MLP(X.shape[1], 1, self.cfg.hidden, self.cfg.seed)
        self.mlp.fit(X, lambda out, idx: _bce_with_logits(out, targets[idx], weights[idx]), self.cfg)
        return self

    def predict(self, X, durations=None):
        return serve_odds(self.mlp.outputs(X)[:, 0])

    def tensors(self):
        return {**self.mlp.tensors("mlp"), "theta": np.array([self.theta])}

    def load(self, tensors):
        self.mlp = MLP.from_tensors(tensors, "mlp")
        self.theta = float(tensors["theta"][0])
        return self


def serve_odds(logits):
    """Serving rule for weighted logistic regression: the odds ``exp(logit)``."""
    return np.exp(np.asarray(logits, dtype=np.float64))


# ----------------------------------------------------------------------------
# ordinal regression
# ----------------------------------------------------------------------------


def bucket_thresholds(watch, K=10):
    """Equal-frequency thresholds ``b_1 < ... < b_K`` of the training watch times."""
    levels = np.arange(1, K + 1) / K
    thresholds = np.unique(np.quantile(np.asarray(watch, dtype=np.float64), levels))
    thresholds = thresholds[thresholds > 0]
    if thresholds.size < 2:
        raise DegenerateFitError("watch times too concentrated for at least two ordinal thresholds")
    return thresholds


def ordinal_expected_time(head_probs, thresholds):
    """``sum_k P(T > b_k) (b_k - b_{k-1})`` after forcing the head probabilities non-increasing."""
    probs = np.minimum.accumulate(np.asarray(head_probs, dtype=np.float64), axis=-1)
    widths = np.diff(np.concatenate([[0.0], thresholds]))
    return probs @ widths


class OrdinalRegression:
    name = "OR"

    def __init__(self, cfg=None, K=10):
        self.cfg = cfg or FitConfig()
        self.K = K

    def fit(self, X, watch, durations):
        self.thresholds = bucket_thresholds(watch, self.K)
        targets = (np.asarray(watch)[:, None] > self.thresholds[None, :]).astype(np.float64)
        ones = np.ones_like(targets)
        self.mlp = MLP(X.shape[1], self.thresholds.size, self.cfg.hidden, self.cfg.seed)
        self.mlp.fit(X, lambda out, idx: _bce_with_logits(out, targets[idx], ones[idx]), self.cfg)
        return self

    def head_probabilities(self, X):
        logits = self.mlp.outputs(X)
        return 0.5 * (1.0 + np.tanh(0.5 * logits))

    def predict(self, X, durations=None):
        return ordinal_expected_time(self.head_probabilities(X), self.thresholds)

    def tensors(self):
        return {**self.mlp.tensors("mlp"), "thresholds": self.thresholds}

    def load(self, tensors):
        self.mlp = MLP.from_tensors(tensors, "mlp")
        self.thresholds = np.asarray(tensors["thresholds"], dtype=np.float64)
        return self


# ----------------------------------------------------------------------------
# duration-grouped quantile regression
# ----------------------------------------------------------------------------


def quantile_ranks(values):
    """Within-set quantile rank in [0, 1] (average rank for ties; 0.5 for a single value)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 1:
        return np.array([0.5])
    return (rankdata(values, method="average") - 1.0) / (values.size - 1)


def inverse_cdf(sorted_values, phi):
    """Linear interpolation between order statistics at quantile rank ``phi``."""
    n = len(sorted_values)
    phi = np.clip(np.asarray(phi, dtype=np.float64), 0.0, 1.0)
    return np.interp(phi * (n - 1), np.arange(n), sorted_values)


class DurationGroups:
    """Duration-quantile groups with the sorted training watch times of each.

    Group ``g`` covers ``(edge_{g-1}, edge_g]``: a duration equal to an edge
    falls into the lower group, and durations outside the training range go to
    the nearest end group.
    """

    def __init__(self, edges, cdfs):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.cdfs = [np.sort(np.asarray(c, dtype=np.float64)) for c in cdfs]

    @classmethod
    def fit(cls, durations, watch, G=4):
        durations = np.asarray(durations, dtype=np.float64)
        watch = np.asarray(watch, dtype=np.float64)
        if durations.size == 0:
            raise DomainError("cannot form duration groups from no data")
        # checkpoints hold float32, so fix the edges at that precision now and
        # group assignment is the same before and after a save
        edges = np.unique(np.quantile(durations, np.arange(1, G) / G).astype(np.float32).astype(np.float64))
        while True:
            which = np.searchsorted(edges, durations, side="left")
            counts = np.bincount(which, minlength=edges.size + 1)
            if counts.min() > 0 or edges.size == 0:
                break
            empty = int(np.argmin(counts))
            edges = np.delete(edges, min(empty, edges.size - 1))
        return cls(edges, [watch[which == g] for g in range(edges.size + 1)])

    def assign(self, durations):
        return np.searchsorted(self.edges, np.asarray(durations, dtype=np.float64), side="left")

    def __len__(self):
        return len(self.cdfs)


class DurationQuantile:
    name = "D2Q"

    def __init__(self, cfg=None, G=4):
        self.cfg = cfg or FitConfig()
        self.G = G

    def fit(self, X, watch, durations):
        watch = np.asarray(watch, dtype=np.float64)
        self.groups = DurationGroups.fit(durations, watch, self.G)
        which = self.groups.assign(durations)
        phi = np.zeros_like(watch)
        for g in range(len(self.groups)):
            sel = which == g
            phi[sel] = quantile_ranks(watch[sel])
        target = phi[:, None]
        self.mlp = MLP(X.shape[1], 1, self.cfg.hidden, self.cfg.seed)
        self.mlp.fit(X, lambda out, idx: nx.mean(nx.huber(out - target[idx], 1e9)), self.cfg)
        return self

    def predict_rank(self, X):
        return np.clip(self.mlp.outputs(X)[:, 0], 0.0, 1.0)

    def predict(self, X, durations):
        phi = self.predict_rank(X)
        which = self.groups.assign(durations)
        out = np.empty_like(phi)
        for g, cdf in enumerate(self.groups.cdfs):
            sel = which == g
            out[sel] = inverse_cdf(cdf, phi[sel])
        return out

    def tensors(self):
        out = {**self.mlp.tensors("mlp"), "group_edges": self.groups.edges}
        for g, cdf in enumerate(self.groups.cdfs):
            out[f"group_cdf.{g:03d}"] = cdf
        return out

    def load(self, tensors):
        self.mlp = MLP.from_tensors(tensors, "mlp")
        cdfs = [tensors[k] for k in sorted(k for k in tensors if k.startswith("group_cdf."))]
        self.groups = DurationGroups(tensors["group_edges"], cdfs)
        return self


# ----------------------------------------------------------------------------
# harness
# ----------------------------------------------------------------------------


def make_baseline(name, train_cfg=None, seed=0):
    fit = FitConfig(seed=seed)
    theta, K, G = 0.05, 10, 4
    if train_cfg is not None:
        fit = FitConfig(train_cfg.baseline_hidden, train_cfg.baseline_epochs, train_cfg.baseline_lr, train_cfg.batch_size, seed)
        theta, K, G = train_cfg.theta, train_cfg.n_buckets, train_cfg.n_groups
    if name == "VR":
        return ValueRegression(fit)
    if name == "WLR":
        return WeightedLogisticRegression(fit, theta)
    if name == "OR":
        return OrdinalRegression(fit, K)
    if name == "D2Q":
        return DurationQuantile(fit, G)
    raise ConfigError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")


def baseline_checkpoint(model, train_cfg_dict=None):
    tensors = {k: np.atleast_1d(np.asarray(v, dtype=np.float64)) for k, v in model.tensors().items()}
    return Checkpoint(model_type=f"baseline:{model.name}", config=train_cfg_dict or {}, tensors=tensors)


def baseline_from_checkpoint(ckpt):
    kind, _, name = ckpt.model_type.partition(":")
    if kind != "baseline":
        raise ConfigError(f"checkpoint holds a {ckpt.model_type!r} model, not a baseline")
    return make_baseline(name).load(ckpt.tensors)


def run_baselines(train_features, train_batch, eval_features, eval_batch, train_cfg=None, eval_cfg=None, names=BASELINES):
    """Fit each baseline on the training split and score it on the held-out split."""
    seed = train_cfg.seed if train_cfg is not None else 0
    ec = eval_cfg or (train_cfg.eval_config() if train_cfg is not None else None)
    fitted, reports = {}, {}
    for name in names:
        model = make_baseline(name, train_cfg, seed)
        model.fit(train_features, train_batch.observed, train_batch.video_duration)
        preds = model.predict(eval_features, eval_batch.video_duration)
        fitted[name] = model
        reports[name] = evaluate_predictions(preds, eval_batch.observed, eval_batch.video_duration, ec, method=name)
    return fitted, reports
