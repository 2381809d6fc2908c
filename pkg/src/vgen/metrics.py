"""Watch-time evaluation metrics: MAE and pairwise ordering accuracy (XAUC)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

EXHAUSTIVE = "exhaustive"
SAMPLED = "sampled"


@dataclass
class EvalConfig:
    """How XAUC pairs are chosen.

    Datasets with at most ``n_max`` examples use every unordered pair;
    larger ones draw ``pair_count`` random pairs from ``seed``.  ``pair_policy``
    may force one mode ("exhaustive" / "sampled"); "auto" applies the size rule.
    """

    pair_policy: str = "auto"
    n_max: int = 10_000
    pair_count: int = 1_000_000
    seed: int = 0
    n_duration_buckets: int = 4

    def validate(self):
        if self.pair_policy not in ("auto", EXHAUSTIVE, SAMPLED):
            raise ConfigError(f"unknown pair_policy {self.pair_policy!r}")
        if self.pair_count < 1:
            raise ConfigError("pair_count must be >= 1")


@dataclass
class EvalReport:
    method: str
    mae_sec: float
    xauc: float
    n_examples: int
    n_pairs: int
    buckets: list = field(default_factory=list)

    def to_flat(self):
        """Flat mapping, one key per scalar; per-bucket values get a ``bucketK_`` prefix."""
        out = {
            "method": self.method,
            "mae_sec": self.mae_sec,
            "xauc": self.xauc,
            "n_examples": self.n_examples,
            "n_pairs": self.n_pairs,
        }
        for k, b in enumerate(self.buckets):
            for key, val in b.items():
                out[f"bucket{k}_{key}"] = val
        return out


def mae(preds, truths):
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise DomainError(f"mae: need equal-length 1-D inputs, got {preds.shape} and {truths.shape}")
    if preds.size == 0:
        raise DomainError("mae of an empty set is undefined")
    return float(np.mean(np.abs(preds - truths)))


def _pair_scores(dp, dt):
    """Twice the pair credit: 2 concordant, 1 tie in either, 0 discordant."""
    sp, st = np.sign(dp), np.sign(dt)
    tie = (sp == 0) | (st == 0)
    return np.where(tie, 1, 2 * (sp == st)).astype(np.int64)


def xauc(preds, truths, cfg=None, return_pairs=False):
    """Fraction of pairs ordered the same way by ``preds`` and ``truths``.

    A pair tied in either the predictions or the ground truth scores 0.5.
    """
    cfg = cfg or EvalConfig()
    cfg.validate()
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    n = preds.size
    if preds.shape != truths.shape or preds.ndim != 1:
        raise DomainError(f"xauc: need equal-length 1-D inputs, got {preds.shape} and {truths.shape}")
    if n < 2:
        raise DomainError("xauc needs at least two examples")
    mode = cfg.pair_policy
    if mode == "auto":
        mode = EXHAUSTIVE if n <= cfg.n_max else SAMPLED
    if mode == EXHAUSTIVE:
        total, n_pairs = 0, n * (n - 1) // 2
        chunk = max(1, 4_000_000 // n)
        for start in range(0, n - 1, chunk):
            stop = min(n - 1, start + chunk)
            rows = np.arange(start, stop)
            dp = preds[rows, None] - preds[None, :]
            dt = truths[rows, None] - truths[None, :]
            upper = np.arange(n)[None, :] > rows[:, None]
            total += int(_pair_scores(dp, dt)[upper].sum())
    else:
        rng = np.random.default_rng(cfg.seed)
        i = rng.integers(n, size=cfg.pair_count)
        j = rng.integers(n - 1, size=cfg.pair_count)
        j = j + (j >= i)
        n_pairs = cfg.pair_count
        total = int(_pair_scores(preds[i] - preds[j], truths[i] - truths[j]).sum())
    value = total / (2 * n_pairs)
    return (value, n_pairs) if return_pairs else value


def evaluate_predictions(preds, truths, durations=None, cfg=None, method="model"):
    """MAE and XAUC overall, plus a breakdown over duration-quantile buckets."""
    cfg = cfg or EvalConfig()
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.size == 0:
        raise DomainError("cannot evaluate on an empty set")
    err = mae(preds, truths)
    score, n_pairs = xauc(preds, truths, cfg, return_pairs=True)
    buckets = []
    if durations is not None and cfg.n_duration_buckets > 1:
        durations = np.asarray(durations, dtype=np.float64)
        edges = np.quantile(durations, np.linspace(0, 1, cfg.n_duration_buckets + 1)[1:-1])
        which = np.searchsorted(edges, durations, side="left")
        for k in range(cfg.n_duration_buckets):
            sel = which == k
            row = {"n": int(sel.sum())}
            if sel.any():
                row["mae_sec"] = mae(preds[sel], truths[sel])
            if sel.sum() >= 2:
                row["xauc"] = xauc(preds[sel], truths[sel], cfg)
            buckets.append(row)
    return EvalReport(method, err, score, int(preds.size), int(n_pairs), buckets)


def render_table(reports):
    """Plain-text comparison table, one row per method."""
    lines = [f"{'Method':<10} {'MAE':>10} {'XAUC':>8}", "-" * 30]
    for r in reports:
        lines.append(f"{r.method:<10} {r.mae_sec:>10.4f} {r.xauc:>8.4f}")
    return "\n".join(lines)
