"""Interaction logs, per-segment labels, training examples and the synthetic generator.

The generator draws latent user/video vectors and rolls a Bernoulli
continuation chain per impression, so the exact conditional probabilities and
expected watch time of every impression are known.  Those ground-truth values
(the *oracle*) are what trained models are measured against.
"""

from __future__ import annotations

import bisect
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import ConfigError, DomainError, IngestionError

MASKED = -1
LOG_FIELDS = ("user_id", "video_id", "timestamp_ms", "duration_sec", "watch_time_sec")


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    video_id: str
    timestamp_ms: int
    video_duration_sec: float
    watch_time_sec: float

    def to_json(self):
        return {
            "user_id": self.user_id,
            "video_id": self.video_id,
            "timestamp_ms": self.timestamp_ms,
            "duration_sec": self.video_duration_sec,
            "watch_time_sec": self.watch_time_sec,
        }


@dataclass(frozen=True)
class HistoryEntry:
    video_id: str
    behavior_token: int
    timestamp_ms: int = 0


@dataclass
class TrainingExample:
    user_id: str
    history: list
    target_video_id: str
    segment_durations: tuple
    labels: tuple
    observed_watch_time_sec: float
    timestamp_ms: int = 0

    @property
    def video_duration_sec(self):
        return float(sum(self.segment_durations))

    @property
    def fully_watched(self):
        return all(y == 1 for y in self.labels)


@dataclass
class ParsedLog:
    """Records in file order plus ingestion counters."""

    records: list = field(default_factory=list)
    n_lines: int = 0
    n_malformed: int = 0
    n_clamped: int = 0
    malformed_lines: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


# ----------------------------------------------------------------------------
# log ingestion
# ----------------------------------------------------------------------------


def _parse_line(line):
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("not an object")
    user, video = obj["user_id"], obj["video_id"]
    if not isinstance(user, str) or not isinstance(video, str):
        raise ValueError("ids must be strings")
    ts = obj["timestamp_ms"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise ValueError("timestamp_ms must be an integer")
    dur, watch = obj["duration_sec"], obj["watch_time_sec"]
    for v in (dur, watch):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError("durations must be finite numbers")
    if dur <= 0:
        raise ValueError("duration_sec must be positive")
    return user, video, ts, float(dur), float(watch)


def parse_log(source, max_malformed_frac=0.01):
    """Read a JSON-lines interaction log.

    ``source`` is a binary stream, a text stream, bytes, or an iterable of
    lines.  Watch times are clamped into ``[0, duration]``.  More than
    ``max_malformed_frac`` malformed lines raises :class:`IngestionError`.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    out = ParsedLog()
    for lineno, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        if not line.strip():
            continue
        out.n_lines += 1
        try:
            user, video, ts, dur, watch = _parse_line(line)
        except (ValueError, KeyError, TypeError):
            out.n_malformed += 1
            out.malformed_lines.append(lineno)
            continue
        clamped = min(max(watch, 0.0), dur)
        if clamped != watch:
            out.n_clamped += 1
        out.records.append(InteractionRecord(user, video, ts, dur, clamped))
    if out.n_lines and out.n_malformed > max_malformed_frac * out.n_lines:
        raise IngestionError(
            f"{out.n_malformed} of {out.n_lines} lines malformed; "
            f"first offenders at lines {out.malformed_lines[:10]}"
        )
    return out


def write_log(records, path_or_stream):
    """Write records as JSON lines (the same format :func:`parse_log` reads)."""
    lines = "".join(json.dumps(r.to_json()) + "\n" for r in records)
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(lines)
    else:
        with open(path_or_stream, "w", encoding="utf-8") as fh:
            fh.write(lines)


def read_log(path):
    with open(path, "rb") as fh:
        return parse_log(fh)


# ----------------------------------------------------------------------------
# segment labels and examples
# ----------------------------------------------------------------------------


def segment_labels(watch_time_sec, duration_sec, M):
    """Uniform segment widths and continuation labels for one impression.

    Segment ``i`` is labelled 1 when the user got past its start
    (``watch > i * d``).  The first segment not entered is labelled 0 and all
    later segments are ``MASKED``.  A fully watched video has no 0 label.
    """
    if M < 1 or not duration_sec > 0 or not 0 <= watch_time_sec <= duration_sec:
        raise DomainError(
            f"segment_labels needs 0 <= watch <= duration, duration > 0 and M >= 1; "
            f"got watch={watch_time_sec}, duration={duration_sec}, M={M}"
        )
    width = duration_sec / M
    labels = []
    for i in range(M):
        if watch_time_sec > i * width:
            labels.append(1)
        else:
            labels.append(0)
            labels.extend([MASKED] * (M - i - 1))
            break
    return (width,) * M, tuple(labels)


def behavior_token(watch_time_sec, duration_sec, B):
    return min(B - 1, int(math.floor(B * watch_time_sec / duration_sec)))


def build_examples(records, L_hist, M, B=5):
    """Turn impressions into training examples with leakage-free histories.

    Each user's impressions are ordered by ``(timestamp, video_id)``; the
    history of an impression holds the ``L_hist`` most recent impressions of
    the same user with a strictly smaller timestamp.  Output is ordered by
    user id, then timestamp, then video id.
    """
    by_user = defaultdict(list)
    for r in records:
        by_user[r.user_id].append(r)
    examples = []
    for user in sorted(by_user):
        rows = sorted(by_user[user], key=lambda r: (r.timestamp_ms, r.video_id))
        stamps = [r.timestamp_ms for r in rows]
        entries = [
            HistoryEntry(r.video_id, behavior_token(r.watch_time_sec, r.video_duration_sec, B), r.timestamp_ms)
            for r in rows
        ]
        for r in rows:
            end = bisect.bisect_left(stamps, r.timestamp_ms)
            history = entries[max(0, end - L_hist) : end]
            durations, labels = segment_labels(r.watch_time_sec, r.video_duration_sec, M)
            examples.append(
                TrainingExample(
                    user_id=user,
                    history=history,
                    target_video_id=r.video_id,
                    segment_durations=durations,
                    labels=labels,
                    observed_watch_time_sec=r.watch_time_sec,
                    timestamp_ms=r.timestamp_ms,
                )
            )
    return examples


def time_split(examples, train_fraction):
    """Chronological split: the last ``1 - train_fraction`` of impressions is held out."""
    if not 0 < train_fraction < 1:
        raise ConfigError(f"split fraction must lie in (0, 1), got {train_fraction}")
    order = sorted(range(len(examples)), key=lambda i: (examples[i].timestamp_ms, i))
    cut = int(round(train_fraction * len(examples)))
    train = [examples[i] for i in sorted(order[:cut])]
    held = [examples[i] for i in sorted(order[cut:])]
    return train, held


# ----------------------------------------------------------------------------
# synthetic generator
# ----------------------------------------------------------------------------


@dataclass
class SynthConfig:
    n_users: int = 500
    n_videos: int = 1000
    n_impressions: int = 50_000
    latent_dim: int = 8
    a_scale: float = 1.0
    a: float = 2.0
    b: float = 0.3
    D_min: float = 5.0
    D_max: float = 60.0
    M: int = 8
    seed: int = 7

    def validate(self):
        if self.n_impressions < 1 or self.n_users < 1 or self.n_videos < 1 or self.latent_dim < 1:
            raise ConfigError("n_users, n_videos, n_impressions and latent_dim must be >= 1")
        if not 0 < self.D_min <= self.D_max:
            raise ConfigError(f"need 0 < D_min <= D_max, got [{self.D_min}, {self.D_max}]")
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")


class OracleHandle:
    """Ground-truth continuation probabilities keyed by ``(user_id, video_id)``."""

    def __init__(self, table=None):
        self.table = dict(table or {})

    def __len__(self):
        return len(self.table)

    def __contains__(self, key):
        return key in self.table

    def lookup(self, user_id, video_id):
        try:
            return self.table[(user_id, video_id)]
        except KeyError:
            raise LookupError(f"oracle has no entry for user {user_id!r}, video {video_id!r}") from None

    def expected_time(self, user_id, video_id):
        return self.lookup(user_id, video_id)[1]

    def predict(self, examples):
        return np.array([self.expected_time(e.user_id, e.target_video_id) for e in examples])


def expected_time_from_conditionals(q, durations):
    """``sum_i (prod_{t<=i} q_t) * d_i`` for one or many curves (last axis)."""
    return np.sum(np.cumprod(q, axis=-1) * durations, axis=-1)


def synth_conditionals(affinity, a, b, M):
    """``sigmoid(affinity + a - b*i)`` for i = 0..M-1; ``affinity`` is already scaled."""
    logits = np.asarray(affinity, dtype=np.float64)[..., None] + a - b * np.arange(M)
    return 0.5 * (1.0 + np.tanh(0.5 * logits))


def conditionals_from_hazard(rate, duration_sec, M):
    """Per-segment continuation probabilities implied by a hazard rate in time.

    ``rate(t)`` is a stop intensity per second; segment ``i`` is kept with
    probability ``exp(-integral of rate over segment i)``.  Used to compare
    curves at different resolutions under the same underlying behaviour.
    """
    edges = np.linspace(0.0, duration_sec, M + 1)
    masses = np.array([quad(rate, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    return np.exp(-masses)


def synth_generate(cfg):
    """Draw a synthetic interaction log and its oracle.

    Returns ``(records, oracle)``.  Latent vectors are standard normal scaled
    by ``1/sqrt(latent_dim)``; each impression's watch time is the number of
    consecutive successes of its continuation chain times the segment width.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / math.sqrt(cfg.latent_dim)
    x_user = rng.standard_normal((cfg.n_users, cfg.latent_dim)) * scale
    y_video = rng.standard_normal((cfg.n_videos, cfg.latent_dim)) * scale
    durations = rng.uniform(cfg.D_min, cfg.D_max, size=cfg.n_videos)
    users = rng.integers(cfg.n_users, size=cfg.n_impressions)
    videos = rng.integers(cfg.n_videos, size=cfg.n_impressions)
    affinity = cfg.a_scale * np.einsum("ij,ij->i", x_user[users], y_video[videos])
    q = synth_conditionals(affinity, cfg.a, cfg.b, cfg.M)
    rolls = rng.random((cfg.n_impressions, cfg.M)) < q
    survived = np.cumprod(rolls, axis=1).sum(axis=1)
    dur = durations[videos]
    watch = np.minimum(survived * (dur / cfg.M), dur)
    seg = np.repeat((dur / cfg.M)[:, None], cfg.M, axis=1)
    expected = expected_time_from_conditionals(q, seg)

    uid = [f"u{i:05d}" for i in range(cfg.n_users)]
    vid = [f"v{i:05d}" for i in range(cfg.n_videos)]
    records, table = [], {}
    for k in range(cfg.n_impressions):
        u, v = uid[users[k]], vid[videos[k]]
        records.append(InteractionRecord(u, v, 1_000 * (k + 1), float(dur[k]), float(watch[k])))
        table[(u, v)] = (q[k], float(expected[k]))
    return records, OracleHandle(table)


def write_sidecar(records, oracle, path):
    """Oracle sidecar: the log line plus ``q_star`` and ``expected_time_sec``."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            q, et = oracle.lookup(r.user_id, r.video_id)
            row = r.to_json()
            row["q_star"] = [float(x) for x in q]
            row["expected_time_sec"] = et
            fh.write(json.dumps(row) + "\n")


def read_sidecar(path):
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                table[(row["user_id"], row["video_id"])] = (
                    np.asarray(row["q_star"], dtype=np.float64),
                    float(row["expected_time_sec"]),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestionError(f"malformed oracle sidecar line {lineno}: {exc}") from exc
    return OracleHandle(table)


def oracle_metrics(oracle, examples, eval_cfg=None):
    """Score the oracle's expected watch time as a predictor on ``examples``."""
    from .metrics import evaluate_predictions

    preds = oracle.predict(examples)
    truths = np.array([e.observed_watch_time_sec for e in examples])
    durs = np.array([e.video_duration_sec for e in examples])
    return evaluate_predictions(preds, truths, durs, eval_cfg, method="oracle")
