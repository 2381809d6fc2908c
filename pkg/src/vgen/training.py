"""Configuration, checkpoints, the training loop, evaluation and prediction."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .data import SynthConfig, time_split
from .decoder import DecoderParams
from .errors import CompatibilityError, ConfigError, DomainError, NumericError
from .metrics import EvalConfig, evaluate_predictions
from .model import ModelConfig, Vocabs, encode_examples, forward, init_model, predict_curves
from .objectives import LossConfig, compute_losses
from .representation import TowerConfig

log = logging.getLogger(__name__)

MAGIC = b"VGEN"
FORMAT_VERSION = 1


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Every tunable of an experiment, as one flat record.

    Keys mirror the fields of the per-module configs; ``from_dict`` rejects
    unknown keys so typos in config files fail loudly.
    """

    # user tower, segments, encoder
    d_model: int = 32
    d_v: int = 32
    d_p: int = 8
    hidden: int = 64
    heads: int = 2
    L: int = 2
    L_hist: int = 20
    M: int = 8
    n_behaviors: int = 5
    tied_segment_mlp: bool = False
    history_positions: bool = False
    # decoder
    variant: str = "chain"
    tau: float = 1.0
    gamma: float = 0.5
    alpha: float = 0.5
    rank: int = 4
    phi: str = "log1p"
    # loss
    lambda_1: float = 1.0
    lambda_2: float = 0.1
    lambda_3: float = 0.01
    omega_0: float = 1.0
    rho: float = 0.1
    delta: float = 5.0
    epsilon: float = 0.0
    mu: float = 0.01
    # evaluation
    pair_policy: str = "auto"
    n_max: int = 10_000
    pair_count: int = 1_000_000
    eval_seed: int = 0
    n_duration_buckets: int = 4
    # synthetic data
    n_users: int = 500
    n_videos: int = 1000
    n_impressions: int = 50_000
    latent_dim: int = 8
    a_scale: float = 1.0
    a: float = 2.0
    b: float = 0.3
    D_min: float = 5.0
    D_max: float = 60.0
    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    decay_scope: str = "all"
    batch_size: int = 256
    epochs: int = 5
    seed: int = 7
    split: float = 0.8
    val_fraction: float = 0.0
    dtype: str = "float32"
    checkpoint: str = "model.ckpt"
    # baselines
    theta: float = 0.05
    n_buckets: int = 10
    n_groups: int = 4
    baseline_hidden: int = 32
    baseline_epochs: int = 10
    baseline_lr: float = 3e-3

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"config file {path} must hold a single flat object")
        return cls.from_dict(obj)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def validate(self):
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.split < 1:
            raise ConfigError(f"split must lie in (0, 1), got {self.split}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.decay_scope not in DECAY_SCOPES:
            raise ConfigError(f"decay_scope must be one of {DECAY_SCOPES}, got {self.decay_scope!r}")
        self.loss_config().validate()
        self.eval_config().validate()
        self.decoder_params().validate(self.d_model)

    def tower_config(self, n_users=1, n_videos=1):
        return TowerConfig(
            d_model=self.d_model,
            d_v=self.d_v,
            d_p=self.d_p,
            hidden=self.hidden,
            heads=self.heads,
            L=self.L,
            L_hist=self.L_hist,
            M=self.M,
            n_users=n_users,
            n_videos=n_videos,
            n_behaviors=self.n_behaviors,
            tied_segment_mlp=self.tied_segment_mlp,
            history_positions=self.history_positions,
        )

    def decoder_params(self):
        return DecoderParams(self.variant, self.tau, self.gamma, self.alpha, self.rank, self.phi)

    def model_config(self, vocabs):
        return ModelConfig(self.tower_config(len(vocabs.users), len(vocabs.videos)), self.decoder_params())

    def loss_config(self):
        return LossConfig(
            self.lambda_1, self.lambda_2, self.lambda_3, self.omega_0, self.rho, self.delta, self.epsilon, self.mu
        )

    def eval_config(self):
        return EvalConfig(self.pair_policy, self.n_max, self.pair_count, self.eval_seed, self.n_duration_buckets)

    def synth_config(self):
        return SynthConfig(
            n_users=self.n_users,
            n_videos=self.n_videos,
            n_impressions=self.n_impressions,
            latent_dim=self.latent_dim,
            a_scale=self.a_scale,
            a=self.a,
            b=self.b,
            D_min=self.D_min,
            D_max=self.D_max,
            M=self.M,
            seed=self.seed,
        )

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


# ----------------------------------------------------------------------------
# checkpoint container
# ----------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model_type: str
    config: dict
    tensors: dict
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    vocab: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def to_bytes(self):
        meta = {
            "model_type": self.model_type,
            "config": self.config,
            "vocab": self.vocab,
            "extra": self.extra,
        }
        parts = [MAGIC, struct.pack("<I", self.version)]
        parts.append(_blob(json.dumps(meta, sort_keys=True).encode("utf-8")))
        parts.append(struct.pack("<QI", int(self.step), len(self.tensors)))
        for name in sorted(self.tensors):
            # asarray keeps 0-d scalars 0-d; tobytes always writes C order
            arr = np.asarray(self.tensors[name], dtype="<f4")
            parts.append(_blob(name.encode("utf-8")))
            parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            parts.append(arr.tobytes())
        parts.append(_blob(json.dumps(self.rng_state, sort_keys=True).encode("utf-8")))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        reader = _Reader(buf)
        if reader.take(4) != MAGIC:
            raise CompatibilityError("not a checkpoint file (bad magic)")
        (version,) = reader.unpack("<I")
        if version != FORMAT_VERSION:
            raise CompatibilityError(f"unsupported checkpoint version {version}")
        meta = json.loads(reader.blob())
        step, count = reader.unpack("<QI")
        tensors = {}
        for _ in range(count):
            name = reader.blob().decode("utf-8")
            (ndim,) = reader.unpack("<I")
            shape = reader.unpack(f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(shape).copy()
        rng_state = json.loads(reader.blob())
        if not reader.done():
            raise CompatibilityError("trailing bytes after checkpoint payload")
        return cls(
            model_type=meta["model_type"],
            config=meta["config"],
            tensors=tensors,
            step=step,
            rng_state=rng_state,
            vocab=meta["vocab"],
            extra=meta["extra"],
            version=version,
        )

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _blob(payload):
    return struct.pack("<I", len(payload)) + payload


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = memoryview(buf), 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CompatibilityError("truncated checkpoint")
        out = bytes(self.buf[self.pos : self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<I")
        return self.take(n)

    def done(self):
        return self.pos == len(self.buf)


def store_from_tensors(tensors, seed=0, dtype=np.float64):
    store = nx.ParameterStore(seed, dtype)
    for name in sorted(tensors):
        store.add(name, tensors[name])
    return store


def load_model(ckpt, dtype=None):
    """``(store, model_config, vocabs, train_config)`` from a model checkpoint."""
    if ckpt.model_type != "vgen":
        raise CompatibilityError(f"checkpoint holds a {ckpt.model_type!r} model, expected 'vgen'")
    cfg = TrainConfig.from_dict(ckpt.config)
    vocabs = Vocabs.from_json(ckpt.vocab)
    store = store_from_tensors(ckpt.tensors, cfg.seed, dtype or cfg.np_dtype)
    return store, cfg.model_config(vocabs), vocabs, cfg


# ----------------------------------------------------------------------------
# optimiser
# ----------------------------------------------------------------------------


DECAY_SCOPES = ("all", "embeddings")


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, decay_scope="all"):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        if decay_scope not in DECAY_SCOPES:
            raise ConfigError(f"decay_scope must be one of {DECAY_SCOPES}, got {decay_scope!r}")
        # embedding tables are the only parameters whose names end in "_emb"
        self.decayed = {n for n in store.names() if decay_scope == "all" or n.endswith("_emb")}
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self, store, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, t in store.items():
            g = grads[name].astype(t.data.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay and name in self.decayed:
                t.data -= (self.lr * self.weight_decay) * t.data
            t.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


# ----------------------------------------------------------------------------
# training, evaluation, prediction
# ----------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list
    store: nx.ParameterStore
    model_config: ModelConfig
    vocabs: Vocabs


def _rng_state_json(rng):
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))


def train(cfg, train_examples, eval_examples=None, vocabs=None, progress=None):
    """Mini-batch Adam training with seeded shuffling.

    Returns a :class:`TrainResult`; ``trace`` has one record per epoch with the
    example-weighted training loss and its components, plus end-of-epoch MAE
    and XAUC on the fitted data and (when given) the held-out examples.

    With ``cfg.val_fraction > 0`` the latest part of ``train_examples`` is
    held back for validation and the returned parameters are those of the
    epoch with the lowest validation MAE.
    """
    cfg.validate()
    if not train_examples:
        raise DomainError("cannot train on an empty dataset")
    vocabs = vocabs or Vocabs.from_examples(train_examples)
    mcfg = cfg.model_config(vocabs)
    store = init_model(mcfg, seed=cfg.seed, dtype=cfg.np_dtype)
    fit_examples, val_examples = train_examples, []
    if cfg.val_fraction > 0:
        fit_examples, val_examples = time_split(train_examples, 1.0 - cfg.val_fraction)
        if not fit_examples or len(val_examples) < 2:
            raise DomainError("val_fraction leaves too few examples for fitting or validation")
    data = encode_examples(fit_examples, vocabs, cfg.L_hist, cfg.M)
    val_batch = encode_examples(val_examples, vocabs, cfg.L_hist, cfg.M) if val_examples else None
    held = encode_examples(eval_examples, vocabs, cfg.L_hist, cfg.M) if eval_examples else None
    best = None
    loss_cfg, eval_cfg = cfg.loss_config(), cfg.eval_config()
    opt = Adam(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, cfg.decay_scope)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    trace, step = [], 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"loss": 0.0, "seq": 0.0, "huber": 0.0, "ord": 0.0}
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start : start + cfg.batch_size])
            batch = data.subset(idx)
            step += 1
            try:
                curve = forward(store, mcfg, batch)
                total, parts = compute_losses(curve, batch.labels, batch.observed, loss_cfg)
                grads = nx.backward(total, store)
            except NumericError as exc:
                raise NumericError(f"training aborted at step {step}: {exc}") from exc
            if not math.isfinite(total.item()):
                comps = {k: v.item() for k, v in parts.items()}
                raise NumericError(f"training aborted at step {step}: non-finite loss, components {comps}")
            opt.step(store, grads)
            k = len(idx)
            sums["loss"] += total.item() * k
            for name, val in parts.items():
                sums[name] += val.item() * k
        record = {"epoch": epoch, "step": step, "train_loss": sums["loss"] / n}
        record.update({f"train_{k}": sums[k] / n for k in ("seq", "huber", "ord")})
        for prefix, split in (("train", data), ("val", val_batch), ("eval", held)):
            if split is not None and len(split) >= 2:
                _, _, preds = predict_curves(store, mcfg, split)
                report = evaluate_predictions(preds, split.observed, split.video_duration, eval_cfg)
                record[f"{prefix}_mae_sec"] = report.mae_sec
                record[f"{prefix}_xauc"] = report.xauc
        if val_batch is not None and (best is None or record["val_mae_sec"] < best[0]):
            best = (record["val_mae_sec"], epoch, step, {k: t.data.copy() for k, t in store.items()})
        trace.append(record)
        log.info("epoch %d: %s", epoch, record)
        if progress:
            progress(record)
    extra = {}
    if best is not None:
        # keep the epoch with the lowest validation MAE
        _, epoch, step, snapshot = best
        for name, t in store.items():
            t.data[...] = snapshot[name]
        extra["selected_epoch"] = epoch
    ckpt = Checkpoint(
        model_type="vgen",
        config=cfg.to_dict(),
        tensors={name: t.data for name, t in store.items()},
        step=step,
        rng_state=_rng_state_json(rng),
        vocab=vocabs.to_json(),
        extra=extra,
    )
    return TrainResult(ckpt, trace, store, mcfg, vocabs)


def _check_compatible(ckpt_cfg, override):
    if override is not None and override.M != ckpt_cfg.M:
        raise CompatibilityError(f"config asks for M={override.M} but the checkpoint was trained with M={ckpt_cfg.M}")


def evaluate(ckpt, examples, eval_cfg=None, config=None, method="model"):
    """Forward-only metrics of a trained checkpoint on ``examples``."""
    if not examples:
        raise DomainError("cannot evaluate on an empty dataset")
    store, mcfg, vocabs, cfg = load_model(ckpt)
    _check_compatible(cfg, config)
    batch = encode_examples(examples, vocabs, cfg.L_hist, cfg.M)
    _, _, preds = predict_curves(store, mcfg, batch)
    return evaluate_predictions(preds, batch.observed, batch.video_duration, eval_cfg or cfg.eval_config(), method)


def predict(ckpt, examples, config=None):
    """One record per example, in input order: ids, ``q``, ``p`` and expected time."""
    if not examples:
        raise DomainError("no examples to predict")
    store, mcfg, vocabs, cfg = load_model(ckpt)
    _check_compatible(cfg, config)
    batch = encode_examples(examples, vocabs, cfg.L_hist, cfg.M)
    q, p, t = predict_curves(store, mcfg, batch)
    return [
        {
            "user_id": e.user_id,
            "video_id": e.target_video_id,
            "q": [float(x) for x in q[k]],
            "p": [float(x) for x in p[k]],
            "expected_time_sec": float(t[k]),
        }
        for k, e in enumerate(examples)
    ]


# ----------------------------------------------------------------------------
# gradient check on a tiny end-to-end configuration
# ----------------------------------------------------------------------------

EMB_SCALE = 10.0
TINY = dict(d_model=8, d_v=8, d_p=4, hidden=8, heads=2, L=1, L_hist=4, M=4, rank=2)


def tiny_grad_check(variant="chain", n_examples=12, seed=1, step=1e-4, tol=1e-4):
    """Finite-difference check of the full composite loss on a tiny model.

    Runs in float64 on a small synthetic log with embedding tables scaled by
    ``EMB_SCALE``; returns a
    :class:`~vgen.numerics.GradReport`.
    """
    from .data import build_examples, synth_generate

    cfg = TrainConfig(**TINY, variant=variant, dtype="float64", seed=seed)
    records, _ = synth_generate(SynthConfig(n_users=6, n_videos=8, n_impressions=40, M=cfg.M, seed=seed))
    examples = build_examples(records, cfg.L_hist, cfg.M)[:n_examples]
    vocabs = Vocabs.from_examples(examples)
    mcfg = cfg.model_config(vocabs)
    store = init_model(mcfg, seed=seed + 2, dtype=np.float64)
    # at initial scale many attention-key gradients sit near the roundoff
    # floor of a central difference; larger embeddings lift them clear of it
    for name, t in store.items():
        if name.endswith("_emb"):
            t.data[...] *= EMB_SCALE
    batch = encode_examples(examples, vocabs, cfg.L_hist, cfg.M)
    loss_cfg = cfg.loss_config()

    def loss_fn(st):
        curve = forward(st, mcfg, batch)
        return compute_losses(curve, batch.labels, batch.observed, loss_cfg)[0]

    return nx.grad_check(loss_fn, store, step=step, tol=tol)
