"""Tests for the training loop, optimiser, checkpoints and evaluation entry points."""

import hashlib
import json

import numpy as np
import pytest

from vgen import numerics as nx
from vgen.errors import CompatibilityError, ConfigError, DomainError, NumericError
from vgen.model import init_model
from vgen.training import Adam, Checkpoint, TrainConfig, evaluate, predict, tiny_grad_check, train


@pytest.fixture(scope="module")
def trained(small_cfg, small_split):
    train_ex, eval_ex = small_split
    return train(small_cfg, train_ex, eval_ex)


class TestTrainConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="lamda_1"):
            TrainConfig.from_dict({"lamda_1": 1.0})

    @pytest.mark.parametrize(
        "kw",
        [dict(lr=-1e-3), dict(batch_size=0), dict(split=1.0), dict(split=0.0), dict(val_fraction=1.0), dict(decay_scope="bias")],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_dict_round_trip(self):
        cfg = TrainConfig(M=6, variant="recursive", weight_decay=0.5)
        assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_load_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"epochs": 3, "lr": 0.01}))
        cfg = TrainConfig.load(str(path))
        assert cfg.epochs == 3 and cfg.lr == 0.01 and cfg.M == TrainConfig().M


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        store = nx.ParameterStore()
        store.add("w", np.array([1.0, -2.0, 3.0]))
        Adam(store, lr=0.1).step(store, {"w": np.array([0.5, -4.0, 0.0])})
        np.testing.assert_allclose(store["w"].data, [0.9, -1.9, 3.0], rtol=1e-6)

    def test_decoupled_decay(self):
        store = nx.ParameterStore()
        store.add("w", np.array([2.0]))
        Adam(store, lr=0.1, weight_decay=0.5).step(store, {"w": np.zeros(1)})
        np.testing.assert_allclose(store["w"].data, [2.0 - 0.1 * 0.5 * 2.0])

    def test_embedding_scope(self):
        store = nx.ParameterStore()
        store.add("user_emb", np.array([2.0]))
        store.add("W", np.array([2.0]))
        Adam(store, lr=0.1, weight_decay=0.5, decay_scope="embeddings").step(store, {"user_emb": np.zeros(1), "W": np.zeros(1)})
        assert store["user_emb"].data[0] < 2.0 and store["W"].data[0] == 2.0


class TestTrain:
    def test_deterministic(self, small_cfg, small_split, trained):
        again = train(small_cfg, *small_split)
        assert again.checkpoint.to_bytes() == trained.checkpoint.to_bytes()
        assert again.trace == trained.trace

    def test_trace_fields(self, trained):
        rec = trained.trace[-1]
        for key in ("epoch", "step", "train_loss", "train_seq", "train_huber", "train_ord", "train_mae_sec", "eval_mae_sec", "eval_xauc"):
            assert key in rec
        np.testing.assert_allclose(
            rec["train_loss"],
            rec["train_seq"] + 0.1 * rec["train_huber"] + 0.01 * rec["train_ord"],
            rtol=1e-10,
        )

    def test_zero_learning_rate(self, small_cfg, small_split):
        cfg = small_cfg.replace(lr=0.0, epochs=3)
        res = train(cfg, small_split[0][:200])
        fresh = init_model(res.model_config, seed=cfg.seed, dtype=np.float64)
        for name, t in fresh.items():
            np.testing.assert_array_equal(res.store[name].data, t.data)
        # epochs differ only in shuffling, so the example-weighted loss agrees up to summation order
        losses = [r["train_loss"] for r in res.trace]
        np.testing.assert_allclose(losses, losses[0], rtol=1e-12)

    def test_loss_decreases(self, small_cfg, small_split):
        train_ex, _ = small_split
        res = train(small_cfg.replace(epochs=4, batch_size=25, lr=3e-3), train_ex[:100])
        losses = [r["train_loss"] for r in res.trace]
        assert losses[-1] < losses[0]

    def test_empty_rejected(self, small_cfg):
        with pytest.raises(DomainError):
            train(small_cfg, [])

    def test_validation_selection(self, small_cfg, small_split):
        train_ex, eval_ex = small_split
        res = train(small_cfg.replace(epochs=3, val_fraction=0.2), train_ex, eval_ex)
        vals = [r["val_mae_sec"] for r in res.trace]
        best = int(np.argmin(vals)) + 1
        assert res.checkpoint.extra["selected_epoch"] == best
        assert res.checkpoint.step == res.trace[best - 1]["step"]
        report = evaluate(res.checkpoint, eval_ex)
        np.testing.assert_allclose(report.mae_sec, res.trace[best - 1]["eval_mae_sec"], rtol=1e-4)

    def test_validation_too_small(self, small_cfg, small_split):
        with pytest.raises(DomainError):
            train(small_cfg.replace(val_fraction=0.1), small_split[0][:5])

    def test_divergence_raises(self, small_cfg, small_split):
        with pytest.raises(NumericError, match="step"):
            train(small_cfg.replace(lr=1e300, dtype="float64"), small_split[0][:300])


class TestCheckpoint:
    def test_byte_round_trip(self, trained):
        buf = trained.checkpoint.to_bytes()
        again = Checkpoint.from_bytes(buf)
        assert again.to_bytes() == buf
        assert again.config == trained.checkpoint.config and again.step == trained.checkpoint.step

    def test_bad_magic(self):
        with pytest.raises(CompatibilityError):
            Checkpoint.from_bytes(b"NOPE" + bytes(20))

    def test_truncated(self, trained):
        with pytest.raises(CompatibilityError):
            Checkpoint.from_bytes(trained.checkpoint.to_bytes()[:-3])

    def test_evaluate_does_not_touch_file(self, tmp_path, trained, small_split):
        path = tmp_path / "m.ckpt"
        trained.checkpoint.save(str(path))
        before = hashlib.sha256(path.read_bytes()).hexdigest()
        evaluate(Checkpoint.load(str(path)), small_split[1])
        assert hashlib.sha256(path.read_bytes()).hexdigest() == before


class TestEvaluate:
    def test_matches_logged_metrics(self, trained, small_split):
        train_ex, eval_ex = small_split
        rec = trained.trace[-1]
        np.testing.assert_allclose(evaluate(trained.checkpoint, eval_ex).mae_sec, rec["eval_mae_sec"], rtol=1e-4)
        np.testing.assert_allclose(evaluate(trained.checkpoint, train_ex).mae_sec, rec["train_mae_sec"], rtol=1e-4)

    def test_wrong_segment_count(self, trained, small_cfg, small_split):
        with pytest.raises(CompatibilityError):
            evaluate(trained.checkpoint, small_split[1], config=small_cfg.replace(M=6))

    def test_empty(self, trained):
        with pytest.raises(DomainError):
            evaluate(trained.checkpoint, [])

    def test_predict_rows(self, trained, small_split, small_cfg):
        eval_ex = small_split[1][:20]
        rows = predict(trained.checkpoint, eval_ex)
        assert len(rows) == 20
        for row, ex in zip(rows, eval_ex):
            assert row["user_id"] == ex.user_id and row["video_id"] == ex.target_video_id
            assert len(row["q"]) == len(row["p"]) == small_cfg.M
            assert all(a >= b for a, b in zip(row["p"], row["p"][1:]))
            assert 0 <= row["expected_time_sec"] <= ex.video_duration_sec + 1e-4


class TestGradCheck:
    @pytest.mark.parametrize("variant", ["chain", "recursive"])
    def test_tiny_model(self, variant):
        report = tiny_grad_check(variant)
        assert report.passed, report.summary()
