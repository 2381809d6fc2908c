"""Tests for the VR, WLR, OR and D2Q reference predictors."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vgen import baselines as bl
from vgen.errors import ConfigError, DegenerateFitError
from vgen.metrics import EvalConfig, mae, xauc
from vgen.model import Vocabs, encode_examples, init_model


@pytest.fixture(scope="module")
def features(small_cfg, small_split):
    train_ex, eval_ex = small_split
    vocabs = Vocabs.from_examples(train_ex)
    mcfg = small_cfg.model_config(vocabs)
    store = init_model(mcfg, seed=small_cfg.seed, dtype=np.float64)
    tr = encode_examples(train_ex, vocabs, small_cfg.L_hist, small_cfg.M)
    ev = encode_examples(eval_ex, vocabs, small_cfg.L_hist, small_cfg.M)
    return store, mcfg, tr, ev, bl.shared_features(store, mcfg, tr), bl.shared_features(store, mcfg, ev)


@pytest.fixture(scope="module")
def fitted(small_cfg, features):
    _, _, tr, ev, X_tr, X_ev = features
    return bl.run_baselines(X_tr, tr, X_ev, ev, small_cfg, EvalConfig())


class TestSharedFeatures:
    def test_layout(self, small_cfg, features):
        _, mcfg, tr, _, X_tr, _ = features
        assert X_tr.shape == (len(tr), small_cfg.d_model + small_cfg.d_v + 1)
        np.testing.assert_array_equal(X_tr[:, -1], np.log1p(tr.video_duration))

    def test_chunking_is_bit_identical(self, features):
        store, mcfg, tr, _, X_tr, _ = features
        np.testing.assert_array_equal(bl.shared_features(store, mcfg, tr, chunk=97), X_tr)


class TestValueRegression:
    def test_constant_target(self, rng):
        X = rng.standard_normal((400, 3))
        model = bl.ValueRegression(bl.FitConfig(epochs=5)).fit(X, np.full(400, 7.0), np.full(400, 60.0))
        np.testing.assert_allclose(model.predict(X, np.full(400, 60.0)), 7.0, atol=1e-2)

    def test_clamped_to_duration(self, rng):
        X = rng.standard_normal((200, 3))
        model = bl.ValueRegression(bl.FitConfig(epochs=2)).fit(X, np.full(200, 20.0) + X[:, 0], np.full(200, 60.0))
        out = model.predict(X, np.full(200, 5.0))
        assert np.all(out <= 5.0) and np.all(out >= 0.0)

    def test_beats_global_mean(self, features, fitted):
        _, _, tr, ev, _, _ = features
        const = mae(np.full(len(ev), tr.observed.mean()), ev.observed)
        assert fitted[1]["VR"].mae_sec < const


class TestWeightedLogisticRegression:
    @pytest.mark.parametrize("logit, expected", [(math.log(3), 3.0), (0.0, 1.0)])
    def test_serving_rule(self, logit, expected):
        np.testing.assert_allclose(bl.serve_odds([logit]), [expected], rtol=1e-15)

    def test_one_class_rejected(self, rng):
        X = rng.standard_normal((20, 2))
        with pytest.raises(DegenerateFitError):
            bl.WeightedLogisticRegression().fit(X, np.full(20, 30.0), np.full(20, 60.0))
        with pytest.raises(DegenerateFitError):
            bl.WeightedLogisticRegression().fit(X, np.zeros(20), np.full(20, 60.0))

    def test_ranks_above_chance(self, fitted):
        assert fitted[1]["WLR"].xauc > 0.5


class TestOrdinalRegression:
    def test_expected_time(self):
        np.testing.assert_allclose(bl.ordinal_expected_time([1.0, 0.5], np.array([10.0, 20.0])), 15.0)

    def test_all_heads_off(self):
        assert bl.ordinal_expected_time([0.0, 0.0], np.array([10.0, 20.0])) == 0.0

    def test_cumulative_minimum(self):
        np.testing.assert_allclose(bl.ordinal_expected_time([0.4, 0.6], np.array([10.0, 20.0])), 8.0)

    def test_thresholds_increasing(self, rng):
        b = bl.bucket_thresholds(rng.exponential(10, 500), K=10)
        assert b.size == 10 and np.all(np.diff(b) > 0)

    def test_concentrated_watch_rejected(self):
        with pytest.raises(DegenerateFitError):
            bl.bucket_thresholds(np.zeros(50), K=10)

    def test_predictions_bounded(self, features, fitted):
        X_ev = features[5]
        out = fitted[0]["OR"].predict(X_ev)
        assert np.all(out >= 0) and np.all(out <= fitted[0]["OR"].thresholds[-1] + 1e-12)


class TestDurationQuantile:
    def test_median(self):
        np.testing.assert_allclose(bl.inverse_cdf(np.array([2.0, 4.0, 6.0]), 0.5), 4.0)

    def test_endpoints(self):
        cdf = np.array([2.0, 4.0, 6.0])
        assert bl.inverse_cdf(cdf, 0.0) == 2.0 and bl.inverse_cdf(cdf, 1.0) == 6.0

    def test_boundary_goes_to_lower_group(self):
        groups = bl.DurationGroups(np.array([10.0, 20.0]), [[1.0], [2.0], [3.0]])
        np.testing.assert_array_equal(groups.assign([10.0, 10.5, 20.0, 25.0, -1.0]), [0, 1, 1, 2, 0])

    def test_groups_partition(self, rng):
        d = rng.uniform(5, 60, 400)
        groups = bl.DurationGroups.fit(d, rng.uniform(0, 5, 400), G=4)
        assert len(groups) == 4
        assert sum(len(c) for c in groups.cdfs) == 400
        assert all(len(c) > 0 for c in groups.cdfs)

    def test_few_distinct_durations_keep_groups_non_empty(self):
        d = np.array([10.0] * 30 + [20.0] * 3)
        groups = bl.DurationGroups.fit(d, np.arange(33.0), G=4)
        assert all(len(c) > 0 for c in groups.cdfs)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(0.01, 100))
    def test_rank_invariant_to_rescaling(self, values, k):
        v = np.array(values)
        np.testing.assert_allclose(bl.quantile_ranks(v * k), bl.quantile_ranks(v), atol=0)


class TestHarness:
    def test_sanity_floor(self, fitted):
        for name in bl.BASELINES:
            assert fitted[1][name].xauc >= 0.48, name

    def test_checkpoint_round_trip(self, features, fitted):
        X_ev, ev = features[5], features[3]
        for name, model in fitted[0].items():
            ckpt = bl.baseline_checkpoint(model)
            again = bl.baseline_from_checkpoint(type(ckpt).from_bytes(ckpt.to_bytes()))
            # tensors are stored as float32
            np.testing.assert_allclose(again.predict(X_ev, ev.video_duration), model.predict(X_ev, ev.video_duration), rtol=1e-4, atol=1e-4)

    def test_deterministic(self, small_cfg, features):
        _, _, tr, _, X_tr, _ = features
        a = bl.make_baseline("D2Q", small_cfg).fit(X_tr, tr.observed, tr.video_duration)
        b = bl.make_baseline("D2Q", small_cfg).fit(X_tr, tr.observed, tr.video_duration)
        np.testing.assert_array_equal(a.predict_rank(X_tr), b.predict_rank(X_tr))

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            bl.make_baseline("XGB")

    def test_model_checkpoint_rejected(self):
        from vgen.training import Checkpoint

        with pytest.raises(ConfigError):
            bl.baseline_from_checkpoint(Checkpoint("vgen", {}, {}))

    def test_xauc_is_rank_statistic_of_predictions(self, features, fitted):
        X_ev, ev = features[5], features[3]
        out = fitted[0]["VR"].predict(X_ev, ev.video_duration)
        assert xauc(out, ev.observed) == fitted[1]["VR"].xauc
