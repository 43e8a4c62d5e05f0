import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridx import data, social
from hybridx.numerics.rng import make_rng
from hybridx.records import AdosRecord, DatasetStats, Label

legal = st.sampled_from(sorted({0, 1, 2, 3, 7, 8, 9}))


def feature_one_separable(n=200, seed=0):
    """Echolalia 3 means ASD, 0 means non-ASD; every other item is noise."""
    rng = make_rng(seed)
    out = []
    for i in range(n):
        label = Label.ASD if i % 2 == 0 else Label.NON_ASD
        rest = tuple(int(v) for v in rng.integers(0, 4, size=4))
        out.append(AdosRecord(f"S{i}", (3 if label == Label.ASD else 0, *rest), label))
    return out


def class_separated(n_asd=100, n_non=100, seed=0):
    spec = data.SyntheticSpec(DatasetStats.of(n_asd, n_non), asd_score_probs=(0, 0, 0.5, 0.5),
                              non_asd_score_probs=(0.5, 0.5, 0, 0), seed=seed)
    return data.synth_social_data(spec)


class TestEncoding:
    @pytest.mark.parametrize("scores,expected", [
        ((3, 8, 2, 0, 7), [3, 0, 2, 0, 0]),
        ((0, 0, 0, 0, 0), [0, 0, 0, 0, 0]),
        ((9, 9, 9, 9, 9), [0, 0, 0, 0, 0]),
    ])
    def test_recode(self, scores, expected):
        rec = AdosRecord("p", scores, Label.ASD)
        np.testing.assert_array_equal(social.encode_record(rec), expected)

    def test_illegal_score_rejected(self):
        with pytest.raises(ValueError, match="eye_contact"):
            social.encode_scores((0, 0, 5, 0, 0))

    @given(st.tuples(legal, legal, legal, legal, legal))
    def test_encoded_range(self, scores):
        enc = social.encode_scores(scores)
        assert enc.shape == (5,)
        assert set(enc.tolist()) <= {0.0, 1.0, 2.0, 3.0}


class TestFit:
    def test_feature_one_separable_trains(self):
        train = feature_one_separable()
        model = social.fit_svm(train, lr=1e-2, epochs=500)
        assert social.accuracy_on(model, train) >= 0.99
        assert model.n_asd + model.n_non_asd == len(train)
        assert np.all(np.isfinite(model.weights))

    def test_duplication_full_batch_bitwise(self):
        train = class_separated(40, 40, seed=3)
        a = social.fit_svm(train, 1e-2, epochs=50, batch_size=None)
        b = social.fit_svm(train + train, 1e-2, epochs=50, batch_size=None)
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.bias == b.bias

    def test_duplication_minibatch_close(self):
        train = class_separated(40, 40, seed=3)
        a = social.fit_svm(train, 1e-2, epochs=200)
        b = social.fit_svm(train + train, 1e-2, epochs=100)
        assert social.accuracy_on(a, train) == pytest.approx(social.accuracy_on(b, train), abs=0.05)

    def test_huge_lambda_shrinks_weights(self):
        model = social.fit_svm(feature_one_separable(), lr=1e-2, lam=1e6, epochs=100)
        assert np.linalg.norm(model.weights) < 1e-2

    def test_label_flip_negates_full_batch_model(self):
        train = class_separated(30, 30, seed=4)
        flipped = [AdosRecord(r.patient_id, r.scores, Label(1 - r.label)) for r in train]
        a = social.fit_svm(train, 1e-2, epochs=30, batch_size=None)
        b = social.fit_svm(flipped, 1e-2, epochs=30, batch_size=None)
        np.testing.assert_array_equal(a.weights, -b.weights)
        assert a.bias == -b.bias

    def test_single_class_rejected(self):
        train = [r for r in class_separated(5, 5) if r.label == Label.ASD]
        with pytest.raises(ValueError, match="both"):
            social.fit_svm(train, 1e-2)

    def test_objective_decreases(self):
        train = class_separated(50, 50, seed=5)
        x, y = social.design_matrix(train)
        start = social.hinge_objective(np.zeros(5), 0.0, x, y, 1e-3)
        model = social.fit_svm(train, 1e-2, epochs=100)
        assert social.hinge_objective(model.weights, model.bias, x, y, 1e-3) < 0.5 * start

    def test_seeded_determinism(self):
        train = class_separated(30, 30, seed=6)
        a = social.fit_svm(train, 1e-2, seed=9)
        b = social.fit_svm(train, 1e-2, seed=9)
        assert social.dumps_model(a) == social.dumps_model(b)


class TestMarginAndProbability:
    def _model(self, w, b):
        return social.LinearSvmModel(np.array(w, dtype=float), b, 0.1, 0.0, 1, None, 0, 1, 1)

    def test_margin_arithmetic(self):
        assert social.predict_margin(self._model([1, 0, 0, 0, 0], -1.0), [3, 0, 2, 0, 0]) == 2.0

    def test_zero_features_give_bias(self):
        assert social.predict_margin(self._model([0.3, -2, 1, 4, 5], 0.25), np.zeros(5)) == 0.25

    def test_margins_match_dot_product_oracle(self):
        model = social.fit_svm(class_separated(50, 50, seed=7), 1e-2)
        recs = class_separated(20, 20, seed=8)
        for r in recs:
            enc = [s if s <= 3 else 0 for s in r.scores]
            expected = sum(wi * xi for wi, xi in zip(model.weights.tolist(), enc)) + model.bias
            assert social.predict_margin(model, social.encode_record(r)) == pytest.approx(expected, abs=1e-12)

    def test_probability_landmarks(self):
        assert social.margin_to_probability(0.0) == 0.5
        # 1 / (1 + e^-1) evaluated independently
        assert social.margin_to_probability(1.0, 1.0) == pytest.approx(0.7310585786300049, abs=1e-12)
        assert social.margin_to_probability(50.0) > 1 - 1e-12

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(0.01, 100))
    def test_probability_open_interval_and_monotone(self, m, scale):
        p = social.margin_to_probability(m, scale)
        assert 0.0 < p < 1.0
        assert social.margin_to_probability(m + 1.0, scale) >= p
        assert math.isclose(p + social.margin_to_probability(-m, scale), 1.0, abs_tol=1e-12)


class TestSweep:
    def test_singleton_grid(self):
        recs = class_separated(20, 20)
        best, accs = social.lr_sweep(recs[:30], recs[30:], [0.05])
        assert best == 0.05 and len(accs) == 1

    def test_extremes_lose(self):
        train, val = data.stratified_split(class_separated(), data.SplitSpec((0.75, 0.25), seed=1))
        grid = [1e-6, 1e-2, 1e3]
        best, accs = social.lr_sweep(train, val, grid)
        assert best == 1e-2
        assert len(accs) == 3
        assert accs[1] > accs[0]

    def test_order_preserved(self):
        recs = class_separated(30, 30, seed=2)
        grid = [1e-1, 1e-4, 1e-2]
        _, accs = social.lr_sweep(recs[:40], recs[40:], grid)
        expected = [social.accuracy_on(social.fit_svm(recs[:40], lr), recs[40:]) for lr in grid]
        assert accs == expected


class TestSerialization:
    def test_round_trip(self):
        model = social.fit_svm(class_separated(30, 30, seed=11), 1e-2, batch_size=None)
        text = social.dumps_model(model)
        back = social.loads_model(text)
        assert back.weights.tobytes() == model.weights.tobytes()
        assert back.batch_size is None
        assert social.dumps_model(back) == text

    def test_bad_header(self):
        with pytest.raises(ValueError, match="not an SVM"):
            social.loads_model("HYBRIDX-DENSENET v1\n")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_predictions_are_labels(seed):
    recs = class_separated(10, 10, seed=seed)
    model = social.fit_svm(recs, 1e-2, epochs=5, seed=seed)
    assert set(social.predict_labels(model, recs)) <= {Label.ASD, Label.NON_ASD}
