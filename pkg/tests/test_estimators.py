import numpy as np
import pytest
from sklearn.base import clone

from shortcutiw.data import channel_stats, normalize_for_model
from shortcutiw.estimators import NetClassifier, ReweightedClassifier
from shortcutiw.synthdata import generate_records


@pytest.fixture(scope="module")
def small_data():
    rec = generate_records((1, 6), 150, seed=21)
    y = (rec.labels == 6).astype(np.int64)
    stats = channel_stats(rec.pixels)
    X = normalize_for_model(rec.pixels, stats)
    return X[:200], y[:200], X[200:260], y[200:260]


def _tiny_clf(**kw):
    defaults = dict(arch="lcn", epochs=2, learning_rate=0.01, momentum=0.0,
                    weight_decay=0.0, batch_size=64, init_seed=1, batch_seed=2)
    defaults.update(kw)
    return NetClassifier(**defaults)


class TestSklearnContract:
    def test_get_params_round_trip(self):
        clf = _tiny_clf(epochs=5)
        params = clf.get_params()
        assert params["epochs"] == 5 and params["arch"] == "lcn"
        clone(clf)  # must not raise

    def test_set_params(self):
        clf = _tiny_clf().set_params(epochs=7)
        assert clf.epochs == 7

    def test_fit_returns_self_and_sets_attributes(self, small_data):
        X, y, Xv, yv = small_data
        clf = _tiny_clf()
        assert clf.fit(X, y, validation=(Xv, yv)) is clf
        assert list(clf.classes_) == [0, 1]
        assert len(clf.history_) == 2
        assert set(clf.history_[0]) == {"epoch", "train_loss", "val_metric", "lr"}

    def test_predict_shapes_and_proba_simplex(self, small_data):
        X, y, Xv, yv = small_data
        clf = _tiny_clf().fit(X, y)
        proba = clf.predict_proba(Xv)
        assert proba.shape == (len(Xv), 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)
        preds = clf.predict(Xv)
        assert set(np.unique(preds)) <= {0, 1}

    def test_original_class_values_preserved(self, small_data):
        X, y, _, _ = small_data
        clf = _tiny_clf().fit(X, y + 5)  # classes {5, 6}
        assert list(clf.classes_) == [5, 6]
        assert set(np.unique(clf.predict(X))) <= {5, 6}

    def test_input_validation(self, small_data):
        X, y, _, _ = small_data
        with pytest.raises(ValueError, match="image batch"):
            _tiny_clf().fit(X.reshape(len(X), -1), y)
        with pytest.raises(ValueError, match="sample_weight"):
            _tiny_clf().fit(X, y, sample_weight=np.ones(3))
        with pytest.raises(ValueError, match="negative"):
            _tiny_clf().fit(X, y, sample_weight=-np.ones(len(X)))


class TestTrainingLoop:
    def test_uniform_weights_bitwise_equal_unweighted(self, small_data):
        X, y, Xv, yv = small_data
        a = _tiny_clf().fit(X, y, validation=(Xv, yv))
        b = _tiny_clf().fit(X, y, sample_weight=np.ones(len(X)), validation=(Xv, yv))
        for k in a.params_:
            assert a.params_[k].tobytes() == b.params_[k].tobytes()
        assert [r["train_loss"] for r in a.history_] == [r["train_loss"] for r in b.history_]

    def test_single_epoch_history(self, small_data):
        X, y, Xv, yv = small_data
        clf = _tiny_clf(epochs=1).fit(X, y, validation=(Xv, yv))
        assert len(clf.history_) == 1
        assert clf.best_epoch_ == 0

    def test_best_checkpoint_is_max_metric(self, small_data):
        X, y, Xv, yv = small_data
        clf = _tiny_clf(epochs=4).fit(X, y, validation=(Xv, yv))
        metrics = [r["val_metric"] for r in clf.history_]
        assert clf.best_metric_ == max(metrics)
        assert clf.best_epoch_ == metrics.index(max(metrics))  # ties -> earlier

    def test_val_loss_metric_minimized(self, small_data):
        X, y, Xv, yv = small_data
        clf = _tiny_clf(epochs=3, checkpoint_metric="val_loss").fit(X, y, validation=(Xv, yv))
        metrics = [r["val_metric"] for r in clf.history_]
        assert clf.best_metric_ == min(metrics)

    def test_without_validation_keeps_final(self, small_data):
        X, y, _, _ = small_data
        clf = _tiny_clf(epochs=3).fit(X, y)
        assert clf.best_epoch_ == 2
        assert np.isnan(clf.best_metric_)

    def test_same_seeds_bitwise_reproducible(self, small_data):
        X, y, Xv, yv = small_data
        a = _tiny_clf().fit(X, y, validation=(Xv, yv))
        b = _tiny_clf().fit(X, y, validation=(Xv, yv))
        assert all(a.params_[k].tobytes() == b.params_[k].tobytes() for k in a.params_)

    def test_different_init_seed_differs(self, small_data):
        X, y, _, _ = small_data
        a = _tiny_clf().fit(X, y)
        b = _tiny_clf(init_seed=99).fit(X, y)
        assert any(a.params_[k].tobytes() != b.params_[k].tobytes() for k in a.params_)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts_with_location(self, small_data):
        X, y, _, _ = small_data
        clf = _tiny_clf(learning_rate=1e18, epochs=3)
        with pytest.raises(FloatingPointError, match=r"epoch \d+, batch \d+|parameter"):
            clf.fit(X, y)

    def test_lr_schedule_in_history(self, small_data):
        X, y, _, _ = small_data
        clf = _tiny_clf(epochs=4, learning_rate=0.08).fit(X, y)
        lrs = [r["lr"] for r in clf.history_]
        assert lrs == [0.08, 0.08, 0.008, 0.0008]

    def test_loss_decreases_on_512_images(self):
        # vgg-mini for 2 epochs on 512 images strictly decreases train loss,
        # across 3 seeds
        rec = generate_records((1, 6), 256, seed=33)
        y = (rec.labels == 6).astype(np.int64)
        X = normalize_for_model(rec.pixels, channel_stats(rec.pixels))
        for seed in range(3):
            clf = NetClassifier(arch="vgg-mini", epochs=2, learning_rate=0.01,
                                momentum=0.9, weight_decay=5e-4, batch_size=256,
                                init_seed=seed, batch_seed=seed + 10)
            clf.fit(X, y)
            losses = [r["train_loss"] for r in clf.history_]
            assert losses[1] < losses[0], f"seed {seed}: {losses}"


class TestReweightedClassifier:
    def test_two_stage_fit(self, small_data):
        X, y, Xv, yv = small_data
        rw = ReweightedClassifier(source=_tiny_clf(init_seed=1),
                                  target=_tiny_clf(init_seed=2))
        rw.fit(X, y, validation=(Xv, yv))
        assert rw.importance_weights_.shape == (len(X),)
        assert (rw.importance_weights_ >= 0).all() and (rw.importance_weights_ <= 1).all()
        assert rw.predict(Xv).shape == (len(Xv),)
        np.testing.assert_array_equal(rw.predict(Xv), rw.target_.predict(Xv))

    def test_shared_init_seed_rejected(self, small_data):
        X, y, _, _ = small_data
        rw = ReweightedClassifier(source=_tiny_clf(init_seed=5), target=_tiny_clf(init_seed=5))
        with pytest.raises(ValueError, match="init seeds"):
            rw.fit(X, y)

    def test_cloneable(self):
        rw = ReweightedClassifier(source=_tiny_clf(), target=_tiny_clf(init_seed=3))
        again = clone(rw)
        assert again.get_params()["source"].get_params()["arch"] == "lcn"

    def test_weights_are_one_minus_true_class_probability(self, small_data):
        X, y, Xv, yv = small_data
        rw = ReweightedClassifier(source=_tiny_clf(init_seed=1), target=_tiny_clf(init_seed=2))
        rw.fit(X, y)
        probs = rw.source_.predict_proba(X)
        manual = 1.0 - probs[np.arange(len(y)), y]
        np.testing.assert_allclose(rw.importance_weights_, manual, atol=1e-12)
