"""Scikit-learn estimator wrappers: API contract and basic learning."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

import imatrain as im


def blob_xy(n=120, std=0.4, seed=0):
    ds = im.make_blobs([[-1.0, 0.0], [1.0, 0.0]], std=std, n=n, seed=seed)
    return ds.subset("train")


FAST = dict(hidden=(8,), epochs=8, batch_size=64, learning_rate=0.01,
            n_pgd=5, use_layer_norm=False, seed=0)


def test_mlp_classifier_learns_blobs():
    X, y = blob_xy()
    clf = im.MLPNetClassifier(**FAST).fit(X, y)
    assert clf.score(X, y) > 0.95
    proba = clf.predict_proba(X[:5])
    assert proba.shape == (5, 2)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert clf.decision_function(X[:5]).shape == (5, 2)


def test_adversarial_classifier_learns_blobs():
    X, y = blob_xy()
    clf = im.AdversarialMLPClassifier(eps=0.2, **FAST).fit(X, y)
    assert clf.score(X, y) > 0.9


def test_increasing_margin_classifier_exposes_margins():
    X, y = blob_xy()
    clf = im.IncreasingMarginClassifier(eps_max=0.3, beta=0.5, **FAST).fit(X, y)
    assert clf.score(X, y) > 0.9
    assert clf.margins_.shape == (len(y),)
    assert np.all(clf.margins_ >= 0.0)
    assert np.all(clf.margins_ <= 0.3)
    assert len(clf.epoch_logs_) == FAST["epochs"]


def test_estimator_handles_arbitrary_class_labels():
    X, y = blob_xy()
    labels = np.where(y == 0, "left", "right")
    clf = im.MLPNetClassifier(**FAST).fit(X, labels)
    pred = clf.predict(X)
    assert set(pred) <= {"left", "right"}
    assert (pred == labels).mean() > 0.95


def test_get_params_set_params_clone_round_trip():
    clf = im.IncreasingMarginClassifier(eps_max=0.25, beta=0.7, epochs=3)
    params = clf.get_params()
    assert params["eps_max"] == 0.25
    assert params["beta"] == 0.7
    clf.set_params(beta=0.2)
    assert clf.beta == 0.2
    cloned = clone(clf)
    assert cloned.get_params() == clf.get_params()


def test_unfitted_predict_raises():
    clf = im.MLPNetClassifier(**FAST)
    with pytest.raises(NotFittedError):
        clf.predict(np.zeros((2, 2)))


def test_single_class_rejected():
    X, y = blob_xy()
    with pytest.raises(ValueError, match="2 classes"):
        im.MLPNetClassifier(**FAST).fit(X, np.zeros_like(y))


def test_fit_deterministic_given_seed():
    X, y = blob_xy()
    a = im.MLPNetClassifier(**FAST).fit(X, y)
    b = im.MLPNetClassifier(**FAST).fit(X, y)
    assert np.array_equal(a.model_.params, b.model_.params)


def test_validation_fraction_logs_val_accuracy():
    X, y = blob_xy()
    clf = im.MLPNetClassifier(validation_fraction=0.2, **FAST).fit(X, y)
    assert not np.isnan(clf.epoch_logs_[-1].val_acc)


def test_composes_with_sklearn_pipeline_and_cv():
    X, y = blob_xy(n=60)
    pipe = make_pipeline(StandardScaler(), im.MLPNetClassifier(**FAST))
    scores = cross_val_score(pipe, X, y, cv=2)
    assert scores.mean() > 0.8
