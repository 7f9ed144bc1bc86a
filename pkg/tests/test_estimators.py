import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from compsal.attribution import cgi, grad_input_stack
from compsal.data_io import synthetic_digits
from compsal.estimators import CompetitiveSaliency, SaliencyNetClassifier


@pytest.fixture(scope="module")
def flat_digits():
    ds = synthetic_digits(900, seed=11)
    X = ds.images.reshape(len(ds), -1)
    return X[:700], ds.labels[:700], X[700:], ds.labels[700:]


@pytest.fixture(scope="module")
def fitted(flat_digits):
    X, y, _, _ = flat_digits
    return SaliencyNetClassifier(arch="flatten,dense:32,relu,dense:10", epochs=20, random_state=2).fit(X, y)


def test_params_roundtrip():
    clf = SaliencyNetClassifier(epochs=3, bias=False)
    params = clf.get_params()
    assert params["epochs"] == 3 and params["bias"] is False
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    assert twin.set_params(learning_rate=0.2).learning_rate == 0.2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SaliencyNetClassifier().predict(np.zeros((1, 256)))
    with pytest.raises(NotFittedError):
        CompetitiveSaliency(network=SaliencyNetClassifier()).fit()


def test_classifier_accuracy(fitted, flat_digits):
    _, _, Xt, yt = flat_digits
    assert fitted.score(Xt, yt) >= 0.9
    proba = fitted.predict_proba(Xt[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    np.testing.assert_array_equal(proba.argmax(axis=1), fitted.predict(Xt[:5]))
    assert len(fitted.train_report_.epoch_losses) == 20


def test_same_seed_same_model(flat_digits, fitted):
    X, y, Xt, _ = flat_digits
    again = clone(fitted).fit(X, y)
    np.testing.assert_array_equal(again.decision_function(Xt), fitted.decision_function(Xt))


def test_transform_matches_functional_api(fitted, flat_digits):
    _, _, Xt, yt = flat_digits
    maps = CompetitiveSaliency(network=fitted).fit().transform(Xt[:4], yt[:4])
    assert maps.shape == (4, 256)
    for i in range(4):
        expect = cgi(grad_input_stack(fitted.network_, Xt[i].reshape(16, 16), int(yt[i]))).scores
        np.testing.assert_array_equal(maps[i], expect.ravel())


def test_transform_in_pipeline(fitted, flat_digits):
    _, _, Xt, _ = flat_digits
    pipe = make_pipeline(CompetitiveSaliency(network=fitted.network_, method="gradinput"))
    out = pipe.fit_transform(Xt[:3])
    assert out.shape == (3, 256) and np.all(np.isfinite(out))


def test_transformer_rejects_bad_config(fitted):
    with pytest.raises(TypeError):
        CompetitiveSaliency(network="model.sfn").fit()
    with pytest.raises(ValueError):
        CompetitiveSaliency(network=fitted, method="smoothgrad").fit()
