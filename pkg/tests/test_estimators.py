import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from privlens.estimators import ActionRecognizer, AttributeEstimator, PrivacyLens
from privlens.synthdata import make_dataset
from privlens.trainer import TrainConfig

TINY = TrainConfig(
    epochs=1, batch_size=4, classifier_epochs=2, adversary_epochs=2, optics_steps=10,
    classifier_width=4, adversary_width=3, attack_k=1, attack_epochs=1,
)


@pytest.fixture(scope="module")
def data():
    return make_dataset(20, 20, master_seed=6)


def test_action_recognizer(data):
    est = ActionRecognizer(epochs=2, width=4).fit(data.train.videos, data.train.actions)
    p = est.predict_proba(data.test.videos)
    assert p.shape == (len(data.test), len(est.classes_))
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.array_equal(est.predict(data.test.videos), p.argmax(axis=1))
    assert 0.0 <= est.score(data.test.videos, data.test.actions) <= 1.0


def test_attribute_estimator(data):
    est = AttributeEstimator(epochs=2, width=3).fit(data.train.videos, data.train.attributes)
    s = est.decision_function(data.test.videos)
    assert s.shape == data.test.attributes.shape
    assert set(np.unique(est.predict(data.test.videos))) <= {0, 1}
    assert 0.0 <= est.score(data.test.videos, data.test.attributes) <= 1.0


def test_clone_keeps_params():
    est = ActionRecognizer(epochs=3, width=8, seed=2)
    assert clone(est).get_params() == {"epochs": 3, "width": 8, "seed": 2}


def test_unfitted_and_bad_shapes(data):
    with pytest.raises(NotFittedError):
        ActionRecognizer().predict(data.test.videos)
    with pytest.raises(ValueError):
        ActionRecognizer(epochs=1, width=4).fit(data.train.videos[0], data.train.actions[:1])


def test_privacy_lens(data):
    lens = PrivacyLens(TINY)
    with pytest.raises(ValueError):
        lens.fit(data.train.videos, data.train.actions)
    lens.fit(data.train.videos, data.train.actions, attributes=data.train.attributes)
    assert lens.alpha_.shape == (15,)
    assert len(lens.telemetry_) == 1
    y = lens.transform(data.test.videos)
    assert y.shape == data.test.videos.shape and y.dtype == np.float32
    assert np.all((y >= 0) & (y <= 1))
    assert 0.0 <= lens.score(data.test.videos, data.test.actions) <= 1.0
