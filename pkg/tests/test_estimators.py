import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stylemotion.estimators import PhaseExtractor, StyleSynthesizer
from stylemotion.synth import StyleRecipe, synth_gait


@pytest.fixture(scope="module")
def clip():
    return synth_gait(StyleRecipe(name="march", forward_speed=1.2), 420)[0]


@pytest.fixture(scope="module")
def fitted(clip):
    est = StyleSynthesizer(mode="onehot", epochs=1, batch_size=32, seed=0)
    return est.fit([clip])


def test_phase_extractor_params_roundtrip():
    est = PhaseExtractor(stride=7)
    assert est.get_params() == {"stride": 7}
    est.set_params(stride=4)
    assert est.stride == 4
    dup = clone(est)
    assert dup.get_params() == {"stride": 4}


def test_phase_extractor_requires_fit(clip):
    with pytest.raises(NotFittedError):
        PhaseExtractor().transform([clip])


def test_phase_extractor_rejects_bad_stride():
    with pytest.raises(ValueError):
        PhaseExtractor(stride=0).fit([])


def test_phase_extractor_transform_shapes(clip):
    out = PhaseExtractor().fit([clip]).transform([clip, clip])
    assert len(out) == 2
    for phases in out:
        assert phases.shape == (clip.num_frames, 8)
        assert np.all(np.isfinite(phases))


def test_phase_extractor_rejects_non_clip(clip):
    est = PhaseExtractor().fit([clip])
    with pytest.raises(TypeError):
        est.transform([np.zeros((10, 3))])


def test_synthesizer_params_and_clone(fitted):
    params = fitted.get_params()
    assert params["mode"] == "onehot"
    assert params["epochs"] == 1
    dup = clone(fitted)  # clone drops the fitted state
    assert not hasattr(dup, "model_")
    with pytest.raises(NotFittedError):
        dup.predict(np.zeros((1, 356)))


def test_synthesizer_fit_validates_inputs(clip):
    with pytest.raises(ValueError):
        StyleSynthesizer().fit([])
    with pytest.raises(TypeError):
        StyleSynthesizer().fit([np.zeros((10, 3))])


def test_synthesizer_predict_shapes(fitted):
    ds = fitted.dataset_
    rows = np.concatenate([ds.x["march"][:5], ds.phase["march"][:5]], axis=1)
    pred = fitted.predict(rows)
    assert pred.shape == (5, 342)
    assert np.all(np.isfinite(pred))
    with pytest.raises(ValueError):
        fitted.predict(rows[:, :-1])


def test_synthesizer_score_prefers_true_targets(fitted):
    ds = fitted.dataset_
    rows = np.concatenate([ds.x["march"][:64], ds.phase["march"][:64]], axis=1)
    z = ds.z["march"][:64]
    true_score = fitted.score(rows, z)
    assert true_score < 0.0
    # swapping targets between distant frames must not score better
    shuffled = fitted.score(rows, z[::-1])
    assert true_score >= shuffled
