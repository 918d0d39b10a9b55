import itertools

import numpy as np
import pytest
import torch

from adam_pipe.classify import (
    BackboneSpec,
    Classifier,
    Ensemble,
    EnsembleMember,
    EnsembleSpec,
    build_backbone,
    ensemble_predict,
    train_classifier,
    tta_predict,
)
from adam_pipe.data_model import FoveaCoordinate
from adam_pipe.errors import ConfigError, DataError

SPEC = BackboneSpec(name="toy", input_resolution=(32, 32), optimizer="adam", options={"width": 8})


class ConstantModel:
    def __init__(self, p):
        self.p = p

    def predict_proba(self, image):
        return self.p


class ScriptedModel:
    """Returns the next value from a script on each call."""

    def __init__(self, values):
        self.values = iter(values)

    def predict_proba(self, image):
        return next(self.values)


class MeanIntensityModel:
    def predict_proba(self, image):
        return float(np.asarray(image).mean() / 255.0)


def separable_set(n, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = []
    for y in labels:
        base = 170 if y else 70
        images.append(np.clip(rng.normal(base, 15, (32, 32, 3)), 0, 255).astype(np.uint8))
    return images, labels.tolist()


def test_toy_backbone_learns_separable_set():
    x, y = separable_set(32, 0)
    vx, vy = separable_set(16, 1)
    clf = train_classifier(SPEC, x, y, epochs=20, learning_rate=1e-3, seed=0,
                           val_images=vx, val_labels=vy, batch_size=8)
    assert clf.best_accuracy == 1.0
    assert len(clf.history) == 20
    probs = [clf.predict_proba(im) for im in vx]
    assert all((p >= 0.5) == bool(t) for p, t in zip(probs, vy))


def test_zero_epochs_equals_initialisation():
    x, y = separable_set(8, 0)
    clf = train_classifier(SPEC, x, y, epochs=0, seed=4)
    torch.manual_seed(4)
    ref = build_backbone(SPEC).state_dict()
    assert all(torch.equal(ref[k], clf.state[k]) for k in ref)


def test_single_class_rejected():
    x, _ = separable_set(4, 0)
    with pytest.raises(DataError):
        train_classifier(SPEC, x, [1, 1, 1, 1], epochs=1)


def test_backbone_spec_problems():
    assert BackboneSpec(name="nope").problems()
    assert BackboneSpec(input_resolution=(16, 16)).problems()
    with pytest.raises(ConfigError):
        build_backbone(BackboneSpec(optimizer="lbfgs"))


def test_classifier_save_load(tmp_path):
    x, y = separable_set(8, 0)
    clf = train_classifier(SPEC, x, y, epochs=1, batch_size=4)
    clf.save(tmp_path / "m")
    again = Classifier.load(tmp_path / "m")
    assert again.predict_proba(x[0]) == clf.predict_proba(x[0])
    with pytest.raises(DataError):
        Classifier.load(tmp_path / "missing")


def test_tta_constant_model():
    img = np.zeros((16, 16, 3), np.uint8)
    assert tta_predict(ConstantModel(0.7), img, ["equalize", "adaptive_equalize"]) == pytest.approx(0.7)


def test_tta_mean_of_variants():
    img = np.zeros((16, 16, 3), np.uint8)
    assert tta_predict(ScriptedModel([0.2, 0.4, 0.9]), img, ["equalize", "rescale(2,98)"]) == pytest.approx(0.5)


def test_tta_empty_ops_is_plain_forward():
    img = np.full((16, 16, 3), 51, np.uint8)
    assert tta_predict(MeanIntensityModel(), img, []) == pytest.approx(0.2)


def test_ensemble_mean():
    img = np.zeros((32, 32, 3), np.uint8)
    ens = Ensemble([("a", 1.0, ConstantModel(0.2)), ("b", 1.0, ConstantModel(0.4)), ("c", 1.0, ConstantModel(0.6))])
    assert ensemble_predict(ens, img) == pytest.approx(0.4)


def test_ensemble_single_member_identity():
    img = np.random.default_rng(0).integers(0, 256, (40, 40, 3), dtype=np.uint8)
    ens = Ensemble([("a", 0.5, MeanIntensityModel())], ["equalize"])
    expected = tta_predict(MeanIntensityModel(), img[10:30, 10:30], ["equalize"])
    assert ensemble_predict(ens, img, FoveaCoordinate(20, 20)) == expected


def test_ensemble_permutation_bit_exact_and_duplicate():
    rng = np.random.default_rng(1)
    probs = rng.random(6)
    img = np.zeros((32, 32, 3), np.uint8)
    members = [(f"m{i}", 1.0, ConstantModel(float(p))) for i, p in enumerate(probs)]
    ref = ensemble_predict(Ensemble(members), img)
    for perm in itertools.islice(itertools.permutations(members), 200):
        assert ensemble_predict(Ensemble(list(perm)), img) == ref
    doubled = ensemble_predict(Ensemble(members + members), img)
    assert doubled == pytest.approx(ref, abs=1e-15)


def test_ensemble_removing_mean_member():
    img = np.zeros((32, 32, 3), np.uint8)
    a = Ensemble([("a", 1.0, ConstantModel(0.1)), ("b", 1.0, ConstantModel(0.5)), ("c", 1.0, ConstantModel(0.9))])
    b = Ensemble([("a", 1.0, ConstantModel(0.1)), ("c", 1.0, ConstantModel(0.9))])
    assert ensemble_predict(a, img) == pytest.approx(ensemble_predict(b, img))


def test_ensemble_unloadable_member_named(tmp_path):
    x, y = separable_set(8, 0)
    train_classifier(SPEC, x, y, epochs=1, batch_size=4).save(tmp_path / "good")
    spec = EnsembleSpec([EnsembleMember("good", 1.0, str(tmp_path / "good")),
                         EnsembleMember("broken", 0.5, str(tmp_path / "gone"))])
    with pytest.raises(DataError, match="broken"):
        ensemble_predict(spec, x[0])


def test_ensemble_spec_round_trip(tmp_path):
    x, y = separable_set(8, 0)
    train_classifier(SPEC, x, y, epochs=1, batch_size=4).save(tmp_path / "m")
    spec = EnsembleSpec([EnsembleMember("m", 0.75, "m")], ["equalize"])
    spec.save(tmp_path / "ensemble.json")
    loaded = EnsembleSpec.load(tmp_path / "ensemble.json")
    assert loaded.members[0].zoom == 0.75 and loaded.tta_ops == ["equalize"]
    p = ensemble_predict(loaded, x[0])
    assert 0.0 <= p <= 1.0
    with pytest.raises(ConfigError):
        Ensemble.from_spec(EnsembleSpec([]))
