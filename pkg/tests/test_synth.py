import numpy as np

from adam_pipe.data_model import LesionKind
from adam_pipe.synth import amd_flags, generate_sample, generate_samples


def test_half_the_images_are_amd():
    for n in (1, 6, 7, 40):
        assert int(np.sum(amd_flags(n, 0))) == n // 2


def test_sample_annotations_consistent():
    for s in generate_samples(10, 64, seed=2):
        assert s.image.shape == (64, 64, 3)
        assert s.od_mask.sum() > 0
        assert s.od_mask[int(s.fovea.y), int(s.fovea.x)] == 0
        assert set(s.lesion_masks) == set(LesionKind)
        has_lesion = any(m.any() for m in s.lesion_masks.values())
        assert has_lesion == bool(s.amd_label)


def test_disc_is_brighter_than_macula():
    s = generate_sample(0, 128, 5, amd=False)
    grey = s.image.astype(float).mean(axis=2)
    r, c = int(s.fovea.y), int(s.fovea.x)
    assert grey[s.od_mask == 1].mean() > grey[r - 2:r + 3, c - 2:c + 3].mean() + 30


def test_deterministic_and_seed_sensitive():
    a = generate_sample(3, 64, 1, amd=True)
    b = generate_sample(3, 64, 1, amd=True)
    c = generate_sample(3, 64, 2, amd=True)
    assert np.array_equal(a.image, b.image) and a.fovea == b.fovea
    assert not np.array_equal(a.image, c.image)
