import numpy as np
import pytest

from sparsevit import synth
from sparsevit.config import DESK

CFG = DESK.replace(input_size=64)


def sample(seed=0, hard=False, cfg=CFG):
    return synth.generate(synth.make_spec(seed, cfg, hard_negative=hard))


def test_generation_is_pure():
    a, b = sample(5), sample(5)
    assert a.image.tobytes() == b.image.tobytes() and a.mask.tobytes() == b.mask.tobytes()
    assert a.provenance == b.provenance
    assert sample(6).image.tobytes() != a.image.tobytes()


@pytest.mark.parametrize("seed", range(12))
def test_sample_invariants(seed):
    s = sample(seed)
    assert s.image.shape == (3, 64, 64) and s.mask.shape == (64, 64)
    assert s.image.min() >= 0 and s.image.max() <= 1
    np.testing.assert_array_equal(np.round(s.image * 255) / 255, s.image)
    assert set(np.unique(s.mask)) <= {0, 1}
    assert CFG.area_min <= s.mask.mean() <= CFG.area_max


def test_donor_differs_unless_hard_negative():
    for seed in range(20):
        spec = synth.make_spec(seed, CFG)
        assert spec.donor != spec.host and not spec.hard_negative
        hard = synth.make_spec(seed, CFG, hard_negative=True)
        assert hard.hard_negative and hard == synth.hard_negative_of(spec)


def test_hard_negative_has_no_seam():
    d = [synth.residual_effect_size(sample(s, hard=True, cfg=DESK)) for s in range(8)]
    assert abs(np.median(d)) < 0.5


def test_zero_area_request_errors():
    spec = synth.make_spec(0, CFG.replace(area_min=0.0, area_max=0.0))
    with pytest.raises(synth.DegenerateRegionError):
        synth.generate(spec)


def test_invalid_specs():
    spec = synth.make_spec(0, CFG)
    with pytest.raises(ValueError):
        synth.SceneSpec(0, 64, "plasma", spec.host, spec.donor, "rectangle")
    with pytest.raises(ValueError):
        synth.SceneSpec(0, 64, "noise", synth.Fingerprint(-1.0, 0.0, 0), spec.donor, "ellipse")


def test_fingerprint_is_discriminable():
    cfg = DESK
    d = [synth.residual_effect_size(sample(s, cfg=cfg)) for s in range(8)]
    assert np.median(d) > 1.0


def test_mask_marks_composited_pixels_exactly():
    spec = synth.make_spec(2, CFG)
    s = synth.generate(spec)
    hard = synth.generate(synth.hard_negative_of(spec))
    differs = np.any(s.image != hard.image, axis=0)
    # every changed pixel is inside the mask and almost every mask pixel changed
    assert not differs[s.mask == 0].any()
    assert differs[s.mask == 1].mean() > 0.9


def test_split_seeds_disjoint():
    sets = [set(synth.split_seeds(k, 1000)) for k in synth.SPLIT_OFFSETS]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            assert not sets[i] & sets[j]
