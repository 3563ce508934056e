import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mr2xray import phantom
from mr2xray.phantom import DEFAULT_MATERIALS, HeadPhantomParams, MaterialSpec

SMALL = HeadPhantomParams(dims=(48, 48, 48), spacing_mm=(4.0, 4.0, 4.0))


@pytest.fixture(scope="module")
def pair():
    return phantom.generate_head_phantom(SMALL)


def test_material_validation():
    with pytest.raises(ValueError):
        MaterialSpec("x", -0.1, 0.0)
    with pytest.raises(ValueError):
        MaterialSpec("x", 0.0, -1.0)


def test_material_ordering():
    m = DEFAULT_MATERIALS
    assert m["bone"].mu_per_mm > m["vessel"].mu_per_mm >= m["soft_tissue"].mu_per_mm > m["air"].mu_per_mm
    assert m["vessel"].mr_intensity > m["soft_tissue"].mr_intensity > m["bone"].mr_intensity >= m["air"].mr_intensity


@pytest.mark.parametrize("kwargs", [dict(skull_thickness_mm=0.0), dict(truncate_axial_fraction=1.0),
                                    dict(truncate_axial_fraction=-0.1), dict(jitter=-1.0)])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        HeadPhantomParams(**kwargs)


def test_too_small_grid():
    with pytest.raises(ValueError):
        phantom.generate_head_phantom(HeadPhantomParams(dims=(15, 32, 32)))


def test_deterministic(pair):
    ct2, mr2 = phantom.generate_head_phantom(SMALL)
    assert np.array_equal(pair[0].data, ct2.data) and np.array_equal(pair[1].data, mr2.data)


def test_registration(pair):
    ct, mr = pair
    assert ct.dims == mr.dims and ct.spacing_mm == mr.spacing_mm and ct.origin_mm == mr.origin_mm


def test_values_finite_non_negative(pair):
    for v in pair:
        assert np.isfinite(v.data).all() and (v.data >= 0).all()


def test_bone_is_mr_dark_and_dense(pair):
    ct, mr = pair
    bone = np.isclose(ct.data, DEFAULT_MATERIALS["bone"].mu_per_mm)
    assert bone.sum() > 100
    assert np.all(mr.data[bone] < 0.05 * mr.data.max())
    assert np.all(ct.data[bone] > DEFAULT_MATERIALS["soft_tissue"].mu_per_mm)


def test_ambiguity(pair):
    ct, mr = pair
    dark = mr.data < 0.05 * mr.data.max()
    assert (ct.data[dark] == 0).any()
    assert (ct.data[dark] >= DEFAULT_MATERIALS["bone"].mu_per_mm).any()


def test_structures_present(pair):
    ct, mr = pair
    vessel_mu = DEFAULT_MATERIALS["vessel"].mu_per_mm
    assert np.isclose(ct.data, vessel_mu).sum() > 0
    # vessels are the MR-brightest tissue
    assert mr.data[np.isclose(ct.data, vessel_mu)].mean() > mr.data[np.isclose(ct.data, 0.019)].mean()
    # sinus cavities leave air pockets enclosed by tissue along x
    filled = np.maximum.accumulate(ct.data > 0, axis=2) & np.maximum.accumulate((ct.data > 0)[..., ::-1], axis=2)[..., ::-1]
    assert (filled & (ct.data == 0)).any()


def test_truncation():
    ct, mr = phantom.generate_head_phantom(
        HeadPhantomParams(dims=(32, 32, 40), spacing_mm=(6.0, 6.0, 6.0), truncate_axial_fraction=0.25))
    top = ct.data[-10:]
    assert np.all(top == 0) and np.all(mr.data[-10:] == 0)
    assert ct.data[-11].any()


def test_analytic_phantom():
    v = phantom.generate_analytic_phantom("sphere", (0, 0, 0), 5.0, 2.0, (16, 16, 16), (1.0, 1.0, 1.0))
    xs, ys, zs = v.voxel_centers()
    zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
    inside = xx ** 2 + yy ** 2 + zz ** 2 <= 25.0
    assert np.array_equal(v.data, np.where(inside, 2.0, 0.0).astype(np.float32))
    zero = phantom.generate_analytic_phantom("ellipsoid", (1, 2, 3), (4, 5, 6), 0.0, (8, 8, 8))
    assert not zero.data.any()


def test_analytic_supersample_fraction():
    v = phantom.generate_analytic_phantom("sphere", (0, 0, 0), 4.0, 1.0, (16, 16, 16), (1.0, 1.0, 1.0), supersample=4)
    assert set(np.unique(v.data * 64).round(6)) <= set(float(k) for k in range(65))
    assert v.data.sum() == pytest.approx(4 / 3 * np.pi * 64, rel=2e-2)


@pytest.mark.parametrize("args", [("sphere", (1, 2, 3)), ("ellipsoid", (1, 0, 1)), ("cube", (1, 1, 1))])
def test_analytic_rejects(args):
    with pytest.raises(ValueError):
        phantom.generate_analytic_phantom(args[0], (0, 0, 0), args[1])


def test_cohort_single_equals_direct():
    base = HeadPhantomParams(seed=7, dims=(24, 24, 24), spacing_mm=(8.0, 8.0, 8.0))
    (p,) = phantom.generate_cohort(1, base)
    ct, mr = phantom.generate_head_phantom(base)
    assert p.subject_id == "subj00" and p.seed == 7
    assert np.array_equal(p.ct.data, ct.data) and np.array_equal(p.mr.data, mr.data)
    with pytest.raises(ValueError):
        phantom.generate_cohort(0, base)


def test_cohort_distinct_and_manifest():
    base = HeadPhantomParams(dims=(32, 32, 32), spacing_mm=(6.0, 6.0, 6.0), truncate_axial_fraction=0.2)
    pairs = phantom.generate_cohort(13, base, truncated_subjects=[2, 5])
    assert len(pairs) == 13 and [p.seed for p in pairs] == list(range(13))
    assert [p.truncation for p in pairs if p.truncation] == [0.2, 0.2]
    for a, b in zip(pairs, pairs[1:]):
        assert (a.ct.data == b.ct.data).mean() < 0.99
    text = phantom.format_cohort_manifest(pairs, {"seed": 0})
    rows = phantom.parse_cohort_manifest(text)
    assert rows[2] == ("subj02", 2, 0.2) and rows[0] == ("subj00", 0, 0.0)
    assert text.splitlines()[1] == "subject_id,seed,truncation"


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_any_seed_valid(seed):
    ct, mr = phantom.generate_head_phantom(HeadPhantomParams(seed=seed, dims=(20, 20, 20), spacing_mm=(10.0,) * 3))
    assert (ct.data >= 0).all() and (mr.data >= 0).all()
    assert ct.data.any() and mr.data.any()
