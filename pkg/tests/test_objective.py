import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mr2xray import gradcore as gc
from mr2xray import objective as obj
from mr2xray.gradcore.tensor import Tensor
from mr2xray.model import arch

LN2 = math.log(2.0)


def small_disc(seed=0):
    return arch.build_discriminator(seed, arch.DiscConfig(base_channels=4))


def small_feat():
    return arch.build_feature_net(arch.FeatureNetConfig(channels=(4, 4, 8, 8)))


def images(seed=0, size=64):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.standard_normal((1, 1, size, size)).astype(np.float32)) for _ in range(3)]


def zero_disc():
    d = small_disc()
    for t in d.params.values():
        t.data[...] = 0.0
    return d


def test_sobel_step_edge():
    img = np.zeros((8, 8))
    img[:, 4:] = 1.0
    raw = obj.sobel_raw(img)
    # the horizontal kernel has column weights 1 + 2 + 1 = 4 across a unit step
    assert raw[4, 3] == 4.0 and raw[4, 4] == 4.0
    assert raw[4, 0] == 0.0 and raw[4, 7] == 0.0
    g = obj.sobel_gradient_map(img)
    assert g.max() == 1.0 and g.min() == 0.0


def test_sobel_constant_and_errors():
    assert np.all(obj.sobel_gradient_map(np.full((5, 5), 3.0)) == 0.0)
    with pytest.raises(ValueError):
        obj.sobel_raw(np.ones((2, 5)))
    with pytest.raises(ValueError):
        obj.sobel_raw(np.ones((3, 3, 3)))


def test_sobel_range_property(rng):
    for _ in range(5):
        g = obj.sobel_gradient_map(rng.standard_normal((12, 9)))
        assert g.min() >= 0.0 and g.max() == pytest.approx(1.0)


def test_weight_map_examples():
    g = np.array([[0.0, 0.39, 0.4, 0.9]])
    w = obj.make_weight_map(g).data
    np.testing.assert_allclose(w, [[0.1, 0.1, 0.4, 0.9]])
    w = obj.make_weight_map(g, obj.LossConfig(binarize=True)).data
    np.testing.assert_allclose(w, [[0.1, 0.1, 1.0, 1.0]])
    w = obj.make_weight_map(g, obj.LossConfig(baseline_weight=0.0)).data
    np.testing.assert_allclose(w, [[0.0, 0.0, 0.4, 0.9]])
    assert np.all(obj.make_weight_map(g, obj.LossConfig(edge_weighting=False)).data == 1.0)


def test_weight_map_validation():
    with pytest.raises(ValueError):
        obj.WeightMap(np.array([[-1.0]]))
    with pytest.raises(ValueError):
        obj.WeightMap(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        obj.LossConfig(edge_threshold=1.5)


def test_weight_map_depends_only_on_label(rng):
    label = rng.standard_normal((16, 16))
    a = obj.label_weight_map(label).data
    # the weight map is built before any generated image exists; rebuilding gives the same map
    b = obj.label_weight_map(label.copy()).data
    assert np.array_equal(a, b)


def test_resize_weight_map():
    check = (np.indices((64, 64)).sum(axis=0) % 2).astype(float)
    out = obj.resize_weight_map(obj.WeightMap(check), 8, 8)
    np.testing.assert_allclose(out.data, 0.5, atol=1e-6)
    same = obj.resize_weight_map(obj.WeightMap(check), 64, 64)
    assert np.array_equal(same.data, check.astype(np.float32))
    up = obj.resize_weight_map(np.full((4, 4), 0.7), 9, 13)
    np.testing.assert_allclose(up.data, 0.7, atol=1e-6)


def test_edge_fraction():
    w = obj.WeightMap(np.array([[0.1, 0.5], [0.4, 0.1]]))
    assert obj.edge_fraction(w) == 0.5


def test_zero_logit_discriminator_closed_forms():
    x, y, g = images()
    d = zero_disc()
    assert obj.discriminator_loss(d, x, y, g).item() == pytest.approx(2 * LN2, abs=1e-6)
    assert obj.generator_gan_loss(d, x, g).item() == pytest.approx(LN2, abs=1e-6)
    ones = obj.WeightMap(np.ones((64, 64)))
    assert obj.generator_gan_loss(d, x, g, ones).item() == pytest.approx(LN2, abs=1e-6)


def _param_grads(module):
    return {k: (None if t.grad is None else t.grad.copy()) for k, t in module.params.items()}


def test_zero_map_gives_zero_loss_and_gradients():
    x, y, _ = images()
    gen = arch.build_generator(arch.ArchConfig(channels=(4, 4, 4), resblocks=(0, 0, 1)))
    d, v = small_disc(), small_feat()
    zero = obj.WeightMap(np.zeros((64, 64)))
    g = gen(x)
    loss_d = obj.discriminator_loss(d, x, y, g, zero)
    assert loss_d.item() == 0.0
    gc.backward(loss_d)
    assert all(t.grad is not None and not t.grad.any() for t in d.params.values())
    d.params.zero_grad()
    with d.params.frozen():
        loss_g = obj.total_loss(obj.generator_gan_loss(d, x, g, zero), obj.feature_matching_loss(v, y, g, zero))
        assert loss_g.item() == 0.0
        gc.backward(loss_g)
    assert all(t.grad is not None and not t.grad.any() for t in gen.params.values())


def test_doubling_weights_doubles_loss(rng):
    x, y, g = images(1)
    d, v = small_disc(), small_feat()
    w = obj.WeightMap(rng.random((64, 64)))
    w2 = obj.WeightMap(2 * w.data)
    assert obj.generator_gan_loss(d, x, g, w2).item() == pytest.approx(2 * obj.generator_gan_loss(d, x, g, w).item(), rel=1e-6)
    assert obj.discriminator_loss(d, x, y, g, w2).item() == pytest.approx(2 * obj.discriminator_loss(d, x, y, g, w).item(), rel=1e-6)
    assert obj.feature_matching_loss(v, y, g, w2).item() == pytest.approx(2 * obj.feature_matching_loss(v, y, g, w).item(), rel=1e-6)


def test_feature_matching_identity_and_stage_weights():
    _, y, g = images(2)
    v = small_feat()
    assert obj.feature_matching_loss(v, y, y).item() == 0.0
    full = obj.feature_matching_loss(v, y, g).item()
    parts = [obj.feature_matching_loss(v, y, g, stage_weights=np.eye(4)[s]).item() for s in range(4)]
    assert full == pytest.approx(sum(parts), rel=1e-6)
    with pytest.raises(ValueError):
        obj.feature_matching_loss(v, y, g, stage_weights=(1.0, 1.0))


def test_shape_mismatch():
    x, y, _ = images()
    with pytest.raises(gc.ShapeError):
        obj.feature_matching_loss(small_feat(), y, Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))


def test_generated_detached_in_discriminator_loss():
    x, y, _ = images()
    g = Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32), requires_grad=True)
    gc.backward(obj.discriminator_loss(small_disc(), x, y, g))
    assert g.grad is None


def test_edge_weighting_off_bitwise():
    x, y, _ = images(3)
    gen = arch.build_generator(arch.ArchConfig(channels=(4, 4, 4), resblocks=(0, 0, 1)))
    d, v = small_disc(), small_feat()
    off = obj.label_weight_map(y.data[0, 0], obj.LossConfig(edge_weighting=False))

    def run(wmap):
        g = gen(x)
        ld = obj.discriminator_loss(d, x, y, g, wmap)
        gc.backward(ld)
        gd = _param_grads(d)
        d.params.zero_grad()
        with d.params.frozen():
            lg = obj.total_loss(obj.generator_gan_loss(d, x, g, wmap), obj.feature_matching_loss(v, y, g, wmap))
            gc.backward(lg)
        gg = _param_grads(gen)
        gen.params.zero_grad()
        return ld.data.tobytes(), lg.data.tobytes(), gd, gg

    a, b = run(off), run(None)
    assert a[0] == b[0] and a[1] == b[1]
    for ga, gb in ((a[2], b[2]), (a[3], b[3])):
        assert all(np.array_equal(ga[k], gb[k]) for k in ga)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 2.0))
def test_monotone_in_weight_map(seed, bump):
    rng = np.random.default_rng(seed)
    x, y, g = images(seed % 7)
    d, v = small_disc(), small_feat()
    w = rng.random((64, 64))
    w_up = w + bump * rng.random((64, 64))
    lo, hi = obj.WeightMap(w), obj.WeightMap(w_up)
    tol = 1e-6
    assert obj.generator_gan_loss(d, x, g, hi).item() >= obj.generator_gan_loss(d, x, g, lo).item() - tol
    assert obj.discriminator_loss(d, x, y, g, hi).item() >= obj.discriminator_loss(d, x, y, g, lo).item() - tol
    assert obj.feature_matching_loss(v, y, g, hi).item() >= obj.feature_matching_loss(v, y, g, lo).item() - tol


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_losses_non_negative(seed):
    x, y, g = images(seed % 11)
    w = obj.label_weight_map(y.data[0, 0])
    d, v = small_disc(seed % 3), small_feat()
    assert obj.discriminator_loss(d, x, y, g, w).item() >= 0
    assert obj.generator_gan_loss(d, x, g, w).item() >= 0
    assert obj.feature_matching_loss(v, y, g, w).item() >= 0
