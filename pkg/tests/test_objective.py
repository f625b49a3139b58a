import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proda import objective as obj
from proda.numerics import Tensor, autograd as ag, grad_check

from conftest import Holder


def feats(rng, shape=(2, 3, 4, 5)):
    return Tensor(rng.normal(size=shape))


# -- disentanglement ----------------------------------------------------------------

def test_identical_inputs_give_one_minus_margin(rng):
    f = feats(rng)
    assert obj.disentangle_loss(f, f, 0.1).item() == 1.0 - 0.1


def test_affine_copy_is_fully_correlated(rng):
    f = feats(rng)
    np.testing.assert_allclose(obj.pearson(f, 2.0 * f + 3.0).data, 1.0, atol=1e-12)
    np.testing.assert_allclose(obj.pearson(f, -0.5 * f).data, -1.0, atol=1e-12)


def test_orthogonal_pattern_has_zero_correlation():
    fu = Tensor(np.array([[1.0, -1.0, 1.0, -1.0]]))
    fs = Tensor(np.array([[1.0, 1.0, -1.0, -1.0]]))
    assert obj.pearson(fu, fs).data[0] == 0.0
    assert obj.disentangle_loss(fu, fs, 0.1).item() == 0.0


def test_zero_variance_gives_zero_correlation(rng):
    f = feats(rng, (2, 6, 3))
    const = Tensor(np.ones((2, 6, 3)))
    rho = obj.pearson(f, const).data
    np.testing.assert_array_equal(rho, 0.0)


def test_masked_entries_do_not_count(rng):
    x = rng.normal(size=(1, 4, 3))
    y = rng.normal(size=(1, 4, 3))
    mask = np.array([[True, True, True, False]])
    y2 = y.copy()
    y2[0, 3] = 1e3
    a = obj.pearson(Tensor(x), Tensor(y), mask).data
    b = obj.pearson(Tensor(x), Tensor(y2), mask).data
    np.testing.assert_allclose(a, b, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(1e-2, 1e2), b=st.floats(-1e2, 1e2))
def test_disentangle_loss_is_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    fu, fs = feats(rng, (3, 4, 6)), feats(rng, (3, 4, 6))
    base = np.abs(obj.pearson(fu, fs).data)
    moved_u = np.abs(obj.pearson(a * fu + b, fs).data)
    moved_s = np.abs(obj.pearson(fu, a * fs + b).data)
    assert np.abs(moved_u - base).max() <= 1e-10
    assert np.abs(moved_s - base).max() <= 1e-10


# -- reconstruction -----------------------------------------------------------------

def test_perfect_reconstruction_costs_nothing(rng):
    f = feats(rng)
    assert obj.reconstruction_loss(f, f, 0.01).item() == 0.0


def test_reconstruction_at_margin_is_zero():
    fo = Tensor(np.zeros((1, 1, 4)))
    fr = Tensor(np.full((1, 1, 4), 0.5))           # MSE = 0.25
    assert obj.reconstruction_loss(fo, fr, 0.25).item() == 0.0
    assert obj.reconstruction_loss(fo, fr, 0.2).item() == pytest.approx(0.05, abs=1e-15)


def test_equal_branches_reconstruct_themselves(rng):
    nets = obj.FusionNets(5, rng)
    x = feats(rng)
    f_r, _ = obj.reconstruct(x, x, nets)
    np.testing.assert_allclose(f_r.data, x.data, atol=1e-14)


def test_zero_net2_mixes_evenly(rng):
    nets = obj.FusionNets(5, rng)
    last = nets.net2.layers[-1]
    last.weight.data[:] = 0.0
    last.bias.data[:] = 0.0
    _, delta = obj.reconstruct(feats(rng), feats(rng), nets)
    np.testing.assert_array_equal(delta.data, 0.5)


def test_hand_set_fusion(rng):
    nets = obj.FusionNets(2, rng)
    for lin in nets.net2.layers:
        lin.weight.data[:] = 0.0
        lin.bias.data[:] = 0.0
    nets.net2.layers[-1].bias.data[:] = np.log(3.0)          # delta = 0.75
    nets.net1_hidden.weight.data = np.eye(2)
    nets.net1_hidden.bias.data = np.zeros(2)
    nets.net1_out.weight.data = np.array([[1.0, 0.0], [0.0, 0.0]])
    nets.net1_out.bias.data = np.zeros(2)
    fu = Tensor(np.array([[[2.0, -4.0]]]))
    fs = Tensor(np.array([[[-2.0, 4.0]]]))
    # mix = 0.75*fu + 0.25*fs = [1, -2]; net1 = mix + [relu(1), 0] = [2, -2]
    f_r, delta = obj.reconstruct(fu, fs, nets)
    np.testing.assert_allclose(delta.data, 0.75)
    np.testing.assert_allclose(f_r.data, [[[2.0, -2.0]]], atol=1e-14)


# -- combination and gradients ----------------------------------------------------------

def test_combination_identity(rng):
    w = obj.LossWeights(0.7, 1.3, 0.4, 0.25, 0.1, 0.01)
    parts = [Tensor(v) for v in rng.uniform(0.1, 2.0, size=5)]
    out = obj.combine(*parts, w)
    u, s, t, d, r = (p.item() for p in parts)
    assert out.total.item() == w.lambda1 * u + w.lambda2 * s + w.lambda3 * t + w.lambda4 * (d + r)


def test_bce_rejects_soft_targets():
    with pytest.raises(ValueError):
        obj.bce_loss(Tensor(np.zeros(3)), np.array([0.0, 0.5, 1.0]))


def test_pad_video_targets():
    np.testing.assert_array_equal(obj.pad_video_targets(np.array([[1, 0], [0, 1]])), [[1, 0, 0], [0, 1, 0]])


def test_clamped_terms_send_no_gradient(rng):
    h = Holder(u=rng.normal(size=(2, 3, 4)), s=rng.normal(size=(2, 3, 4)))
    # margins above any possible value clamp both terms
    loss = obj.disentangle_loss(h.u, h.s, 1.5) + obj.reconstruction_loss(h.u, h.s, 1e6)
    loss.backward()
    assert loss.item() == 0.0
    assert np.all(h.u.grad == 0.0) and np.all(h.s.grad == 0.0)


def test_total_loss_gradcheck_on_two_videos(rng):
    nets = obj.FusionNets(3, rng)
    nets.net1_out.weight.data = rng.normal(scale=0.3, size=(3, 3))
    h = Holder(u=rng.normal(size=(2, 2, 2, 3)), s=rng.normal(size=(2, 2, 2, 3)),
               o=rng.normal(size=(2, 2, 2, 3)), au=rng.normal(size=(2, 4)),
               as_=rng.normal(size=(2, 4)), at=rng.normal(size=(2, 4)))
    h.nets = nets
    mask = np.array([[[True, True], [True, False]], [[True, True], [True, True]]])
    y = rng.integers(0, 2, size=(3, 2, 4))
    w = obj.LossWeights(m1=0.0, m2=0.0)

    def loss():
        f_r, _ = obj.reconstruct(h.u, h.s, nets, mask)
        return obj.total_loss(h.au, h.as_, h.at, y[0], y[1], y[2], h.u, h.s, h.o, f_r, w, mask).total

    with ag.precision(np.longdouble):
        for _, p in h.named_parameters():
            p.data = p.data.astype(np.longdouble)
        report = grad_check(loss, h)
    assert report.passed, report.summary()
