import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proda.numerics import (Linear, NonFiniteError, SelfAttention, ShapeError, Tensor, autograd as ag,
                            checkpoint, grad_check, no_grad, relative_error)
from proda.numerics.checkpoint import CheckpointError
from proda.numerics.optim import RMSProp

from conftest import Holder, signed_weights

shapes = st.lists(st.integers(1, 4), min_size=1, max_size=3).map(tuple)


def check_unary(op, x, rng, tol=1e-5):
    h = Holder(x=x)
    w = signed_weights(rng, x.shape)
    report = grad_check(lambda: ag.sum_(op(h.x) * w), h, eps=1e-5)
    assert report.max_rel_err <= tol, report.summary()


# -- examples ---------------------------------------------------------------------

def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_array_equal(ag.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_relu_examples():
    assert ag.relu(Tensor(-3.0)).item() == 0.0
    assert ag.relu(Tensor(2.5)).item() == 2.5


def test_bce_with_logits_at_zero_is_ln2():
    assert ag.bce_with_logits(Tensor(0.0), np.array(1.0)).item() == pytest.approx(math.log(2), abs=1e-12)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)|\(4,\).*\(2, 3\)"):
        ag.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_non_finite_forward_names_op():
    with pytest.raises(NonFiniteError, match="log"):
        ag.log(Tensor([-1.0]))


def test_linear_mse_gradcheck_is_tight(rng):
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(5, 2))
    report = grad_check(lambda: ag.mse(lin(Tensor(x)), Tensor(y)), lin)
    assert report.max_rel_err <= 1e-6


def test_frozen_parameter_is_left_out_of_report(rng):
    lin = Linear(3, 2, rng)
    lin.bias.set_trainable(False)
    report = grad_check(lambda: ag.sum_(lin(Tensor(rng.normal(size=(4, 3))))), lin)
    assert [n for n, _ in report.entries] == ["weight"]


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([3.0]))[0] == pytest.approx(0.5)


def test_gradcheck_rejects_eps_outside_range(rng):
    lin = Linear(2, 1, rng)
    with pytest.raises(ValueError):
        grad_check(lambda: ag.sum_(lin(Tensor(np.ones((1, 2))))), lin, eps=1e-2)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ag.sum_(x * 2.0)
    assert not y.requires_grad


# -- properties -------------------------------------------------------------------

UNARY = {
    "exp": ag.exp,
    "tanh": ag.tanh,
    "sigmoid": ag.sigmoid,
    "square": lambda a: ag.power(a, 2.0),
    "softmax": lambda a: ag.softmax(a, axis=-1),
    "mean_keep": lambda a: ag.mean(a, axis=-1, keepdims=True) * a,
    "variance": lambda a: ag.variance(a, axis=-1, keepdims=True, ddof=0) + a,
    "transpose": lambda a: ag.transpose(ag.transpose(a)) * a,
}


@settings(max_examples=15, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**16), name=st.sampled_from(sorted(UNARY)))
def test_primitive_gradients_match_central_differences(shape, seed, name):
    rng = np.random.default_rng(seed)
    check_unary(UNARY[name], rng.normal(size=shape), rng)


@settings(max_examples=15, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**16))
def test_positive_domain_primitives(shape, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 2.0, size=shape)
    for op in (ag.log, ag.sqrt, lambda a: ag.div(1.0, a), lambda a: ag.power(a, -1.5)):
        check_unary(op, x, rng)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_kinked_primitives_away_from_the_kink(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
    check_unary(ag.relu, x, rng)
    check_unary(ag.abs_, x, rng)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16), b=st.integers(1, 4), n=st.integers(1, 5), k=st.integers(1, 6))
def test_binary_and_structural_gradients(seed, b, n, k):
    rng = np.random.default_rng(seed)
    h = Holder(a=rng.normal(size=(b, n, k)), w=rng.normal(size=(k, 3)), c=rng.normal(size=(n, k)))
    w_out = signed_weights(rng, (b, n, 3))

    def loss():
        y = ag.matmul(h.a * h.c + h.c, h.w)
        y = ag.concat([y[..., :1], ag.reshape(y[..., 1:], (b, n, 2))], axis=-1)
        y = y - ag.stack([h.c[:, 0]] * 3, axis=-1)
        return ag.sum_(y * w_out) + ag.sum_(ag.div(h.a, 2.0 + ag.sigmoid(h.a)))

    assert grad_check(loss, h).max_rel_err <= 1e-5


@settings(max_examples=25, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**16))
def test_softmax_sums_to_one(shape, seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=shape)
    np.testing.assert_allclose(ag.softmax(Tensor(x), axis=-1).data.sum(axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_sums_to_one_over_kept_entries(rng):
    mask = np.array([[True, False, True], [False, False, True]])
    p = ag.softmax(Tensor(rng.normal(size=(2, 3))), axis=-1, mask=mask).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p[~mask] == 0.0)


def test_attention_over_one_element_is_value_projection(rng):
    att = SelfAttention(4, rng)
    x = rng.normal(size=(2, 1, 4))
    out = att(Tensor(x)).data
    np.testing.assert_allclose(out, x + att.v(Tensor(x)).data, atol=1e-14)


def test_attention_gradients(rng):
    att = SelfAttention(3, rng)
    x = rng.normal(size=(2, 4, 3))
    mask = np.array([[True, True, False, True], [True, False, True, True]])
    w = signed_weights(rng, x.shape)
    assert grad_check(lambda: ag.sum_(att(Tensor(x), mask) * w), att).max_rel_err <= 1e-5


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_backward_is_linear_in_the_loss(seed):
    rng = np.random.default_rng(seed)
    h = Holder(x=rng.normal(size=(3, 4)))
    f1 = lambda: ag.sum_(ag.tanh(h.x) * 2.0)
    f2 = lambda: ag.sum_(ag.exp(h.x * 0.3))

    grads = []
    for fn in (f1, f2, lambda: f1() + f2()):
        h.zero_grad()
        fn().backward()
        grads.append(h.x.grad.copy())
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], rtol=1e-12, atol=1e-14)


# -- checkpoints and optimizer ---------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    state = {"a.weight": rng.normal(size=(3, 2)), "b": np.array(2.5), "c.empty": np.zeros((0, 4))}
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, state)
    back = checkpoint.load(path)
    assert list(back) == list(state)
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    assert checkpoint.to_bytes(back) == path.read_bytes()


def test_checkpoint_rejects_garbage():
    blob = checkpoint.to_bytes({"w": np.ones(3)})
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.from_bytes(blob + b"\0")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    checkpoint.atomic_write(tmp_path / "x.txt", "hello")
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_rmsprop_skips_frozen_parameters(rng):
    lin = Linear(2, 2, rng)
    lin.bias.set_trainable(False)
    before = lin.bias.data.copy()
    opt = RMSProp(lin.parameters(), lr=0.1)
    ag.sum_(lin(Tensor(np.ones((1, 2))))).backward()
    opt.step()
    np.testing.assert_array_equal(lin.bias.data, before)
    assert not np.allclose(lin.weight.grad, 0.0)


def test_state_dict_round_trip(rng):
    a, b = Linear(3, 2, rng), Linear(3, 2, rng)
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    with pytest.raises(ShapeError):
        Linear(4, 2, rng).load_state_dict(a.state_dict())
