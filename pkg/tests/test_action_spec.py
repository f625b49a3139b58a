import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proda.action_spec import build_pairs, encode_spec, make_pair, pair_rng, targets_for


def multi_hot(C, idx):
    v = np.zeros(C, dtype=np.int64)
    v[list(idx)] = 1
    return v


def test_worked_example_counts():
    truth = multi_hot(5, [0, 2])
    batch = build_pairs(truth, 3, np.random.default_rng(0))
    assert len(batch) == 5
    injected = [p for p in batch if p.distractor_injected]
    plain = [p for p in batch if not p.distractor_injected]
    assert [int(p.sap.sum()) for p in injected] == [3, 3, 3]
    assert [int((p.sap & truth).sum()) for p in injected] == [0, 1, 2]
    assert [int(p.sap.sum()) for p in plain] == [1, 2]


def test_zero_present_pair_targets_no_action():
    truth = multi_hot(6, [1, 4])
    first = build_pairs(truth, 2, np.random.default_rng(3))[0]
    np.testing.assert_array_equal(first.y_s, multi_hot(7, [6]))


def test_uap_is_complement():
    pair = make_pair(multi_hot(4, [1]), multi_hot(4, [1]), False)
    np.testing.assert_array_equal(pair.uap, [1, 0, 1, 1])


@pytest.mark.parametrize("spec, truth, expected", [
    ([1, 1, 0], [0, 1, 1], [0, 1, 0, 0]),
    ([1, 0, 1], [1, 0, 1], [1, 0, 1, 0]),
    ([1, 0, 0], [0, 1, 1], [0, 0, 0, 1]),
])
def test_targets_for(spec, truth, expected):
    np.testing.assert_array_equal(targets_for(np.array(spec), np.array(truth)), expected)


def test_encode_spec():
    assert encode_spec(np.zeros(4)).data.sum() == 0.0
    assert encode_spec(multi_hot(6, [0, 2, 5])).data.sum() == 3.0
    with pytest.raises(ValueError):
        encode_spec(np.array([0.0, 0.5]))


@pytest.mark.parametrize("truth, K", [
    (np.zeros(4, dtype=np.int64), 2),        # unlabeled
    (multi_hot(4, [0]), 5),                  # K > C
    (multi_hot(4, [0, 1, 2]), 2),            # K < L
    (multi_hot(4, [0, 1]), 3),               # too few absent classes to pad
])
def test_invalid_constructions(truth, K):
    with pytest.raises(ValueError):
        build_pairs(truth, K, np.random.default_rng(0))


@st.composite
def truths(draw, C=157, max_L=16):
    L = draw(st.integers(1, max_L))
    seed = draw(st.integers(0, 2**31))
    return multi_hot(C, np.random.default_rng(seed).choice(C, size=L, replace=False))


@settings(max_examples=200, deadline=None)
@given(truth=truths(), seed=st.integers(0, 2**31))
def test_construction_invariants(truth, seed):
    K = 16
    L = int(truth.sum())
    batch = build_pairs(truth, K, np.random.default_rng(seed))
    assert len(batch) == 2 * L + 1 and batch.num_labels == L
    for p in batch:
        assert not np.any(p.sap & p.uap)
        assert np.all(p.sap | p.uap)
        present = p.sap & truth
        if p.distractor_injected:
            assert p.sap.sum() == K
        else:
            assert np.array_equal(present, p.sap)
        for spec, y in ((p.sap, p.y_s), (p.uap, p.y_u)):
            hit = spec & truth
            np.testing.assert_array_equal(y[:-1], hit)
            assert y[-1] == int(not hit.any())


@settings(max_examples=30, deadline=None)
@given(truth=truths(C=20, max_L=4), seed=st.integers(0, 2**31), video=st.integers(0, 1000))
def test_construction_is_pure_in_seed(truth, seed, video):
    a = build_pairs(truth, 4, pair_rng(seed, video, 2))
    b = build_pairs(truth, 4, pair_rng(seed, video, 2))
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.sap, q.sap)
