import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncgl.channel import (
    ConfusionMatrix,
    analyze,
    corrupt,
    corrupt_many,
    make_uniform_flip,
    push_forward,
)
from ncgl.errors import InvalidArgumentError
from ncgl.findist import FiniteJoint


def test_uniform_flip_entries():
    c = make_uniform_flip(10, 0.8)
    assert np.allclose(np.diag(c.entries), 0.8)
    off = c.entries[~np.eye(10, dtype=bool)]
    assert np.allclose(off, 0.2 / 9)


def test_uniform_flip_identity_and_chance():
    assert np.array_equal(make_uniform_flip(2, 1.0).entries, np.eye(2))
    chance = make_uniform_flip(2, 0.5)
    assert np.all(chance.entries == 0.5)
    assert not analyze(chance).is_full_rank


@pytest.mark.parametrize("m,pi", [(1, 0.5), (0, 0.5), (2, -0.01), (2, 1.01)])
def test_uniform_flip_rejects_bad_args(m, pi):
    with pytest.raises(InvalidArgumentError):
        make_uniform_flip(m, pi)


def test_confusion_matrix_validation():
    with pytest.raises(InvalidArgumentError):
        ConfusionMatrix(m=2, entries=np.array([[0.7, 0.7], [0.5, 0.5]]))
    with pytest.raises(InvalidArgumentError):
        ConfusionMatrix(m=2, entries=np.array([[1.2, -0.2], [0.5, 0.5]]))
    with pytest.raises(InvalidArgumentError):
        ConfusionMatrix(m=3, entries=np.eye(2))


def test_analyze_two_by_two_hand_inverse():
    # direct 2x2 inversion: [[0.8,0.2],[0.2,0.8]]^-1 = 1/0.6*[[0.8,-0.2],[-0.2,0.8]]
    a = analyze(make_uniform_flip(2, 0.8))
    assert a.is_full_rank
    assert np.allclose(a.inverse, [[4 / 3, -1 / 3], [-1 / 3, 4 / 3]], atol=1e-12)
    assert a.max_norm_inv == pytest.approx(5 / 3, abs=1e-12)


def test_analyze_identity():
    a = analyze(ConfusionMatrix(m=4, entries=np.eye(4)))
    assert a.max_norm_inv == pytest.approx(1.0, abs=1e-15)
    assert a.is_diagonally_dominant


def test_analyze_m10_closed_form():
    # closed form: inverse of (pi - q) I + q J is a I + b J with
    # a = 1/(pi - q), b = (1 - a)/m, q = (1 - pi)/(m - 1)
    m, pi = 10, 0.8
    q = (1 - pi) / (m - 1)
    a_coef = 1 / (pi - q)
    b_coef = (1 - a_coef) / m
    expected = np.max(np.abs(a_coef * np.eye(m) + b_coef).sum(axis=1))
    got = analyze(make_uniform_flip(m, pi)).max_norm_inv
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(53 / 35, rel=1e-12)  # = 1.5142857142857142
    assert got == pytest.approx(1.5143, abs=5e-5)


@pytest.mark.parametrize("m", [2, 3, 4, 5, 6])
def test_full_rank_lost_exactly_at_chance_level(m):
    assert not analyze(make_uniform_flip(m, 1 / m)).is_full_rank
    assert analyze(make_uniform_flip(m, 1 / m + 1e-6)).is_full_rank
    assert analyze(make_uniform_flip(m, 1 / m - 1e-6)).is_full_rank


@given(st.integers(0, 10**6), st.integers(2, 6))
@settings(max_examples=60, deadline=None)
def test_analyze_matches_numpy_inverse(seed, m):
    rng = np.random.default_rng(seed)
    w = rng.random((m, m)) + 0.3 * np.eye(m)
    c = ConfusionMatrix(m=m, entries=w / w.sum(axis=1, keepdims=True))
    a = analyze(c)
    assert a.is_full_rank
    assert np.allclose(a.inverse, np.linalg.inv(c.entries), atol=1e-9)
    assert np.allclose(c.entries @ a.inverse, np.eye(m), atol=1e-8)
    assert a.max_norm_inv >= 1.0 - 1e-12


def test_analyze_dominance_flag():
    assert analyze(make_uniform_flip(3, 0.7)).is_diagonally_dominant
    assert not analyze(make_uniform_flip(3, 1 / 3)).is_diagonally_dominant
    assert not analyze(make_uniform_flip(3, 0.2)).is_diagonally_dominant


def test_corrupt_identity_channel_is_noop():
    c = make_uniform_flip(4, 1.0)
    rng = np.random.default_rng(0)
    assert all(corrupt(3, c, rng) == 3 for _ in range(50))


def test_corrupt_rejects_out_of_range_label():
    c = make_uniform_flip(3, 0.8)
    with pytest.raises(InvalidArgumentError):
        corrupt(3, c, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        corrupt(-1, c, np.random.default_rng(0))


def test_corrupt_deterministic_under_seed():
    c = make_uniform_flip(5, 0.6)
    draws1 = [corrupt(2, c, np.random.default_rng(42)) for _ in range(1)]
    g1, g2 = np.random.default_rng(7), np.random.default_rng(7)
    seq1 = [corrupt(1, c, g1) for _ in range(200)]
    seq2 = [corrupt(1, c, g2) for _ in range(200)]
    assert seq1 == seq2
    assert draws1 == [corrupt(2, c, np.random.default_rng(42))]


def test_corrupt_frequency_matches_row():
    # binomial 3-sigma band at n draws: pi +- 3*sqrt(pi(1-pi)/n)
    c = make_uniform_flip(10, 0.8)
    n = 10**6
    got = corrupt_many(np.ones(n, dtype=int), c, np.random.default_rng(123))
    freq = float(np.mean(got == 1))
    assert abs(freq - 0.8) <= 0.002
    n_small = 10**4
    rng = np.random.default_rng(9)
    freq_scalar = np.mean([corrupt(1, c, rng) == 1 for _ in range(n_small)])
    assert abs(freq_scalar - 0.8) <= 3 * np.sqrt(0.8 * 0.2 / n_small)


def test_constant_channel_ignores_input_label():
    row = np.array([0.1, 0.5, 0.4])
    c = ConfusionMatrix(m=3, entries=np.tile(row, (3, 1)))
    for y_a, y_b in [(0, 1), (0, 2), (1, 2)]:
        ga, gb = np.random.default_rng(11), np.random.default_rng(11)
        assert [corrupt(y_a, c, ga) for _ in range(100)] == [
            corrupt(y_b, c, gb) for _ in range(100)
        ]


def test_push_forward_identity_and_hand_example():
    p = FiniteJoint(support_size=1, m=2, probs=np.array([[1.0, 0.0]]))
    ident = make_uniform_flip(2, 1.0)
    assert np.array_equal(push_forward(p, ident).probs, p.probs)
    flipped = push_forward(p, make_uniform_flip(2, 0.8))
    assert np.allclose(flipped.probs, [[0.8, 0.2]], atol=1e-15)


def test_push_forward_shape_mismatch():
    p = FiniteJoint(support_size=1, m=2, probs=np.array([[0.5, 0.5]]))
    with pytest.raises(InvalidArgumentError):
        push_forward(p, make_uniform_flip(3, 0.9))


@given(st.integers(0, 10**6), st.integers(2, 5), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_push_forward_preserves_mass_and_conditionals(seed, m, support):
    rng = np.random.default_rng(seed)
    w = rng.random((support, m)) + 0.01
    p = FiniteJoint(support_size=support, m=m, probs=w / w.sum())
    cw = rng.random((m, m)) + 0.1
    c = ConfusionMatrix(m=m, entries=cw / cw.sum(axis=1, keepdims=True))
    pt = push_forward(p, c)
    assert np.all(pt.probs >= 0)
    assert pt.probs.sum() == pytest.approx(1.0, abs=1e-12)
    # per-x conditional label vectors transform by C^T
    for x in range(support):
        cond = p.probs[x] / p.probs[x].sum()
        cond_t = pt.probs[x] / pt.probs[x].sum()
        assert np.allclose(cond_t, c.entries.T @ cond, atol=1e-12)


def test_push_forward_constant_channel_forgets_labels():
    row = np.array([0.2, 0.3, 0.5])
    c = ConfusionMatrix(m=3, entries=np.tile(row, (3, 1)))
    rng = np.random.default_rng(5)
    w = rng.random((4, 3))
    p = FiniteJoint(support_size=4, m=3, probs=w / w.sum())
    pt = push_forward(p, c)
    assert np.allclose(pt.probs.sum(axis=0), row, atol=1e-12)


def test_json_roundtrip_and_load_validation():
    c = make_uniform_flip(3, 0.75)
    again = ConfusionMatrix.from_json(c.to_json())
    assert np.array_equal(again.entries, c.entries)
    doc = json.loads(c.to_json())
    doc["rows"][0][0] = 0.9  # row no longer sums to 1
    with pytest.raises(InvalidArgumentError):
        ConfusionMatrix.from_json(json.dumps(doc))
