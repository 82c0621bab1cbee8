import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncgl.errors import InvalidArgumentError
from ncgl.models import (
    ClassifierParams,
    ProjDiscParams,
    classifier_predict,
    disc_forward,
    gen_forward,
    init_classifier,
    init_disc,
    init_generator,
    one_hot,
    project_constraints,
    train_classifier,
)


def test_one_hot_basic_and_validation():
    assert np.array_equal(one_hot(np.array([1, 0]), 3),
                          [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(InvalidArgumentError):
        one_hot(np.array([3]), 3)
    with pytest.raises(InvalidArgumentError):
        one_hot(np.array([-1]), 3)


def test_generator_shapes_and_determinism():
    rng = np.random.default_rng(0)
    p = init_generator(d_z=5, m=3, d_x=2, hidden=(16,), rng=rng)
    z = rng.standard_normal((7, 5))
    y = np.array([0, 1, 2, 0, 1, 2, 0])
    out = gen_forward(p, z, y)
    assert out.shape == (7, 2)
    assert np.array_equal(out, gen_forward(p, z, y))
    # label matters
    assert not np.allclose(out, gen_forward(p, z, (y + 1) % 3))


def test_disc_zero_projection_params_outputs_zero():
    rng = np.random.default_rng(1)
    p = init_disc(d_x=2, m=3, hidden=(8,), rng=rng, d_feat=4, d_feat2=4)
    w = dict(p.weights)
    w["V"] = np.zeros_like(w["V"])
    w["v"] = np.zeros_like(w["v"])
    w["c"] = np.asarray(0.0)
    from dataclasses import replace
    p0 = replace(p, weights=w)
    x = rng.standard_normal((5, 2))
    out = disc_forward(x, np.array([0, 1, 2, 1, 0]), p0)
    assert np.array_equal(out, np.zeros(5))


def test_disc_label_permutation_permutes_outputs():
    # with the psi2 head silenced, y enters only by selecting a row of V
    rng = np.random.default_rng(2)
    p = init_disc(d_x=2, m=3, hidden=(8,), rng=rng, d_feat=4, d_feat2=4)
    from dataclasses import replace
    w = dict(p.weights)
    w["psi2.w"] = np.zeros_like(w["psi2.w"])
    w["psi2.b"] = np.zeros_like(w["psi2.b"])
    p = replace(p, weights=w)
    perm = np.array([2, 0, 1])
    w2 = dict(p.weights)
    w2["V"] = w2["V"][perm]
    p_perm = replace(p, weights=w2)
    x = rng.standard_normal((6, 2))
    y = np.array([0, 1, 2, 0, 1, 2])
    assert np.allclose(disc_forward(x, perm[y], p), disc_forward(x, y, p_perm), atol=1e-14)


def test_disc_hand_evaluated_tiny_net():
    # d_x=1, one hidden unit, one feature per head, m=2: everything scalar
    from dataclasses import replace
    p = ProjDiscParams(d_x=1, m=2, d_feat=1, d_feat2=1, hidden=(1,), concat_y=False,
                       weights={})
    p.weights.update({
        "t.w0": np.array([[0.4]]), "t.b0": np.array([0.1]),
        "psi.w": np.array([[0.7]]), "psi.b": np.array([-0.2]),
        "psi2.w": np.array([[-0.5]]), "psi2.b": np.array([0.3]),
        "V": np.array([[0.9], [-0.6]]), "v": np.array([0.8]),
        "c": np.asarray(0.25),
    })
    x = np.array([[1.5]])
    t = math.tanh(1.5 * 0.4 + 0.1)
    psi = t * 0.7 - 0.2
    psi2 = t * (-0.5) + 0.3
    for label, v_row in ((0, 0.9), (1, -0.6)):
        ref = v_row * psi + 0.8 * psi2 + 0.25
        got = disc_forward(x, np.array([label]), p)
        assert abs(float(got[0]) - ref) <= 1e-12


def test_disc_concat_y_changes_trunk_input():
    rng = np.random.default_rng(3)
    p = init_disc(d_x=2, m=3, hidden=(8,), rng=rng, concat_y=True)
    x = rng.standard_normal((4, 2))
    y = np.array([0, 1, 2, 0])
    out = disc_forward(x, y, p)
    assert out.shape == (4,)
    # without projection the label still matters through the trunk
    no_proj = disc_forward(x, y, p, use_projection=False)
    no_proj_other = disc_forward(x, (y + 1) % 3, p, use_projection=False)
    assert not np.allclose(no_proj, no_proj_other)


def test_disc_rejects_bad_labels():
    rng = np.random.default_rng(4)
    p = init_disc(d_x=2, m=3, hidden=(8,), rng=rng)
    with pytest.raises(InvalidArgumentError):
        disc_forward(np.zeros((1, 2)), np.array([5]), p)


def test_project_constraints_examples():
    rng = np.random.default_rng(5)
    p = init_disc(d_x=2, m=2, hidden=(4,), rng=rng, d_feat=2, d_feat2=2)
    from dataclasses import replace
    w = dict(p.weights)
    w["V"] = np.array([[2.0, 0.5], [-0.5, -0.3]])
    w["v"] = np.array([3.0, 4.0])
    proj = project_constraints(replace(p, weights=w))
    assert np.allclose(proj.weights["V"][:, 0], [1.0, -0.25])
    assert np.allclose(proj.weights["V"][:, 1], [0.5, -0.3])  # feasible: untouched
    assert np.allclose(proj.weights["v"], [0.6, 0.8])


def test_project_constraints_idempotent_and_noop_when_feasible():
    rng = np.random.default_rng(6)
    p = init_disc(d_x=2, m=4, hidden=(4,), rng=rng)
    once = project_constraints(p)
    twice = project_constraints(once)
    assert np.array_equal(once.weights["V"], twice.weights["V"])
    assert np.array_equal(once.weights["v"], twice.weights["v"])
    from dataclasses import replace
    w = dict(p.weights)
    w["V"] = np.clip(w["V"], -0.9, 0.9)
    w["v"] = w["v"] / max(1.0, np.linalg.norm(w["v"]) * 2)
    feas = replace(p, weights=w)
    proj = project_constraints(feas)
    assert np.array_equal(proj.weights["V"], w["V"])
    assert np.array_equal(proj.weights["v"], w["v"])


@given(st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_projection_inclusion_under_unit_max_norm_maps(seed):
    # T with max-row-abs-sum 1 maps the feasible V set into itself
    rng = np.random.default_rng(seed)
    m, d = int(rng.integers(2, 6)), int(rng.integers(1, 8))
    v_mat = rng.uniform(-1.0, 1.0, size=(m, d))
    t = rng.standard_normal((m, m))
    t = t / np.abs(t).sum(axis=1, keepdims=True)  # rows scaled to abs sum 1
    mapped = t @ v_mat
    assert np.abs(mapped).max(initial=0.0) <= 1.0 + 1e-12
    proj = np.abs(mapped).max(axis=0)
    assert np.all(proj <= 1.0 + 1e-12)


def test_train_classifier_separable():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((200, 2)) * 0.2 + np.array([2.0, 0.0])
    x1 = rng.standard_normal((200, 2)) * 0.2 + np.array([-2.0, 0.0])
    x = np.vstack([x0, x1])
    y = np.array([0] * 200 + [1] * 200)
    params, acc = train_classifier(x, y, hidden=(), epochs=60, lr=0.05, seed=0)
    assert acc >= 0.99


def test_train_classifier_constant_targets():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((50, 3))
    y = np.ones(50, dtype=int)
    params, acc = train_classifier(x, y, hidden=(), epochs=20, lr=0.05, seed=0, m=2)
    assert acc == 1.0


def test_train_classifier_three_class_mixture_heldout():
    rng = np.random.default_rng(9)
    means = np.array([[2.0, 0.0], [-1.0, 1.7], [-1.0, -1.7]])
    xs, ys = [], []
    for k, mu in enumerate(means):
        xs.append(rng.standard_normal((300, 2)) * 0.3 + mu)
        ys.append(np.full(300, k))
    x, y = np.vstack(xs), np.concatenate(ys)
    order = rng.permutation(x.shape[0])
    x, y = x[order], y[order]
    params, acc = train_classifier(x[:600], y[:600], hidden=(32, 32), epochs=80,
                                   lr=0.01, seed=1)
    held = float(np.mean(classifier_predict(params, x[600:]) == y[600:]))
    assert held >= 0.95


def test_train_classifier_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        train_classifier(np.zeros((0, 2)), np.zeros(0, dtype=int), hidden=(),
                         epochs=1, lr=0.01, seed=0)
