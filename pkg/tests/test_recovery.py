import numpy as np
import pytest

from ncgl.errors import InvalidArgumentError
from ncgl.models import GeneratorParams, init_generator
from ncgl.recovery import RecoveryConfig, recover_label, recover_label_batch


def _constant_generator(prototypes: np.ndarray, d_z: int = 2) -> GeneratorParams:
    """G(z;y) = prototypes[y] exactly: the z block of the single layer is 0."""
    m, d_x = prototypes.shape
    w = np.zeros((d_z + m, d_x))
    w[d_z:, :] = prototypes
    return GeneratorParams(d_z=d_z, m=m, d_x=d_x, hidden=(),
                           weights={"w0": w, "b0": np.zeros(d_x)})


def _linear_generator(means: np.ndarray, scale: float, d_z: int) -> GeneratorParams:
    """G(z;y) = scale*z + means[y] (requires d_z == d_x)."""
    m, d_x = means.shape
    assert d_z == d_x
    w = np.zeros((d_z + m, d_x))
    w[:d_z, :] = scale * np.eye(d_z)
    w[d_z:, :] = means
    return GeneratorParams(d_z=d_z, m=m, d_x=d_x, hidden=(),
                           weights={"w0": w, "b0": np.zeros(d_x)})


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        RecoveryConfig(restarts=0)
    with pytest.raises(InvalidArgumentError):
        RecoveryConfig(steps=0)
    with pytest.raises(InvalidArgumentError):
        RecoveryConfig(tie_break="random")
    assert RecoveryConfig().tie_break == "lowest-index"


def test_constant_generator_exact_recovery():
    proto = np.array([[2.0, 0.0], [0.0, 2.0], [-2.0, -2.0]])
    gen = _constant_generator(proto)
    cfg = RecoveryConfig(restarts=2, steps=5)
    # z has zero gradient, so residuals are exactly ||proto[y] - x||^2
    label, res = recover_label(proto[2], gen, cfg, np.random.default_rng(0))
    assert label == 2
    assert res[2] == 0.0
    expected = ((proto - proto[2]) ** 2).sum(axis=1)
    assert np.allclose(res, expected, atol=1e-12)


def test_tie_breaks_to_lowest_index():
    proto = np.array([[1.0, 0.0], [-1.0, 0.0]])
    gen = _constant_generator(proto)
    cfg = RecoveryConfig(restarts=1, steps=3)
    # x equidistant from both prototypes -> residuals tie exactly
    label, res = recover_label(np.zeros(2), gen, cfg, np.random.default_rng(1))
    assert res[0] == res[1]
    assert label == 0


def test_linear_generator_recovers_noisy_samples():
    rng = np.random.default_rng(7)
    means = np.array([[1.0, 0.0], [-0.5, 0.9], [-0.5, -0.9]])
    gen = _linear_generator(means, scale=0.05, d_z=2)
    true = rng.integers(0, 3, size=12)
    x = means[true] + 0.03 * rng.standard_normal((12, 2))
    labels, best = recover_label_batch(x, gen, RecoveryConfig(restarts=2, steps=150),
                                       rng)
    assert np.array_equal(labels, true)
    # the true class can absorb the noise into z; others cannot get close
    assert best[np.arange(12), true].max() < 1e-3


def test_argmin_contract_and_shapes():
    rng = np.random.default_rng(3)
    gen = init_generator(d_z=2, m=4, d_x=3, hidden=(8,), rng=rng)
    x = rng.standard_normal((6, 3))
    labels, best = recover_label_batch(x, gen, RecoveryConfig(restarts=2, steps=20),
                                       rng)
    assert labels.shape == (6,) and best.shape == (6, 4)
    assert np.all(best[np.arange(6), labels] <= best.min(axis=1) + 1e-15)


def test_monotone_in_restarts_same_stream():
    rng = np.random.default_rng(5)
    gen = init_generator(d_z=3, m=3, d_x=2, hidden=(8,), rng=rng)
    x = rng.standard_normal((5, 2))
    _, best1 = recover_label_batch(x, gen, RecoveryConfig(restarts=1, steps=40),
                                   np.random.default_rng(11))
    _, best4 = recover_label_batch(x, gen, RecoveryConfig(restarts=4, steps=40),
                                   np.random.default_rng(11))
    assert np.all(best4 <= best1 + 1e-12)


def test_deterministic_under_seed():
    rng = np.random.default_rng(9)
    gen = init_generator(d_z=2, m=3, d_x=2, hidden=(8,), rng=rng)
    x = rng.standard_normal((4, 2))
    out1 = recover_label_batch(x, gen, RecoveryConfig(restarts=2, steps=30),
                               np.random.default_rng(21))
    out2 = recover_label_batch(x, gen, RecoveryConfig(restarts=2, steps=30),
                               np.random.default_rng(21))
    assert np.array_equal(out1[0], out2[0])
    assert np.array_equal(out1[1], out2[1])


def test_single_sample_matches_batch_of_one():
    rng = np.random.default_rng(13)
    gen = init_generator(d_z=2, m=3, d_x=2, hidden=(4,), rng=rng)
    x = rng.standard_normal(2)
    cfg = RecoveryConfig(restarts=2, steps=25)
    label_s, res_s = recover_label(x, gen, cfg, np.random.default_rng(2))
    labels_b, res_b = recover_label_batch(x[None, :], gen, cfg,
                                          np.random.default_rng(2))
    assert label_s == labels_b[0]
    assert np.array_equal(res_s, res_b[0])


def test_dimension_mismatch_rejected():
    rng = np.random.default_rng(0)
    gen = init_generator(d_z=2, m=2, d_x=3, hidden=(4,), rng=rng)
    cfg = RecoveryConfig(restarts=1, steps=5)
    with pytest.raises(InvalidArgumentError):
        recover_label_batch(np.zeros((2, 4)), gen, cfg, rng)
    with pytest.raises(InvalidArgumentError):
        recover_label(np.zeros((2, 3)), gen, cfg, rng)
