import math

import numpy as np
import pytest

from ncgl.channel import ConfusionMatrix, analyze, make_uniform_flip, push_forward
from ncgl.errors import (
    DegenerateInstanceError,
    InvalidArgumentError,
    PreconditionError,
)
from ncgl.findist import FiniteJoint, bounded_class_distance, divergence
from ncgl.theory import (
    build_counterexample,
    check_thm1,
    check_thm2_bounded,
    counterexample_instance,
    empirical_convergence,
    random_full_rank_channel,
    random_joint,
    transform_identity_gap,
    witness_tight,
)


def _joint(rows):
    probs = np.asarray(rows, dtype=float)
    return FiniteJoint(support_size=probs.shape[0], m=probs.shape[1], probs=probs)


P_POINT = _joint([[1.0, 0.0]])
Q_POINT = _joint([[0.0, 1.0]])
FLIP = make_uniform_flip(2, 0.8)


def test_thm1_point_mass_example():
    tv, js = check_thm1(P_POINT, Q_POINT, FLIP)
    assert tv.lhs == pytest.approx(0.6, abs=1e-12)
    assert tv.mid == pytest.approx(1.0, abs=1e-12)
    assert tv.rhs == pytest.approx(5 / 3 * 0.6, abs=1e-12)
    assert tv.lower_ok and tv.upper_ok
    assert tv.slack_lower == pytest.approx(0.4)
    assert tv.slack_upper == pytest.approx(0.0, abs=1e-12)
    # js sandwich: (1/8) js_noisy^2 <= js_clean <= kappa sqrt(8 js_noisy)
    js_noisy = divergence(push_forward(P_POINT, FLIP), push_forward(Q_POINT, FLIP), "JS")
    assert js.lhs == pytest.approx(js_noisy**2 / 8, abs=1e-12)
    assert js.lhs == pytest.approx(0.00464, abs=5e-6)
    assert js.mid == pytest.approx(math.log(2), abs=1e-12)
    assert js.rhs == pytest.approx(5 / 3 * math.sqrt(8 * js_noisy), abs=1e-12)
    assert js.rhs == pytest.approx(2.069, abs=1e-3)
    assert js.lower_ok and js.upper_ok


def test_thm1_identity_channel_collapses():
    ident = make_uniform_flip(3, 1.0)
    rng = np.random.default_rng(1)
    p, q = random_joint(rng, 4, 3), random_joint(rng, 4, 3)
    tv, js = check_thm1(p, q, ident)
    assert tv.lhs == pytest.approx(tv.mid, abs=1e-12)
    assert tv.rhs == pytest.approx(tv.mid, abs=1e-12)
    assert js.lower_ok and js.upper_ok


def test_thm1_rejects_rank_deficient():
    with pytest.raises(PreconditionError):
        check_thm1(P_POINT, Q_POINT, make_uniform_flip(2, 0.5))


def test_thm1_random_suite():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = int(rng.integers(2, 6))
        support = int(rng.integers(2, 11))
        p, q = random_joint(rng, support, m), random_joint(rng, support, m)
        c = random_full_rank_channel(rng, m)
        tv, js = check_thm1(p, q, c)
        assert tv.slack_lower >= -1e-9 and tv.slack_upper >= -1e-9
        assert js.slack_lower >= -1e-9 and js.slack_upper >= -1e-9


def test_thm2_bounded_and_identity_gap():
    rep = check_thm2_bounded(P_POINT, Q_POINT, FLIP, -1.0, 1.0)
    assert rep.lhs == pytest.approx(1.2, abs=1e-12)
    assert rep.mid == pytest.approx(2.0, abs=1e-12)
    assert rep.rhs == pytest.approx(5 / 3 * 1.2, abs=1e-12)
    assert rep.lower_ok and rep.upper_ok
    assert transform_identity_gap(P_POINT, Q_POINT, FLIP, -1.0, 1.0) <= 1e-10


def test_thm2_equal_pair_all_zero():
    rep = check_thm2_bounded(P_POINT, P_POINT, FLIP, -1.0, 1.0)
    assert rep.lhs == rep.mid == rep.rhs == 0.0


def test_thm2_random_suite():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = int(rng.integers(2, 6))
        p, q = random_joint(rng, 3, m), random_joint(rng, 3, m)
        c = random_full_rank_channel(rng, m)
        rep = check_thm2_bounded(p, q, c, -1.0, 1.0)
        assert rep.slack_lower >= -1e-9 and rep.slack_upper >= -1e-9
        assert transform_identity_gap(p, q, c, -1.0, 1.0) <= 1e-10


def test_witness_lower_equality():
    p, q = witness_tight(FLIP, 0.05, "lower")
    tv_clean = divergence(p, q, "TV")
    tv_noisy = divergence(push_forward(p, FLIP), push_forward(q, FLIP), "TV")
    assert tv_clean == pytest.approx(tv_noisy, abs=1e-9)
    assert tv_clean > 0


def test_witness_upper_equality():
    kappa = analyze(FLIP).max_norm_inv
    p, q = witness_tight(FLIP, 0.05, "upper")
    tv_clean = divergence(p, q, "TV")
    tv_noisy = divergence(push_forward(p, FLIP), push_forward(q, FLIP), "TV")
    assert tv_clean == pytest.approx(kappa * tv_noisy, abs=1e-9)
    assert tv_noisy > 0


def test_witness_identity_channel_ratio_one():
    ident = make_uniform_flip(4, 1.0)
    for side in ("lower", "upper"):
        p, q = witness_tight(ident, 0.02, side)
        tv_clean = divergence(p, q, "TV")
        tv_noisy = divergence(push_forward(p, ident), push_forward(q, ident), "TV")
        assert tv_clean == pytest.approx(tv_noisy, abs=1e-12)


def test_witness_random_channels():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m = int(rng.integers(2, 7))
        c = random_full_rank_channel(rng, m)
        kappa = analyze(c).max_norm_inv
        p, q = witness_tight(c, 1e-3, "upper")
        ratio = divergence(p, q, "TV") / divergence(
            push_forward(p, c), push_forward(q, c), "TV"
        )
        assert ratio == pytest.approx(kappa, abs=1e-9)
        p, q = witness_tight(c, 1e-3, "lower")
        assert divergence(p, q, "TV") == pytest.approx(
            divergence(push_forward(p, c), push_forward(q, c), "TV"), abs=1e-9
        )


def test_witness_rejects_bad_args():
    with pytest.raises(InvalidArgumentError):
        witness_tight(FLIP, 0.05, "middle")
    with pytest.raises(InvalidArgumentError):
        witness_tight(FLIP, 0.0, "lower")
    with pytest.raises(PreconditionError):
        witness_tight(make_uniform_flip(2, 0.5), 0.05, "upper")


def test_witness_eps_too_large_reports_cap():
    with pytest.raises(InvalidArgumentError) as exc:
        witness_tight(FLIP, 0.9, "upper")
    assert "feasible eps is" in str(exc.value)
    # the reported cap should itself be feasible
    cap = float(str(exc.value).rsplit("feasible eps is ", 1)[1])
    witness_tight(FLIP, cap * 0.999, "upper")


def _counterexample_instance(seed, m=3, support=3):
    rng = np.random.default_rng(seed)
    p, q = random_joint(rng, support, m), random_joint(rng, support, m)
    c = random_full_rank_channel(rng, m)
    return p, q, c


def test_counterexample_gaps_blow_up():
    p, q, c = _counterexample_instance(43)
    ga, gb = build_counterexample(p, q, c, 0.01)
    assert ga >= 10.0 and gb >= 10.0
    prev_a, prev_b = 0.0, 0.0
    for eps in (0.1, 0.01, 0.001):
        ga, gb = build_counterexample(p, q, c, eps)
        assert ga > prev_a and gb > prev_b
        prev_a, prev_b = ga, gb


def test_counterexample_instance_search_finds_wide_gaps():
    rng = np.random.default_rng(7)
    p, q, c = counterexample_instance(rng, m=4)
    assert p.m == q.m == c.m == 4 and p.support_size == 2
    ga, gb = build_counterexample(p, q, c, 0.01)
    assert ga >= 10.0 and gb >= 10.0


def test_counterexample_instance_search_is_deterministic():
    a = counterexample_instance(np.random.default_rng(5))
    b = counterexample_instance(np.random.default_rng(5))
    assert np.array_equal(a[0].probs, b[0].probs)
    assert np.array_equal(a[2].entries, b[2].entries)


def test_counterexample_instance_search_gives_up_loudly():
    with pytest.raises(RuntimeError, match="attempts"):
        counterexample_instance(np.random.default_rng(0), gap_floor=1e9, max_attempts=3)


def test_counterexample_vacuous_constraint_is_tame():
    p, q, c = _counterexample_instance(43)
    kappa = analyze(c).max_norm_inv
    ga, gb = build_counterexample(p, q, c, 1e6)
    assert ga <= kappa and gb <= kappa


def test_counterexample_rejects_equal_pair():
    p, _, c = _counterexample_instance(43)
    with pytest.raises(DegenerateInstanceError):
        build_counterexample(p, p, c, 0.01)


def test_counterexample_rejects_parallel_difference():
    # difference vector proportional to the all-ones direction is fixed by
    # every row-stochastic channel, so no direction separation exists
    m = 3
    base = np.full((2, m), 1 / (2 * m))
    delta = np.array([[0.02, 0.02, 0.02], [-0.02, -0.02, -0.02]])
    p = _joint(base + delta)
    q = _joint(base - delta)
    c = make_uniform_flip(m, 0.8)
    with pytest.raises(PreconditionError):
        build_counterexample(p, q, c, 0.01)


def test_convergence_table_shrinks():
    rng = np.random.default_rng(21)
    p, q = random_joint(rng, 4, 3), random_joint(rng, 4, 3)
    table = empirical_convergence(p, q, [100, 10_000], trials=20, rng=rng)
    assert table.ns == [100, 10_000]
    assert table.mean_devs[1] < table.mean_devs[0]
    assert table.monotone_ok
    with pytest.raises(InvalidArgumentError):
        empirical_convergence(p, q, [100, 100], trials=5, rng=rng)


def test_random_generators_sane():
    rng = np.random.default_rng(0)
    p = random_joint(rng, 5, 4)
    assert p.probs.shape == (5, 4)
    assert np.all(p.probs > 0)
    assert p.probs.sum() == pytest.approx(1.0, abs=1e-12)
    for m in range(2, 7):
        c = random_full_rank_channel(rng, m)
        assert analyze(c).is_full_rank
