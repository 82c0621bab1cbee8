"""Numerical verification of the channel-distance theory.

Each check here evaluates exact quantities from findist on both sides of a
claimed inequality (or equality) and reports slack.  Nothing is proved; the
point is that every claim is *executable* and fails loudly on violation.

Conventions: kappa denotes the max row absolute sum of C^-1 (+inf when C is
rank-deficient); all bound slacks use the fixed tolerance 1e-9.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import findist
from .channel import ConfusionMatrix, analyze, push_forward
from .errors import DegenerateInstanceError, InvalidArgumentError, PreconditionError
from .findist import ConstrainedBoxClass, FiniteJoint

SLACK_TOL = 1e-9


@dataclass
class BoundReport:
    """One sandwich check lhs <= mid <= rhs with signed slacks.

    slack_lower = mid - lhs, slack_upper = rhs - mid; the ok flags are the
    slacks tested against -1e-9.
    """

    lower_ok: bool
    upper_ok: bool
    lhs: float
    mid: float
    rhs: float
    slack_lower: float
    slack_upper: float

    @staticmethod
    def of(lhs: float, mid: float, rhs: float) -> "BoundReport":
        sl, su = mid - lhs, rhs - mid
        return BoundReport(
            lower_ok=sl >= -SLACK_TOL,
            upper_ok=su >= -SLACK_TOL,
            lhs=lhs,
            mid=mid,
            rhs=rhs,
            slack_lower=sl,
            slack_upper=su,
        )

    def to_dict(self) -> dict:
        return {
            "lower_ok": self.lower_ok,
            "upper_ok": self.upper_ok,
            "lhs": self.lhs,
            "mid": self.mid,
            "rhs": self.rhs,
            "slack_lower": self.slack_lower,
            "slack_upper": self.slack_upper,
        }


def _require_full_rank(c: ConfusionMatrix) -> float:
    a = analyze(c)
    if not a.is_full_rank:
        raise PreconditionError("channel is rank-deficient; bounds are vacuous (kappa = inf)")
    return a.max_norm_inv


def check_thm1(p: FiniteJoint, q: FiniteJoint, c: ConfusionMatrix) -> tuple[BoundReport, BoundReport]:
    """TV and JS sandwich bounds between clean and corrupted pairs.

    TV:  TV(P~,Q~) <= TV(P,Q) <= kappa * TV(P~,Q~)
    JS:  JS(P~,Q~)^2 / 8 <= JS(P,Q) <= kappa * sqrt(8 * JS(P~,Q~))
    """
    kappa = _require_full_rank(c)
    pt, qt = push_forward(p, c), push_forward(q, c)
    tv_clean = findist.divergence(p, q, "TV")
    tv_noisy = findist.divergence(pt, qt, "TV")
    js_clean = findist.divergence(p, q, "JS")
    js_noisy = findist.divergence(pt, qt, "JS")
    tv_report = BoundReport.of(tv_noisy, tv_clean, kappa * tv_noisy)
    js_report = BoundReport.of(js_noisy**2 / 8.0, js_clean, kappa * math.sqrt(8.0 * js_noisy))
    return tv_report, js_report


def check_thm2_bounded(
    p: FiniteJoint, q: FiniteJoint, c: ConfusionMatrix, c1: float, c2: float
) -> BoundReport:
    """Distance sandwich for the bounded class: d(P~,Q~) <= d(P,Q) <= kappa*d(P~,Q~)."""
    kappa = _require_full_rank(c)
    pt, qt = push_forward(p, c), push_forward(q, c)
    d_noisy = findist.bounded_class_distance(pt, qt, c1, c2)
    d_clean = findist.bounded_class_distance(p, q, c1, c2)
    return BoundReport.of(d_noisy, d_clean, kappa * d_noisy)


def transform_identity_gap(
    p: FiniteJoint, q: FiniteJoint, c: ConfusionMatrix, c1: float, c2: float
) -> float:
    """|d_{C o F}(P,Q) - d_F(P~,Q~)| — the mixing/push-forward exchange identity."""
    pt, qt = push_forward(p, c), push_forward(q, c)
    lhs = findist.transformed_distance(p, q, c.entries, c1, c2)
    rhs = findist.bounded_class_distance(pt, qt, c1, c2)
    return abs(lhs - rhs)


def _pair_from_difference(u: np.ndarray, m: int) -> tuple[FiniteJoint, FiniteJoint]:
    """Two-point-support pair with (P-Q)(x1,.) = u and (P-Q)(x2,.) = -u.

    Base measure is uniform on the 2m cells; u/2 is added on x1 (subtracted on
    x2) for P and the reverse for Q, so both rows stay distributions.
    """
    base = np.full((2, m), 1.0 / (2 * m))
    delta = np.vstack([u / 2.0, -u / 2.0])
    # clip exact-boundary roundoff (order 1e-16) so validation sees true zeros
    return (
        FiniteJoint(support_size=2, m=m, probs=np.maximum(base + delta, 0.0)),
        FiniteJoint(support_size=2, m=m, probs=np.maximum(base - delta, 0.0)),
    )


def witness_tight(
    c: ConfusionMatrix, eps: float, side: str
) -> tuple[FiniteJoint, FiniteJoint]:
    """Construct a |X|=2 pair achieving equality in the distance sandwich.

    side="lower": difference eps*ones per support point — the corrupted and
    clean bounded-class distances coincide for every row-stochastic C.
    side="upper": difference eps * C^-T e_j with j the max-abs-row of C^-1, so
    the clean distance is exactly kappa times the corrupted one (C^-T's
    induced 1-norm is attained at a standard basis vector; a +-1 sign vector
    cannot attain it in general).
    """
    if side not in ("lower", "upper"):
        raise InvalidArgumentError(f"side must be 'lower' or 'upper', got {side!r}")
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    m = c.m
    if side == "lower":
        u = eps * np.ones(m)
    else:
        a = analyze(c)
        if not a.is_full_rank:
            raise PreconditionError("upper witness needs a full-rank channel")
        j_star = int(np.argmax(np.abs(a.inverse).sum(axis=1)))
        u = eps * a.inverse[j_star]  # C^-T e_j is the j-th row of C^-1
    eps_max = 1.0 / (m * float(np.abs(u / eps).max()))
    if float(np.abs(u).max()) > 1.0 / m + 1e-15:
        raise InvalidArgumentError(
            f"eps too large for a non-negative construction; maximal feasible eps is {eps_max!r}"
        )
    return _pair_from_difference(u, m)


def build_counterexample(
    p: FiniteJoint, q: FiniteJoint, c: ConfusionMatrix, eps: float
) -> tuple[float, float]:
    """Slab classes on which corrupted and clean distances diverge arbitrarily.

    The first class pins |D(x) . C^T u(x)| <= eps (so the corrupted distance is
    G(eps) while the clean one stays Theta(1)); the second pins the raw
    difference (the mirror image).  Returns the two ratios
      gap_a = d_A(P,Q) / max(d_A(P~,Q~), eps),
      gap_b = d_B(P~,Q~) / max(d_B(P,Q), eps).
    """
    diff = p.probs - q.probs
    if float(np.abs(diff).max()) == 0.0:
        raise DegenerateInstanceError("P = Q: counterexample gaps are undefined")
    cu = diff @ c.entries.T  # rows C u(x)
    mass = p.probs.sum(axis=1) + q.probs.sum(axis=1)
    angle_ok = False
    for x in range(p.support_size):
        u = diff[x]
        nu, ncu = float(np.linalg.norm(u)), float(np.linalg.norm(cu[x]))
        if mass[x] <= 0.0 or nu == 0.0 or ncu == 0.0:
            continue
        cosang = float(np.clip(u @ cu[x] / (nu * ncu), -1.0, 1.0))
        if math.acos(abs(cosang)) > 1e-6:
            angle_ok = True
            break
    if not angle_ok:
        raise PreconditionError(
            "difference vectors are parallel to their channel images everywhere; "
            "the slab construction cannot separate the distances"
        )
    w_mixed = diff @ c.entries  # rows C^T u(x)
    cls_a = ConstrainedBoxClass(c1=-1.0, c2=1.0, slab_vectors=w_mixed, epsilon=eps)
    cls_b = ConstrainedBoxClass(c1=-1.0, c2=1.0, slab_vectors=diff, epsilon=eps)
    pt, qt = push_forward(p, c), push_forward(q, c)
    gap_a = findist.constrained_class_distance(p, q, cls_a) / max(
        findist.constrained_class_distance(pt, qt, cls_a), eps
    )
    gap_b = findist.constrained_class_distance(pt, qt, cls_b) / max(
        findist.constrained_class_distance(p, q, cls_b), eps
    )
    return gap_a, gap_b


def counterexample_instance(
    rng: np.random.Generator,
    m: int | None = None,
    gap_floor: float = 10.0,
    eps: float = 0.01,
    max_attempts: int = 200,
) -> tuple[FiniteJoint, FiniteJoint, ConfusionMatrix]:
    """Search for a pair + channel whose slab-class gaps both clear gap_floor.

    The separation is an existence statement, so the demonstration instance is
    found by rejection: draw a two-point pair whose per-point difference is a
    random sign pattern scaled to 90% of the non-negativity cap, together with
    a random full-rank channel, and keep the first draw whose gaps at `eps`
    both reach `gap_floor`.  Draws where the difference is nearly parallel to
    its channel image are rejected (there the slabs pin the clean and
    corrupted distances together and no instance of this shape separates
    them); roughly half of raw draws survive, so exhausting the attempt cap
    signals a broken distance oracle rather than bad luck.
    """
    for _ in range(max_attempts):
        mi = m if m is not None else int(rng.integers(2, 6))
        c = random_full_rank_channel(rng, mi)
        u = rng.uniform(0.4, 1.0, mi) * rng.choice([-1.0, 1.0], mi)
        u *= 0.9 / (mi * float(np.abs(u).max()))
        p, q = _pair_from_difference(u, mi)
        try:
            ga, gb = build_counterexample(p, q, c, eps)
        except PreconditionError:
            continue
        if ga >= gap_floor and gb >= gap_floor:
            return p, q, c
    raise RuntimeError(
        f"no instance with both gaps >= {gap_floor} in {max_attempts} attempts"
    )


@dataclass
class ConvergenceTable:
    """Mean |d(P_n,Q_n) - d(P,Q)| per sample count, plus a monotonicity flag."""

    ns: list[int]
    mean_devs: list[float]
    monotone_ok: bool


def empirical_convergence(
    p: FiniteJoint,
    q: FiniteJoint,
    n_list: list[int],
    trials: int,
    rng: np.random.Generator,
    c1: float = -1.0,
    c2: float = 1.0,
) -> ConvergenceTable:
    """Bounded-class distance of empirical pairs versus the population value.

    The sequence of mean deviations should be non-increasing up to Monte-Carlo
    noise; the flag allows a 2x slack between consecutive means.
    """
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgumentError("n_list must be non-empty and strictly increasing")
    d_true = findist.bounded_class_distance(p, q, c1, c2)
    means = []
    for n in n_list:
        devs = []
        for _ in range(trials):
            pn = findist.empirical(p, n, rng)
            qn = findist.empirical(q, n, rng)
            devs.append(abs(findist.bounded_class_distance(pn, qn, c1, c2) - d_true))
        means.append(float(np.mean(devs)))
    monotone = all(b <= 2.0 * a for a, b in zip(means, means[1:]))
    return ConvergenceTable(ns=list(n_list), mean_devs=means, monotone_ok=monotone)


def random_joint(rng: np.random.Generator, support_size: int, m: int) -> FiniteJoint:
    """Strictly positive random joint (uniform cell weights, normalized)."""
    w = rng.random((support_size, m)) + 0.05
    return FiniteJoint(support_size=support_size, m=m, probs=w / w.sum())


def random_full_rank_channel(rng: np.random.Generator, m: int) -> ConfusionMatrix:
    """Random row-stochastic channel with a mild diagonal boost.

    The boost keeps conditioning moderate so inverse-based equalities are
    checkable at 1e-9; resampling guards the (measure-zero) singular case.
    """
    for _ in range(100):
        w = rng.random((m, m)) + 0.5 * np.eye(m)
        c = ConfusionMatrix(m=m, entries=w / w.sum(axis=1, keepdims=True))
        if analyze(c).is_full_rank:
            return c
    raise RuntimeError("failed to draw a full-rank channel in 100 attempts")
