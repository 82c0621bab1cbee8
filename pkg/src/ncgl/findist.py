"""Exact divergences and discriminator-class distances on finite joints.

Everything here is brute-force-exact over a |X| x m joint mass table: total
variation, KL (nats), Jensen-Shannon, the bounded-class IPM, its image under a
label-mixing matrix T, and the slab-constrained box class used by the
counterexample constructions.  These are the oracles every theory check is
measured against, so no stochastic shortcuts: the only sampling lives in
empirical().
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidArgumentError

MASS_TOL = 1e-12

_DIVERGENCES = ("TV", "KL", "JS")


@dataclass
class FiniteJoint:
    """A joint distribution over |X| support points and m labels.

    probs[x, y] >= 0 and the table sums to 1 within 1e-12.  Support points are
    bare indices; any geometry they might carry lives elsewhere.
    """

    support_size: int
    m: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (self.support_size, self.m):
            raise InvalidArgumentError(
                f"probs must be {self.support_size}x{self.m}, got {p.shape}"
            )
        if np.any(p < 0.0):
            raise InvalidArgumentError("joint masses must be non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidArgumentError(f"total mass must be 1, got {total!r}")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    def to_json(self) -> str:
        return json.dumps(
            {"support": self.support_size, "m": self.m, "probs": self.probs.tolist()}
        )

    @staticmethod
    def from_json(text: str) -> "FiniteJoint":
        doc = json.loads(text)
        return FiniteJoint(
            support_size=int(doc["support"]),
            m=int(doc["m"]),
            probs=np.asarray(doc["probs"], dtype=np.float64),
        )


@dataclass
class ConstrainedBoxClass:
    """Box-valued discriminators d(x) in [c1, c2]^m with a per-x slab.

    The class is { D : |w(x) . D(x)| <= epsilon for all x }; epsilon = inf
    recovers the plain bounded class.  slab_vectors has one row per support
    point.
    """

    c1: float
    c2: float
    slab_vectors: np.ndarray
    epsilon: float

    def __post_init__(self):
        if self.c1 > self.c2:
            raise InvalidArgumentError(f"need c1 <= c2, got ({self.c1}, {self.c2})")
        if self.epsilon < 0:
            raise InvalidArgumentError(f"epsilon must be >= 0, got {self.epsilon}")
        object.__setattr__(
            self, "slab_vectors", np.asarray(self.slab_vectors, dtype=np.float64)
        )


def _check_same_shape(p: FiniteJoint, q: FiniteJoint):
    if p.support_size != q.support_size or p.m != q.m:
        raise InvalidArgumentError(
            f"shape mismatch: ({p.support_size},{p.m}) vs ({q.support_size},{q.m})"
        )


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    # natural log, with the 0 log 0 = 0 convention
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        raise DomainError("KL undefined: q has a zero where p has mass")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def divergence(p: FiniteJoint, q: FiniteJoint, kind: str) -> float:
    """TV, KL (nats), or JS between two finite joints of the same shape."""
    _check_same_shape(p, q)
    if kind not in _DIVERGENCES:
        raise InvalidArgumentError(f"kind must be one of {_DIVERGENCES}, got {kind!r}")
    a, b = p.probs, q.probs
    if kind == "TV":
        return 0.5 * float(np.abs(a - b).sum())
    if kind == "KL":
        return _kl(a, b)
    mid = 0.5 * (a + b)
    return 0.5 * _kl(a, mid) + 0.5 * _kl(b, mid)


def bounded_class_distance(p: FiniteJoint, q: FiniteJoint, c1: float, c2: float) -> float:
    """Exact IPM over all [c1, c2]-bounded per-(x,y) discriminators.

    Equals (c2-c1)/2 * sum_x ||P(x,.) - Q(x,.)||_1 = (c2-c1) * TV(P,Q).
    """
    _check_same_shape(p, q)
    if c1 > c2:
        raise InvalidArgumentError(f"need c1 <= c2, got ({c1}, {c2})")
    return (c2 - c1) / 2.0 * float(np.abs(p.probs - q.probs).sum())


def transformed_distance(
    p: FiniteJoint, q: FiniteJoint, t: np.ndarray, c1: float, c2: float
) -> float:
    """Distance over the bounded class with per-label outputs mixed through T.

    Returns (c2-c1)/2 * sum_x ||T^T (P(x,.) - Q(x,.))||_1 — for a row-stochastic
    T this equals the bounded-class distance between the push-forwards.
    """
    _check_same_shape(p, q)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (p.m, p.m):
        raise InvalidArgumentError(f"T must be {p.m}x{p.m}, got {t.shape}")
    if c1 > c2:
        raise InvalidArgumentError(f"need c1 <= c2, got ({c1}, {c2})")
    diff = (p.probs - q.probs) @ t  # row u(x)^T T == (T^T u(x))^T
    return (c2 - c1) / 2.0 * float(np.abs(diff).sum())


def _box_argmax(u: np.ndarray, c1: float, c2: float) -> np.ndarray:
    """Unconstrained maximizer of u . d over the box (ties to c1)."""
    return np.where(u > 0.0, c2, c1)


def _slab_max_one_point(u: np.ndarray, w: np.ndarray, c1: float, c2: float, eps: float) -> float:
    """max u . d  s.t.  d in [c1,c2]^m, |w . d| <= eps.

    Solved by bisecting the scalar dual multiplier mu of the active slab side:
    d(mu) maximizes (u - mu*s*w) . d over the box, and h(mu) = s * w . d(mu) is
    non-increasing, so 60 halvings pin mu to double precision.  A final exact
    fix-up distributes the slab budget over the coordinates where u - mu*s*w
    crosses zero (on those, the objective trades at exactly rate mu, so any
    feasible split is optimal).
    """
    d_free = _box_argmax(u, c1, c2)
    if not math.isfinite(eps) or np.all(w == 0.0):
        return float(u @ d_free)
    if abs(float(w @ d_free)) <= eps:
        return float(u @ d_free)
    s = math.copysign(1.0, float(w @ d_free))
    ws = s * w

    def d_of(mu: float) -> np.ndarray:
        return _box_argmax(u - mu * ws, c1, c2)

    lo, hi = 0.0, float(np.abs(u).sum()) / max(eps, 1e-12) + 1.0
    for _ in range(200):
        if float(ws @ d_of(hi)) <= eps:
            break
        hi *= 2.0
    else:
        raise InvalidArgumentError("slab constraint infeasible over the box")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if float(ws @ d_of(mid)) > eps:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)

    # exact fix-up: non-critical coordinates take their sign-rule value; the
    # critical ones (reduced cost ~ 0) absorb the remaining slab budget
    reduced = u - mu * ws
    scale = max(float(np.abs(u).max(initial=0.0)), mu * float(np.abs(ws).max(initial=0.0)), 1.0)
    crit = np.abs(reduced) <= 1e-9 * scale
    d = _box_argmax(reduced, c1, c2)
    budget = eps - float(ws[~crit] @ d[~crit])
    if np.any(crit):
        wc = ws[crit]
        lo_contrib = np.minimum(wc * c1, wc * c2)
        hi_contrib = np.maximum(wc * c1, wc * c2)
        target = min(max(budget, float(lo_contrib.sum())), float(hi_contrib.sum()))
        alloc = lo_contrib.copy()
        surplus = target - float(lo_contrib.sum())
        for i in range(len(wc)):
            room = hi_contrib[i] - lo_contrib[i]
            take = min(surplus, room)
            alloc[i] += take
            surplus -= take
            if surplus <= 0.0:
                break
        d_crit = np.where(wc != 0.0, alloc / np.where(wc == 0.0, 1.0, wc), _box_argmax(u[crit], c1, c2))
        d[crit] = np.clip(d_crit, c1, c2)
    return float(u @ d)


def constrained_class_distance(p: FiniteJoint, q: FiniteJoint, cls: ConstrainedBoxClass) -> float:
    """sup over the slab-constrained box class of E_P[D] - E_Q[D].

    Decomposes over support points; each one is a tiny LP solved exactly by
    dual bisection (see _slab_max_one_point).
    """
    _check_same_shape(p, q)
    if cls.slab_vectors.shape != (p.support_size, p.m):
        raise InvalidArgumentError(
            f"slab_vectors must be {p.support_size}x{p.m}, got {cls.slab_vectors.shape}"
        )
    diff = p.probs - q.probs
    total = 0.0
    for x in range(p.support_size):
        total += _slab_max_one_point(diff[x], cls.slab_vectors[x], cls.c1, cls.c2, cls.epsilon)
    return total


def empirical(p: FiniteJoint, n: int, rng: np.random.Generator) -> FiniteJoint:
    """Normalized histogram of n i.i.d. draws from p, on the same support."""
    if n < 1:
        raise InvalidArgumentError(f"sample count must be >= 1, got {n}")
    counts = rng.multinomial(n, p.probs.ravel())
    return FiniteJoint(
        support_size=p.support_size, m=p.m, probs=counts.reshape(p.probs.shape) / n
    )
