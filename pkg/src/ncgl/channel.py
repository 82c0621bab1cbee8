"""Label-noise channels: row-stochastic confusion matrices and their analysis.

A channel is an m x m row-stochastic matrix C with C[y][ytilde] the
probability that a clean label y is observed as ytilde.  The quantity that
controls everything downstream is the max row absolute sum of the inverse,
written max_norm_inv here; it is +inf when C is (numerically) rank-deficient.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

ROW_SUM_TOL = 1e-12
PIVOT_TOL = 1e-12


@dataclass
class ConfusionMatrix:
    """Row-stochastic channel over m labels.

    entries[i, j] = P(observed label j | clean label i).  Entries must lie in
    [0, 1] and each row must sum to 1 within 1e-12.
    """

    m: int
    entries: np.ndarray
    _cum_rows: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.shape != (self.m, self.m):
            raise InvalidArgumentError(
                f"confusion matrix must be {self.m}x{self.m}, got {e.shape}"
            )
        if np.any(e < -0.0) or np.any(e > 1.0 + 1e-15):
            raise InvalidArgumentError("confusion matrix entries must lie in [0, 1]")
        rowsums = e.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > ROW_SUM_TOL):
            worst = float(np.max(np.abs(rowsums - 1.0)))
            raise InvalidArgumentError(
                f"confusion matrix rows must sum to 1 (worst deviation {worst:.3e})"
            )
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    def cum_rows(self) -> np.ndarray:
        """Per-row cumulative sums, computed once and cached (for sampling)."""
        if self._cum_rows is None:
            object.__setattr__(self, "_cum_rows", np.cumsum(self.entries, axis=1))
        return self._cum_rows

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "rows": self.entries.tolist()})

    @staticmethod
    def from_json(text: str) -> "ConfusionMatrix":
        doc = json.loads(text)
        rows = np.asarray(doc["rows"], dtype=np.float64)
        return ConfusionMatrix(m=int(doc["m"]), entries=rows)


@dataclass
class ChannelAnalysis:
    """Inverse-based diagnostics of a channel.

    inverse is None and max_norm_inv is +inf when a pivot below 1e-12 is met
    during elimination (numerical rank deficiency is an outcome, not an error).
    is_diagonally_dominant means every row's strict maximum sits on the
    diagonal (the notion under which both C identifiability and the learned-M
    initialization are "dominant").
    """

    inverse: np.ndarray | None
    max_norm_inv: float
    is_full_rank: bool
    is_diagonally_dominant: bool


def make_uniform_flip(m: int, pi: float) -> ConfusionMatrix:
    """Uniform flipping channel: diagonal pi, off-diagonal (1-pi)/(m-1)."""
    if m < 2:
        raise InvalidArgumentError(f"uniform flipping needs m >= 2, got {m}")
    if not (0.0 <= pi <= 1.0):
        raise InvalidArgumentError(f"pi must lie in [0, 1], got {pi}")
    off = (1.0 - pi) / (m - 1)
    e = np.full((m, m), off)
    np.fill_diagonal(e, pi)
    return ConfusionMatrix(m=m, entries=e)


def _gauss_jordan_inverse(a: np.ndarray, pivot_tol: float) -> np.ndarray | None:
    """Invert by Gauss-Jordan with partial pivoting; None if a pivot is tiny."""
    n = a.shape[0]
    work = np.hstack([a.astype(np.float64, copy=True), np.eye(n)])
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(work[col:, col])))
        if abs(work[pivot_row, col]) < pivot_tol:
            return None
        if pivot_row != col:
            work[[col, pivot_row]] = work[[pivot_row, col]]
        work[col] /= work[col, col]
        for r in range(n):
            if r != col and work[r, col] != 0.0:
                work[r] -= work[r, col] * work[col]
    return work[:, n:]


def analyze(c: ConfusionMatrix) -> ChannelAnalysis:
    """Invert C (pivoted elimination) and report max_norm_inv = max row abs sum."""
    inv = _gauss_jordan_inverse(c.entries, PIVOT_TOL)
    diag = np.diag(c.entries)
    off_max = np.max(c.entries - np.diag(diag), axis=1)
    dominant = bool(np.all(diag > off_max))
    if inv is None:
        return ChannelAnalysis(
            inverse=None,
            max_norm_inv=float("inf"),
            is_full_rank=False,
            is_diagonally_dominant=dominant,
        )
    return ChannelAnalysis(
        inverse=inv,
        max_norm_inv=float(np.max(np.abs(inv).sum(axis=1))),
        is_full_rank=True,
        is_diagonally_dominant=dominant,
    )


def corrupt(y: int, c: ConfusionMatrix, rng: np.random.Generator) -> int:
    """Draw a corrupted label from row C_y by inverse-CDF sampling."""
    if not (0 <= y < c.m):
        raise InvalidArgumentError(f"label {y} out of range [0, {c.m})")
    u = rng.random()
    idx = int(np.searchsorted(c.cum_rows()[y], u, side="right"))
    return min(idx, c.m - 1)


def corrupt_many(labels: np.ndarray, c: ConfusionMatrix, rng: np.random.Generator) -> np.ndarray:
    """Vectorized corrupt() for a batch of labels (one uniform per sample)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= c.m):
        raise InvalidArgumentError("labels out of range")
    u = rng.random(labels.shape[0])
    rows = c.cum_rows()[labels]
    idx = (rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, c.m - 1)


def push_forward(p: "FiniteJoint", c: ConfusionMatrix) -> "FiniteJoint":
    """Corrupt the label coordinate of a finite joint: P~(x, j) = sum_y P(x, y) C[y, j]."""
    from .findist import FiniteJoint  # local import; findist depends on channel users, not vice versa

    if p.m != c.m:
        raise InvalidArgumentError(f"label-count mismatch: joint m={p.m}, channel m={c.m}")
    return FiniteJoint(support_size=p.support_size, m=p.m, probs=p.probs @ c.entries)
