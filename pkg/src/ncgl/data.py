"""Dataset synthesis, label corruption, IDX ingestion, and snapshots.

Clean labels are deliberately hard to reach from training code: training
consumes a TrainView (samples + noisy labels only), while metrics functions
take the full LabeledDataset.  Corruption draws are keyed by sample content,
not position, so shuffling before injection gives the same labels as
shuffling after.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ConfusionMatrix
from .errors import FormatError, InvalidArgumentError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class TrainView:
    """What a training variant is allowed to see."""

    x: np.ndarray
    noisy_labels: np.ndarray
    m: int


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray
    noisy_labels: np.ndarray
    m: int
    clean_labels: np.ndarray | None = None
    channel_used: ConfusionMatrix | None = None
    seed: int | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        noisy = np.asarray(self.noisy_labels, dtype=np.int64)
        if x.ndim != 2:
            raise InvalidArgumentError(f"x must be 2-D, got shape {x.shape}")
        if noisy.shape != (x.shape[0],):
            raise InvalidArgumentError(
                f"noisy labels shape {noisy.shape} != ({x.shape[0]},)"
            )
        for name, labels in (("noisy", noisy), ("clean", self.clean_labels)):
            if labels is None:
                continue
            arr = np.asarray(labels)
            if arr.size and (arr.min() < 0 or arr.max() >= self.m):
                raise InvalidArgumentError(f"{name} labels outside [0, {self.m})")
        if self.clean_labels is not None:
            clean = np.asarray(self.clean_labels, dtype=np.int64)
            if clean.shape != noisy.shape:
                raise InvalidArgumentError("clean/noisy label count mismatch")
            if self.channel_used is not None and np.array_equal(
                self.channel_used.entries, np.eye(self.m)
            ):
                if not np.array_equal(clean, noisy):
                    raise InvalidArgumentError(
                        "identity channel but noisy labels differ from clean"
                    )
            object.__setattr__(self, "clean_labels", clean)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "noisy_labels", noisy)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def train_view(self) -> TrainView:
        return TrainView(x=self.x, noisy_labels=self.noisy_labels, m=self.m)


@dataclass(frozen=True)
class MixtureSpec:
    m: int = 3
    d_x: int = 2
    sigma: float = 0.1
    radius: float = 1.0
    n_per_class: int = 2000
    means: np.ndarray | None = None

    def __post_init__(self):
        if self.m < 1 or self.d_x < 2 or self.sigma <= 0 or self.n_per_class < 0:
            raise InvalidArgumentError(
                f"bad mixture spec: m={self.m} d_x={self.d_x} "
                f"sigma={self.sigma} n_per_class={self.n_per_class}"
            )
        if self.means is None:
            angles = 2 * np.pi * np.arange(self.m) / self.m
            mu = np.zeros((self.m, self.d_x))
            mu[:, 0] = self.radius * np.cos(angles)
            mu[:, 1] = self.radius * np.sin(angles)
            object.__setattr__(self, "means", mu)
        else:
            mu = np.asarray(self.means, dtype=np.float64)
            if mu.shape != (self.m, self.d_x):
                raise InvalidArgumentError(
                    f"means must be {self.m}x{self.d_x}, got {mu.shape}"
                )
            object.__setattr__(self, "means", mu)
        if self.m > 1:
            diffs = self.means[:, None, :] - self.means[None, :, :]
            dist = np.sqrt((diffs**2).sum(axis=2))
            sep = dist[~np.eye(self.m, dtype=bool)].min()
            if sep < 4 * self.sigma:
                raise InvalidArgumentError(
                    f"class means too close: min separation {sep:.4g} < 4 sigma "
                    f"= {4 * self.sigma:.4g}"
                )


def make_mixture(spec: MixtureSpec, seed: int) -> LabeledDataset:
    """n_per_class i.i.d. Gaussians around each mean; exactly uniform classes."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D69]))
    labels = np.repeat(np.arange(spec.m), spec.n_per_class)
    x = spec.means[labels] + spec.sigma * rng.standard_normal((labels.size, spec.d_x))
    order = rng.permutation(labels.size)
    return LabeledDataset(
        x=x[order], noisy_labels=labels[order], m=spec.m,
        clean_labels=labels[order], seed=seed,
    )


def _content_uniform(seed: int, x_row: np.ndarray, label: int) -> float:
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=True))
    h.update(np.ascontiguousarray(x_row, dtype="<f8").tobytes())
    h.update(int(label).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest()[:8], "little") / 2.0**64


def inject_noise(ds: LabeledDataset, c: ConfusionMatrix, seed: int) -> LabeledDataset:
    """Corrupt each clean label through C on a per-sample content-keyed draw.

    The uniform variate for sample i comes from sha256(seed, x_i, y_i), so
    the result is invariant to any reordering of the dataset.
    """
    if ds.clean_labels is None:
        raise InvalidArgumentError("dataset has no clean labels to corrupt")
    if c.m != ds.m:
        raise InvalidArgumentError(f"channel m={c.m} != dataset m={ds.m}")
    cum = c.cum_rows()
    noisy = np.empty(ds.n, dtype=np.int64)
    for i in range(ds.n):
        y = int(ds.clean_labels[i])
        u = _content_uniform(seed, ds.x[i], y)
        noisy[i] = min(int(np.searchsorted(cum[y], u, side="right")), ds.m - 1)
    return LabeledDataset(
        x=ds.x, noisy_labels=noisy, m=ds.m, clean_labels=ds.clean_labels,
        channel_used=c, seed=seed,
    )


# -- IDX ingestion ----------------------------------------------------------------


def _read_idx(path, expected_magic: int):
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}")
    rank = magic & 0xFF
    if len(blob) < 4 + 4 * rank:
        raise FormatError(f"{path}: truncated dimension block")
    dims = struct.unpack_from(f">{rank}I", blob, 4)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 0
    payload = blob[4 + 4 * rank:]
    if len(payload) != count:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, dimensions say {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Classic big-endian IDX pair; pixels scaled to [0,1], labels as given."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    n = images.shape[0]
    flat = images.reshape(n, -1).astype(np.float64) / 255.0 if n else np.zeros((0, 0))
    labels = labels.astype(np.int64)
    m = int(labels.max()) + 1 if n else 0
    return LabeledDataset(x=flat, noisy_labels=labels, m=max(m, 1) if n else 0)


# -- snapshots ----------------------------------------------------------------------


def save_snapshot(ds: LabeledDataset, stem) -> None:
    """{stem}.json metadata + {stem}.x.bin raw little-endian doubles."""
    stem = Path(stem)
    doc = {
        "n": ds.n,
        "d_x": int(ds.x.shape[1]),
        "m": ds.m,
        "seed": ds.seed,
        "noisy_labels": ds.noisy_labels.tolist(),
        "clean_labels": None if ds.clean_labels is None else ds.clean_labels.tolist(),
        "channel": None if ds.channel_used is None else json.loads(ds.channel_used.to_json()),
        "x_file": stem.name + ".x.bin",
    }
    stem.with_suffix(".json").write_text(json.dumps(doc, indent=1))
    Path(str(stem) + ".x.bin").write_bytes(
        np.ascontiguousarray(ds.x, dtype="<f8").tobytes()
    )


def load_snapshot(stem) -> LabeledDataset:
    stem = Path(stem)
    try:
        doc = json.loads(stem.with_suffix(".json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{stem}.json: {exc}") from exc
    raw = (stem.parent / doc["x_file"]).read_bytes()
    expected = doc["n"] * doc["d_x"] * 8
    if len(raw) != expected:
        raise FormatError(
            f"{doc['x_file']}: {len(raw)} bytes, metadata says {expected}"
        )
    x = np.frombuffer(raw, dtype="<f8").reshape(doc["n"], doc["d_x"]).astype(np.float64)
    channel = None
    if doc.get("channel") is not None:
        channel = ConfusionMatrix.from_json(json.dumps(doc["channel"]))
    clean = doc.get("clean_labels")
    return LabeledDataset(
        x=x,
        noisy_labels=np.asarray(doc["noisy_labels"], dtype=np.int64),
        m=doc["m"],
        clean_labels=None if clean is None else np.asarray(clean, dtype=np.int64),
        channel_used=channel,
        seed=doc.get("seed"),
    )
