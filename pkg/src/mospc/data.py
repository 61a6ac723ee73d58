"""Datasets of scored utterances: tabular I/O, splitting and a synthetic corpus.

The on-disk format is a headered CSV::

    id,system_id,mos,f0,f1,...,f{D-1}

Floats are written with ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

MOS_MIN = 1.0
MOS_MAX = 5.0


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid dataset contents."""


@dataclass(frozen=True)
class SpeechSample:
    id: str
    system_id: str
    features: tuple[float, ...]
    mos: float

    def __post_init__(self):
        if not MOS_MIN <= self.mos <= MOS_MAX:
            raise DatasetError(f"sample {self.id!r}: mos out of range: {self.mos}")


@dataclass(frozen=True)
class Dataset:
    samples: tuple[SpeechSample, ...]
    feature_dim: int
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.feature_dim < 1:
            raise DatasetError(f"feature_dim must be positive, got {self.feature_dim}")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DatasetError(f"duplicate id {s.id!r}")
            seen.add(s.id)
            if len(s.features) != self.feature_dim:
                raise DatasetError(
                    f"sample {s.id!r} has {len(s.features)} features, expected {self.feature_dim}"
                )

    def __len__(self):
        return len(self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        """(N, D) float64 feature matrix (read-only)."""
        x = np.array([s.features for s in self.samples], dtype=np.float64).reshape(
            len(self.samples), self.feature_dim
        )
        x.setflags(write=False)
        return x

    @cached_property
    def mos(self) -> np.ndarray:
        y = np.array([s.mos for s in self.samples], dtype=np.float64)
        y.setflags(write=False)
        return y

    @cached_property
    def system_ids(self) -> list[str]:
        return [s.system_id for s in self.samples]

    @cached_property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, indices: Sequence[int], name: str | None = None) -> "Dataset":
        return Dataset(
            tuple(self.samples[i] for i in indices),
            self.feature_dim,
            name if name is not None else self.name,
        )

    def require_nonempty(self):
        if not self.samples:
            raise DatasetError(f"{self.name}: empty dataset")


def header(feature_dim: int) -> list[str]:
    return ["id", "system_id", "mos"] + [f"f{d}" for d in range(feature_dim)]


def dumps_dataset(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header(dataset.feature_dim))
    for s in dataset.samples:
        writer.writerow([s.id, s.system_id, repr(float(s.mos))] + [repr(float(v)) for v in s.features])
    return buf.getvalue()


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"row {lineno}: malformed {what} value {text!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"row {lineno}: non-finite {what} value {text!r}")
    return value


def infer_feature_dim(path) -> int:
    """Feature count from a dataset file's header row."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such dataset file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        first = next(csv.reader(fh), None)
    if not first or len(first) < 4:
        raise DatasetError(f"{path}: missing or short header row")
    return len(first) - 3


def load_dataset(path, feature_dim: int, name: str | None = None) -> Dataset:
    """Read a dataset CSV. Row numbers in errors count the header as row 1."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such dataset file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: missing header row")
    expected = header(feature_dim)
    if [c.strip() for c in rows[0]] != expected:
        raise DatasetError(
            f"{path}: header must be {','.join(expected)!r}, got {','.join(rows[0])!r}"
        )
    samples = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise DatasetError(
                f"row {lineno}: wrong column count {len(row)}, expected {len(expected)}"
            )
        sid, system_id = row[0].strip(), row[1].strip()
        if not sid:
            raise DatasetError(f"row {lineno}: empty id")
        if sid in seen:
            raise DatasetError(f"row {lineno}: duplicate id {sid!r}")
        seen.add(sid)
        mos = _parse_float(row[2], "mos", lineno)
        if not MOS_MIN <= mos <= MOS_MAX:
            raise DatasetError(f"row {lineno}: mos out of range: {mos}")
        feats = tuple(_parse_float(v, "feature", lineno) for v in row[3:])
        samples.append(SpeechSample(sid, system_id, feats, mos))
    if not samples:
        raise DatasetError(f"{path}: empty dataset")
    return Dataset(tuple(samples), feature_dim, name or path.stem)


def split(dataset: Dataset, fractions=(0.70, 0.15, 0.15), seed: int = 0):
    """Shuffle and partition into (train, valid, test).

    Validation and test sizes are ``N * frac`` rounded half up; training takes
    everything else.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be a (train, valid, test) triple")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"every fraction must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    n = len(dataset)
    n_valid = math.floor(n * fractions[1] + 0.5)
    n_test = math.floor(n * fractions[2] + 0.5)
    n_train = n - n_valid - n_test
    order = np.random.default_rng(seed).permutation(n)
    parts = (order[:n_train], order[n_train : n_train + n_valid], order[n_train + n_valid :])
    names = ("train", "valid", "test")
    return tuple(
        dataset.subset(sorted(idx.tolist()), f"{dataset.name}-{nm}") for idx, nm in zip(parts, names)
    )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic MOS corpus.

    ``seed`` drives systems, utterances and all noise. ``feature_seed`` drives
    the quality-to-feature map, so corpora generated with different ``seed``
    but the same ``feature_seed`` share one feature space (needed for
    held-out-system and shifted evaluation sets).
    """

    n_systems: int = 30
    utterances_per_system: int = 140
    n_annotators: int = 4
    feature_dim: int = 16
    noise_scale: float = 0.4
    shift: float = 0.0
    seed: int = 0
    feature_seed: int = 0
    n_signal: int | None = None
    feature_noise: float = 0.3
    annotator_noise: float = 0.5
    name: str = "synth"

    def __post_init__(self):
        if self.n_systems < 1 or self.utterances_per_system < 1:
            raise ValueError("n_systems and utterances_per_system must be positive")
        if self.n_annotators < 1:
            raise ValueError("n_annotators must be >= 1")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.noise_scale < 0 or self.feature_noise < 0 or self.annotator_noise < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.n_signal is not None and not 1 <= self.n_signal <= self.feature_dim:
            raise ValueError("n_signal must lie in [1, feature_dim]")

    @property
    def signal_dims(self) -> int:
        return self.n_signal if self.n_signal is not None else self.feature_dim // 2


def feature_map(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Slopes and intercepts of the signal dimensions, fixed by ``feature_seed``."""
    rng = np.random.default_rng([cfg.feature_seed, cfg.feature_dim, cfg.signal_dims])
    k = cfg.signal_dims
    slopes = rng.uniform(0.3, 1.0, size=k) * rng.choice([-1.0, 1.0], size=k)
    intercepts = rng.normal(0.0, 0.5, size=k)
    return slopes, intercepts


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    n_u = cfg.utterances_per_system
    n = cfg.n_systems * n_u
    system_q = rng.uniform(1.5, 4.5, size=cfg.n_systems)
    q_sys = np.repeat(system_q, n_u)
    latent = np.clip(q_sys + rng.normal(0.0, 1.0, size=n) * cfg.noise_scale, MOS_MIN, MOS_MAX)
    votes = np.round(latent[:, None] + rng.normal(0.0, 1.0, size=(n, cfg.n_annotators)) * cfg.annotator_noise)
    labels = np.clip(votes, MOS_MIN, MOS_MAX).mean(axis=1)

    slopes, intercepts = feature_map(cfg)
    k = cfg.signal_dims
    feats = np.empty((n, cfg.feature_dim))
    # centre quality at 3 so signal dimensions stay O(1)
    feats[:, :k] = (latent[:, None] - 3.0) * slopes + intercepts
    feats[:, :k] += rng.normal(0.0, 1.0, size=(n, k)) * cfg.feature_noise
    feats[:, k:] = rng.normal(0.0, 1.0, size=(n, cfg.feature_dim - k))
    feats += cfg.shift

    width = len(str(cfg.n_systems - 1))
    samples = []
    for i in range(n):
        s, u = divmod(i, n_u)
        sys_id = f"sys{s:0{width}d}"
        samples.append(
            SpeechSample(f"{sys_id}_u{u:04d}", sys_id, tuple(feats[i].tolist()), float(labels[i]))
        )
    return Dataset(tuple(samples), cfg.feature_dim, cfg.name)
