"""Labels, normalisation, noise, sliding windows and the temporal split."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError
from .structure import InstantLoads
from .traffic import RoadState

log = logging.getLogger(__name__)

OVERLOAD_KG = 30_000.0


@dataclass(frozen=True)
class SectionMap:
    """Girder sections tiling ``[0, L]``; ``target`` is 0-based."""

    boundaries: tuple[float, ...]
    target: int = 0
    threshold_kg: float = OVERLOAD_KG

    def __post_init__(self) -> None:
        b = self.boundaries
        if len(b) < 2 or b[0] != 0.0 or any(hi <= lo for lo, hi in zip(b[:-1], b[1:])):
            raise ConfigError(f"section boundaries {b} must start at 0 and increase")
        if not 0 <= self.target < len(b) - 1:
            raise ConfigError(f"target section {self.target} out of range for {len(b) - 1} sections")

    @classmethod
    def uniform(cls, length: float, section_length: float, cell_length: float,
                target: int = 0, threshold_kg: float = OVERLOAD_KG) -> "SectionMap":
        ratio = section_length / cell_length
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(f"section length {section_length} m is not a multiple of the cell length")
        n_full = int(np.floor(length / section_length + 1e-9))
        bounds = [i * section_length for i in range(n_full + 1)]
        if length - bounds[-1] > 1e-9 * length:
            bounds.append(length)
        return cls(tuple(float(x) for x in bounds), target, threshold_kg)

    @property
    def n_sections(self) -> int:
        return len(self.boundaries) - 1

    def span(self, index: int | None = None) -> tuple[float, float]:
        i = self.target if index is None else index
        return self.boundaries[i], self.boundaries[i + 1]

    def section_of(self, position_m: np.ndarray) -> np.ndarray:
        b = np.asarray(self.boundaries)
        idx = np.searchsorted(b, position_m, side="right") - 1
        return np.clip(idx, 0, self.n_sections - 1)

    def with_target(self, target: int) -> "SectionMap":
        return SectionMap(self.boundaries, target, self.threshold_kg)


def label_at(state: RoadState, sections: SectionMap) -> int:
    """1 iff one vehicle of at least the threshold weight sits in a target-section cell."""
    lo, hi = sections.span()
    cl = state.cell_length
    for v in state.vehicles():
        centre = (v.position + 0.5) * cl
        if lo <= centre < hi and v.weight >= sections.threshold_kg:
            return 1
    return 0


def instant_labels(loads: InstantLoads, sections: SectionMap, section: int | None = None) -> np.ndarray:
    """Overload label for every sampling instant (same rule as :func:`label_at`)."""
    lo, hi = sections.span(section)
    hit = (loads.position >= lo) & (loads.position < hi) & (loads.weight >= sections.threshold_kg)
    return (np.bincount(loads.instant[hit], minlength=loads.n_instants) > 0).astype(np.int8)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    max_abs: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormStats":
        v = np.asarray(values, dtype=float)
        return cls(v.mean(axis=0), np.abs(v).max(axis=0))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "max_abs": self.max_abs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["max_abs"], dtype=float))


def normalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Per-column ``(x - mean) / max|x|``; columns with ``max|x| = 0`` become zeros."""
    v = np.asarray(values, dtype=float)
    if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.max_abs))):
        raise ConfigError("normalisation statistics must be finite")
    dead = stats.max_abs == 0
    if np.any(dead):
        warnings.warn(f"sensor columns {np.flatnonzero(dead).tolist()} are identically zero",
                      RuntimeWarning, stacklevel=2)
    scale = np.where(dead, 1.0, stats.max_abs)
    out = (v - stats.mean) / scale
    out[:, dead] = 0.0
    return out


def inject_noise(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise of std ``sigma``."""
    if sigma < 0:
        raise ConfigError("noise sigma must be >= 0")
    v = np.asarray(values, dtype=float)
    if sigma == 0:
        return v.copy()
    return v + rng.normal(0.0, sigma, size=v.shape)


@dataclass(frozen=True)
class Sample:
    window: np.ndarray  # (l, n)
    label: int
    end_instant: int


@dataclass
class SampleSet:
    """Sliding windows over a series, held as a strided view (no copies).

    ``windows[k]`` covers instants ``offset + k ... offset + k + l - 1`` and
    carries the label of its last instant.
    """

    windows: np.ndarray  # (m, l, n)
    labels: np.ndarray  # (m,)
    end_instants: np.ndarray  # (m,)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, k: int) -> Sample:
        return Sample(self.windows[k], int(self.labels[k]), int(self.end_instants[k]))

    def __iter__(self) -> Iterator[Sample]:
        for k in range(len(self)):
            yield self[k]

    def subset(self, lo: int, hi: int) -> "SampleSet":
        return SampleSet(self.windows[lo:hi], self.labels[lo:hi], self.end_instants[lo:hi])

    @property
    def window_length(self) -> int:
        return self.windows.shape[1]

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0


def slice_windows(values: np.ndarray, labels: np.ndarray, l: int) -> SampleSet:
    """All ``N - l + 1`` length-``l`` windows, each labelled at its last instant."""
    v = np.asarray(values, dtype=float)
    N = v.shape[0]
    if l < 1:
        raise ConfigError("window length must be >= 1")
    if N < l:
        raise ConfigError(f"series of {N} instants is shorter than the window {l}")
    if len(labels) != N:
        raise ValueError("labels must have one entry per instant")
    windows = sliding_window_view(v, l, axis=0).transpose(0, 2, 1)
    ends = np.arange(l - 1, N)
    return SampleSet(windows, np.asarray(labels)[ends], ends)


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous ``[lo, hi)`` sample ranges for train / validation / test."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self) -> None:
        parts = (self.train, self.val, self.test)
        if any(hi < lo for lo, hi in parts):
            raise ConfigError("split ranges must have lo <= hi")
        if self.train[1] > self.val[0] or self.val[1] > self.test[0]:
            raise ConfigError("split ranges overlap")
        if self.train[0] != 0 or self.train[1] != self.val[0] or self.val[1] != self.test[0]:
            raise ConfigError("split ranges must be contiguous from 0")

    @classmethod
    def from_ratios(cls, n_samples: int, ratios=(6, 2, 2), n_reference: int | None = None) -> "SplitSpec":
        """Train and validation sizes are ``ratio * n_reference`` (default ``n_samples``);
        the test split takes what remains.

        With ``n_reference`` set to the instant count N, N = 100,000 and
        windows of 8 give 60,000 / 20,000 / 19,993 samples.
        """
        total = float(sum(ratios))
        ref = n_samples if n_reference is None else n_reference
        n_train = int(round(ref * ratios[0] / total))
        n_val = int(round(ref * ratios[1] / total))
        if n_train + n_val > n_samples and n_reference is not None:
            # Very short series: the window eats too much; split the samples themselves.
            return cls.from_ratios(n_samples, ratios)
        if n_train + n_val > n_samples:
            raise ConfigError(f"split of {ref} does not fit in {n_samples} samples")
        return cls((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n_samples))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(hi - lo for lo, hi in (self.train, self.val, self.test))

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def split(samples: SampleSet, spec: SplitSpec) -> tuple[SampleSet, SampleSet, SampleSet]:
    if spec.test[1] != len(samples):
        raise ConfigError(f"split covers {spec.test[1]} samples, have {len(samples)}")
    return tuple(samples.subset(lo, hi) for lo, hi in (spec.train, spec.val, spec.test))


@dataclass
class Dataset:
    """Processed per-instant series plus everything needed to window and split it."""

    values: np.ndarray  # (N, n) normalised (and noisy) responses
    labels: np.ndarray  # (N,) overload labels for the target section
    window: int
    split_spec: SplitSpec
    stats: NormStats
    sections: SectionMap
    sigma: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_instants(self) -> int:
        return self.values.shape[0]

    def samples(self) -> SampleSet:
        return slice_windows(self.values, self.labels, self.window)

    def splits(self) -> tuple[SampleSet, SampleSet, SampleSet]:
        return split(self.samples(), self.split_spec)


def build_dataset(raw: np.ndarray, labels: np.ndarray, sections: SectionMap, window: int = 8,
                  sigma: float = 0.0, noise_seed: int = 0, ratios=(6, 2, 2),
                  meta: dict | None = None) -> Dataset:
    """Normalise with training-range statistics, add noise, and fix the split.

    Statistics come from the instants the training windows touch, then apply
    to the whole series; noise goes on afterwards.
    """
    raw = np.asarray(raw, dtype=float)
    N = raw.shape[0]
    if N < window:
        raise ConfigError(f"series of {N} instants is shorter than the window {window}")
    spec = SplitSpec.from_ratios(N - window + 1, ratios, n_reference=N)
    train_end = spec.train[1] + window - 1
    stats = NormStats.fit(raw[:train_end])
    values = normalize(raw, stats)
    values = inject_noise(values, sigma, np.random.default_rng(noise_seed))
    info = {"normalization": "train-range statistics", "noise_after_normalization": True}
    info.update(meta or {})
    return Dataset(values, np.asarray(labels, dtype=np.int8), window, spec, stats, sections,
                   sigma, info)
