"""Class statistics and semantic patch selection.

Source patches are picked per scan by sampling a fraction ``alpha`` of the
classes present, favouring classes that are rare in the source dataset.
Target patches come from teacher predictions whose confidence clears a
threshold ``zeta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .core import IGNORE, LABEL_DTYPE, Patch, PointCloud, as_labels
from .errors import (
    EmptyDataset,
    EmptySample,
    EmptySelectionPool,
    LengthMismatch,
    UnknownClassId,
)


@dataclass(frozen=True)
class ClassHistogram:
    """Per-class point counts over a dataset."""

    counts: Mapping[int, int]

    def __post_init__(self):
        counts = {int(c): int(n) for c, n in dict(self.counts).items()}
        if any(n < 0 for n in counts.values()):
            raise ValueError("histogram counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self.counts

    def frequency(self, class_id: int) -> float:
        total = self.total
        if total == 0:
            return 0.0
        try:
            return self.counts[int(class_id)] / total
        except KeyError:
            raise UnknownClassId(f"class {class_id} not in histogram") from None

    def frequencies(self) -> dict[int, float]:
        return {c: self.frequency(c) for c in self.counts}

    @classmethod
    def from_frequencies(cls, freqs: Mapping[int, float], scale: int = 10**9) -> "ClassHistogram":
        return cls({c: int(round(f * scale)) for c, f in freqs.items()})


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.5
    zeta: float = 0.85
    weighted: bool = True
    # also subsample target classes with alpha after confidence filtering
    target_subsample: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError(f"zeta must lie in (0, 1), got {self.zeta}")


@dataclass(frozen=True, eq=False)
class Prediction:
    """Per-point predicted class ids and their confidences."""

    labels: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        labels = as_labels(self.labels)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if labels.shape != conf.shape:
            raise LengthMismatch(f"{labels.size} labels but {conf.size} confidences")
        if conf.size and (not np.all(np.isfinite(conf)) or conf.min() < 0 or conf.max() > 1):
            raise ValueError("confidences must be finite and within [0, 1]")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def from_probs(cls, probs: np.ndarray, class_ids) -> "Prediction":
        """Arg-max class and its probability (max-softmax confidence)."""
        probs = np.asarray(probs, dtype=np.float64)
        cols = np.argmax(probs, axis=1) if probs.size else np.zeros(0, dtype=np.intp)
        ids = np.asarray(class_ids, dtype=LABEL_DTYPE)
        conf = probs[np.arange(probs.shape[0]), cols] if probs.size else np.zeros(0)
        return cls(ids[cols], np.clip(conf, 0.0, 1.0))

    def __len__(self) -> int:
        return self.labels.shape[0]


def class_frequency(label_arrays: Iterable) -> ClassHistogram:
    """Count labelled points per class over a dataset, skipping IGNORE."""
    counts: dict[int, int] = {}
    n_scans = 0
    for labels in label_arrays:
        n_scans += 1
        labels = as_labels(labels)
        ids, n = np.unique(labels[labels != IGNORE], return_counts=True)
        for c, k in zip(ids.tolist(), n.tolist()):
            counts[c] = counts.get(c, 0) + k
    if n_scans == 0:
        raise EmptyDataset("cannot build a histogram from zero scans")
    return ClassHistogram(counts)


def n_selected(alpha: float, n_present: int) -> int:
    """Number of classes to pick: round-half-up of alpha * n, at least 1."""
    return max(1, min(n_present, int(math.floor(alpha * n_present + 0.5))))


def select_source_classes(
    present_classes,
    histogram: ClassHistogram,
    alpha: float,
    weighted: bool,
    rng: np.random.Generator,
) -> list[int]:
    """Draw classes without replacement, each draw weighted by ``1 - frequency``.

    With ``weighted=False`` every remaining class is equally likely. Weights are
    renormalised after each draw; if all remaining weights are zero the draw
    falls back to uniform.
    """
    pool = sorted({int(c) for c in present_classes})
    if not pool:
        raise EmptySelectionPool("no classes to select from")
    missing = [c for c in pool if c not in histogram]
    if missing:
        raise UnknownClassId(f"classes {missing} absent from the histogram")
    k = n_selected(alpha, len(pool))
    weights = np.array(
        [1.0 - histogram.frequency(c) if weighted else 1.0 for c in pool]
    )
    chosen = []
    remaining = list(range(len(pool)))
    for _ in range(k):
        w = weights[remaining]
        total = w.sum()
        p = w / total if total > 0 else np.full(len(remaining), 1.0 / len(remaining))
        pick = remaining[int(rng.choice(len(remaining), p=p))]
        chosen.append(pool[pick])
        remaining.remove(pick)
    return chosen


def present_classes(labels) -> list[int]:
    labels = as_labels(labels)
    return np.unique(labels[labels != IGNORE]).tolist()


def extract_patches(cloud: PointCloud, labels, class_ids) -> list[Patch]:
    """One patch per requested class that has points, in ascending class order."""
    labels = as_labels(labels)
    if labels.shape[0] != cloud.count:
        raise LengthMismatch(f"{cloud.count} points but {labels.shape[0]} labels")
    patches = []
    for c in sorted({int(c) for c in class_ids}):
        if c == IGNORE:
            continue
        idx = np.flatnonzero(labels == c)
        if idx.size:
            patches.append(Patch(c, cloud.take(idx), idx))
    return patches


def filter_pseudo_labels(prediction: Prediction, zeta: float) -> np.ndarray:
    """Keep predicted classes with confidence >= zeta, IGNORE elsewhere."""
    keep = prediction.confidence >= zeta
    return np.where(keep, prediction.labels, IGNORE).astype(LABEL_DTYPE)


def calibrate_zeta(confidence_sample, target_fraction: float) -> float:
    """Threshold retaining about ``target_fraction`` of the sample.

    Returns the sorted sample value at position ``n - round(target * n)``, so
    ``confidence >= zeta`` keeps ``round(target * n)`` points barring ties.
    """
    sample = np.sort(np.asarray(confidence_sample, dtype=np.float64).ravel())
    if sample.size == 0:
        raise EmptySample("cannot calibrate on an empty sample")
    if not 0.0 < target_fraction < 1.0:
        raise ValueError(f"target fraction must lie in (0, 1), got {target_fraction}")
    n = sample.size
    keep = min(n, max(1, int(math.floor(target_fraction * n + 0.5))))
    return float(sample[n - keep])


def select_target_classes(
    pseudo_labels,
    histogram: ClassHistogram,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> list[int]:
    """Classes surviving the confidence filter, optionally alpha-subsampled.

    Subsampling weighs classes with the source histogram, since target
    statistics are unreliable; classes the source never saw get frequency 0.
    """
    present = present_classes(pseudo_labels)
    if not present or not cfg.target_subsample:
        return present
    prior = dict(histogram.counts)
    for c in present:
        prior.setdefault(c, 0)
    return select_source_classes(present, ClassHistogram(prior), cfg.alpha, cfg.weighted, rng)
