"""Compositional mixing of point clouds across domains.

A mixed sample is built in three steps: every selected patch is augmented on
its own (rotation about its vertical centroid axis, per-axis scaling, random
downsampling), the patches are appended to a base scan from the other
domain, and the union is augmented as a whole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LABEL_DTYPE, Patch, PointCloud, as_labels
from .errors import LengthMismatch
from .selection import (
    ClassHistogram,
    Prediction,
    SelectionConfig,
    extract_patches,
    filter_pseudo_labels,
    present_classes,
    select_source_classes,
    select_target_classes,
)

BASE = 0
PATCH = 1

Bounds = tuple[float, float]


def _check_bounds(bounds, what):
    lo, hi = bounds
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"{what} bounds must be finite and ordered, got {bounds}")


@dataclass(frozen=True)
class LocalAugConfig:
    rot_z_bounds: Bounds = (-math.pi / 2, math.pi / 2)
    scale_bounds: Bounds = (0.95, 1.05)
    keep_fraction: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        _check_bounds(self.rot_z_bounds, "rotation")
        _check_bounds(self.scale_bounds, "scale")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")

    def kept(self, n: int) -> int:
        if not self.enabled:
            return n
        return min(n, math.ceil(self.keep_fraction * n))


@dataclass(frozen=True)
class GlobalAugConfig:
    # (x, y, z) pairs; rotation defaults to the vertical axis only
    rot_bounds: tuple[Bounds, Bounds, Bounds] = ((0.0, 0.0), (0.0, 0.0), (-math.pi, math.pi))
    translation_bounds: tuple[Bounds, Bounds, Bounds] = ((-0.2, 0.2),) * 3
    scale_bounds: tuple[Bounds, Bounds, Bounds] = ((0.95, 1.05),) * 3
    enabled: bool = True

    def __post_init__(self):
        for name in ("rot_bounds", "translation_bounds", "scale_bounds"):
            bounds = tuple(tuple(float(v) for v in b) for b in getattr(self, name))
            if len(bounds) != 3:
                raise ValueError(f"{name} needs one pair per axis")
            for b in bounds:
                _check_bounds(b, name)
            object.__setattr__(self, name, bounds)


@dataclass(frozen=True, eq=False)
class MixedSample:
    cloud: PointCloud
    labels: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        labels = as_labels(self.labels).copy()
        prov = np.array(self.provenance, dtype=np.uint8)
        if not (self.cloud.count == labels.shape[0] == prov.shape[0]):
            raise LengthMismatch(
                f"cloud {self.cloud.count}, labels {labels.shape[0]}, "
                f"provenance {prov.shape[0]}"
            )
        labels.flags.writeable = False
        prov.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "provenance", prov)

    @property
    def count(self) -> int:
        return self.cloud.count

    def patch_classes(self) -> list[int]:
        return np.unique(self.labels[self.provenance == PATCH]).tolist()


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """``Rz @ Ry @ Rx``."""
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def local_augment(patch: Patch, cfg: LocalAugConfig, rng: np.random.Generator) -> Patch:
    if not cfg.enabled or patch.count == 0:
        return patch
    xyz = patch.cloud.xyz.copy()
    centroid = xyz.mean(axis=0)

    theta = rng.uniform(*cfg.rot_z_bounds)
    c, s = math.cos(theta), math.sin(theta)
    dx = xyz[:, 0] - centroid[0]
    dy = xyz[:, 1] - centroid[1]
    xyz[:, 0] = centroid[0] + c * dx - s * dy
    xyz[:, 1] = centroid[1] + s * dx + c * dy

    # written as p + (p - c)(s - 1) so a unit factor leaves coordinates untouched
    factors = rng.uniform(cfg.scale_bounds[0], cfg.scale_bounds[1], size=3)
    xyz += (xyz - centroid) * (factors - 1.0)

    n_keep = cfg.kept(patch.count)
    keep = np.sort(rng.choice(patch.count, size=n_keep, replace=False))
    out = patch.cloud.with_xyz(xyz).take(keep)
    return Patch(patch.class_id, out, patch.indices[keep])


def global_augment(cloud: PointCloud, cfg: GlobalAugConfig, rng: np.random.Generator) -> PointCloud:
    """Rotate, scale and translate every point with one shared draw."""
    if not cfg.enabled:
        return cloud
    angles = [rng.uniform(lo, hi) for lo, hi in cfg.rot_bounds]
    scale = np.array([rng.uniform(lo, hi) for lo, hi in cfg.scale_bounds])
    shift = np.array([rng.uniform(lo, hi) for lo, hi in cfg.translation_bounds])
    xyz = cloud.xyz @ rotation_matrix(*angles).T
    xyz += xyz * (scale - 1.0)
    xyz += shift
    return cloud.with_xyz(xyz)


def compose_mix(
    base_cloud: PointCloud,
    base_labels,
    patches: list[Patch],
    local_cfg: LocalAugConfig,
    global_cfg: GlobalAugConfig,
    rng: np.random.Generator,
) -> MixedSample:
    """Append augmented patches (ascending class id) to a base scan, then augment globally.

    Each patch draws from its own child stream of ``rng``; label values are
    copied, never transformed.
    """
    base_labels = as_labels(base_labels)
    if base_labels.shape[0] != base_cloud.count:
        raise LengthMismatch(f"{base_cloud.count} points but {base_labels.shape[0]} labels")
    ordered = sorted(patches, key=lambda p: p.class_id)
    streams = rng.spawn(len(ordered) + 1)
    augmented = [local_augment(p, local_cfg, g) for p, g in zip(ordered, streams)]

    cloud = PointCloud.concat([base_cloud] + [p.cloud for p in augmented])
    labels = np.concatenate(
        [base_labels] + [np.full(p.count, p.class_id, dtype=LABEL_DTYPE) for p in augmented]
    )
    provenance = np.concatenate(
        [np.full(base_cloud.count, BASE, dtype=np.uint8)]
        + [np.full(p.count, PATCH, dtype=np.uint8) for p in augmented]
    )
    cloud = global_augment(cloud, global_cfg, streams[-1])
    return MixedSample(cloud, labels, provenance)


def cosmix_pair(
    source_cloud: PointCloud,
    source_labels,
    target_cloud: PointCloud,
    teacher_prediction: Prediction,
    selection_cfg: SelectionConfig,
    local_cfg: LocalAugConfig,
    global_cfg: GlobalAugConfig,
    histogram: ClassHistogram,
    rng: np.random.Generator,
    s2t: bool = True,
    t2s: bool = True,
) -> tuple[MixedSample | None, MixedSample | None]:
    """Build the source-to-target and target-to-source mixed samples.

    s->t: the target scan, labelled with its filtered pseudo-labels, receives
    source patches. t->s: the source scan with ground truth receives patches
    of confidently pseudo-labelled target points. A disabled branch yields
    ``None``. Each branch has its own random streams, so gating one does not
    change the other's output.
    """
    source_labels = as_labels(source_labels)
    if source_labels.shape[0] != source_cloud.count:
        raise LengthMismatch(f"{source_cloud.count} source points, {source_labels.shape[0]} labels")
    if len(teacher_prediction) != target_cloud.count:
        raise LengthMismatch(
            f"{target_cloud.count} target points, {len(teacher_prediction)} predictions"
        )
    sel_src, sel_tgt, mix_s2t, mix_t2s = rng.spawn(4)
    pseudo = filter_pseudo_labels(teacher_prediction, selection_cfg.zeta)

    out_s2t = out_t2s = None
    if s2t:
        pool = present_classes(source_labels)
        chosen = (
            select_source_classes(pool, histogram, selection_cfg.alpha, selection_cfg.weighted, sel_src)
            if pool
            else []
        )
        patches = extract_patches(source_cloud, source_labels, chosen)
        out_s2t = compose_mix(target_cloud, pseudo, patches, local_cfg, global_cfg, mix_s2t)
    if t2s:
        chosen = select_target_classes(pseudo, histogram, selection_cfg, sel_tgt)
        patches = extract_patches(target_cloud, pseudo, chosen)
        out_t2s = compose_mix(source_cloud, source_labels, patches, local_cfg, global_cfg, mix_t2s)
    return out_s2t, out_t2s

