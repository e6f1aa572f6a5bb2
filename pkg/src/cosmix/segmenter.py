"""Pluggable segmenter interface and a small per-point softmax model.

The toy model maps every point to five features

    (z / R, sqrt(x^2 + y^2) / R, intensity, voxel density, 1)

with ``R`` the scene radius and voxel density the point count of the point's
voxel divided by the largest voxel count in the cloud, and scores classes
with ``softmax(W @ features)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .core import ClassSet, PointCloud
from .errors import LengthMismatch, NonPositiveVoxel, ShapeMismatch
from .learning import dice_loss_and_grad

N_FEATURES = 5


class Segmenter(Protocol):
    classes: ClassSet

    def predict(self, cloud: PointCloud) -> np.ndarray: ...

    def params(self) -> np.ndarray: ...

    def set_params(self, params: np.ndarray) -> None: ...

    def loss_and_grad(self, clouds, labels) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    coords: np.ndarray  # (N, 3) integer voxel coordinate of each point
    inverse: np.ndarray  # (N,) voxel id of each point
    counts: np.ndarray  # (V,) points per voxel

    def density(self) -> np.ndarray:
        if self.counts.size == 0:
            return np.zeros(0)
        return self.counts[self.inverse] / self.counts.max()


def voxelize(cloud: PointCloud, voxel_size: float) -> VoxelGrid:
    if not voxel_size > 0:
        raise NonPositiveVoxel(f"voxel size must be positive, got {voxel_size}")
    coords = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    if coords.shape[0] == 0:
        empty = np.zeros(0, dtype=np.int64)
        return VoxelGrid(coords.reshape(0, 3), empty, empty)
    # flatten to one integer key per voxel; 1-D unique is far cheaper than row-unique
    shifted = coords - coords.min(axis=0)
    extent = shifted.max(axis=0) + 1
    key = (shifted[:, 0] * extent[1] + shifted[:, 1]) * extent[2] + shifted[:, 2]
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    return VoxelGrid(coords, inverse.reshape(-1), counts)


def toy_features(cloud: PointCloud, scene_radius: float = 50.0, voxel_size: float = 1.0) -> np.ndarray:
    xyz = cloud.xyz
    rho = np.hypot(xyz[:, 0], xyz[:, 1])
    density = voxelize(cloud, voxel_size).density()
    return np.column_stack(
        [xyz[:, 2] / scene_radius, rho / scene_radius, cloud.intensity, density, np.ones(cloud.count)]
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _weights(params, n_classes: int, n_features: int) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.size != n_classes * n_features:
        raise ShapeMismatch(
            f"expected {n_classes} x {n_features} = {n_classes * n_features} params, got {params.size}"
        )
    return params.reshape(n_classes, n_features)


def predict_from_features(features: np.ndarray, params, n_classes: int) -> np.ndarray:
    W = _weights(params, n_classes, features.shape[1])
    return softmax(features @ W.T)


def grad_from_features(features: np.ndarray, columns, params, n_classes: int) -> tuple[float, np.ndarray]:
    """Dice loss of the softmax model and its gradient w.r.t. the flat params."""
    W = _weights(params, n_classes, features.shape[1])
    probs = softmax(features @ W.T)
    loss, g = dice_loss_and_grad(probs, columns)
    # softmax backward: dL/dz = p * (g - <g, p>)
    dz = probs * (g - (g * probs).sum(axis=1, keepdims=True))
    return loss, (dz.T @ features).ravel()


def toy_predict(cloud: PointCloud, params, n_classes: int, scene_radius: float = 50.0, voxel_size: float = 1.0) -> np.ndarray:
    return predict_from_features(toy_features(cloud, scene_radius, voxel_size), params, n_classes)


def toy_grad(cloud: PointCloud, columns, params, n_classes: int, scene_radius: float = 50.0, voxel_size: float = 1.0) -> np.ndarray:
    columns = np.asarray(columns)
    if columns.shape[0] != cloud.count:
        raise LengthMismatch(f"{cloud.count} points but {columns.shape[0]} labels")
    feats = toy_features(cloud, scene_radius, voxel_size)
    return grad_from_features(feats, columns, params, n_classes)[1]


class ToySegmenter:
    """Per-point multinomial logistic segmenter over :func:`toy_features`.

    Labels passed to :meth:`loss_and_grad` are class ids of ``classes``.
    """

    def __init__(self, classes: ClassSet, scene_radius: float = 50.0, voxel_size: float = 1.0, params=None, seed: int = 0):
        self.classes = classes
        self.scene_radius = float(scene_radius)
        self.voxel_size = float(voxel_size)
        self.n_params = len(classes) * N_FEATURES
        if params is None:
            params = np.random.default_rng(seed).normal(0.0, 0.01, size=self.n_params)
        self.set_params(params)

    def params(self) -> np.ndarray:
        return self._params.copy()

    def set_params(self, params) -> None:
        self._params = _weights(params, len(self.classes), N_FEATURES).ravel().copy()

    def features(self, cloud: PointCloud) -> np.ndarray:
        return toy_features(cloud, self.scene_radius, self.voxel_size)

    def predict(self, cloud: PointCloud) -> np.ndarray:
        return predict_from_features(self.features(cloud), self._params, len(self.classes))

    def predict_labels(self, cloud: PointCloud) -> np.ndarray:
        probs = self.predict(cloud)
        return np.asarray(self.classes.ids)[np.argmax(probs, axis=1)]

    def loss_and_grad(self, clouds: Sequence[PointCloud], labels: Sequence) -> tuple[float, np.ndarray]:
        """Dice loss over the concatenation of a batch of clouds."""
        if len(clouds) != len(labels):
            raise LengthMismatch(f"{len(clouds)} clouds but {len(labels)} label arrays")
        feats = np.concatenate([self.features(c) for c in clouds])
        cols = np.concatenate([self.classes.to_index(l) for l in labels])
        return grad_from_features(feats, cols, self._params, len(self.classes))

    def grad(self, cloud: PointCloud, labels) -> np.ndarray:
        return self.loss_and_grad([cloud], [labels])[1]

    def copy(self) -> "ToySegmenter":
        return ToySegmenter(self.classes, self.scene_radius, self.voxel_size, params=self._params)
