"""Point clouds, label arrays, class sets and patches.

Labels travel as plain 1-D ``int64`` numpy arrays. Points that must be
skipped by losses, metrics and patch extraction carry :data:`IGNORE`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import LengthMismatch, NonFiniteCoordinate, UnknownClassId

# Semantic ids are 16 bits wide on disk; the top value is reserved.
IGNORE = 0xFFFF

LABEL_DTYPE = np.int64


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``N x 4`` array of ``(x, y, z, intensity)`` rows in float64."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"expected an (N, 4) array, got shape {pts.shape}")
        object.__setattr__(self, "points", _readonly(pts))

    @classmethod
    def from_xyz(cls, xyz, intensity=None) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        return cls(np.column_stack([xyz, np.asarray(intensity, dtype=np.float64)]))

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4)))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.count

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def take(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=np.intp)])

    def with_xyz(self, xyz: np.ndarray) -> "PointCloud":
        """Copy with new coordinates and the original intensity."""
        return PointCloud(np.column_stack([xyz, self.points[:, 3]]))

    @staticmethod
    def concat(clouds: Iterable["PointCloud"]) -> "PointCloud":
        arrays = [c.points for c in clouds]
        if not arrays:
            return PointCloud.empty()
        return PointCloud(np.concatenate(arrays, axis=0))

    def equals(self, other: "PointCloud") -> bool:
        """Bitwise equality of the underlying arrays."""
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points.view(np.uint64), other.points.view(np.uint64))
        )


def as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.size == 0:
        return np.zeros(0, dtype=LABEL_DTYPE)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"labels must be integers, got {arr.dtype}")
    return arr.astype(LABEL_DTYPE, copy=False)


@dataclass(frozen=True)
class ClassSet:
    """Ordered semantic classes. Column ``k`` of a prediction is ``ids[k]``."""

    ids: tuple
    names: tuple
    ignore_id: int = IGNORE
    _lookup: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        names = tuple(str(n) for n in self.names)
        if len(ids) != len(names):
            raise ValueError("ids and names differ in length")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate class ids in {ids}")
        if self.ignore_id in ids:
            raise ValueError(f"ignore id {self.ignore_id} collides with a class id")
        if any(i < 0 or i > IGNORE for i in ids):
            raise ValueError("class ids must lie in [0, 0xFFFF)")
        lookup = np.full(IGNORE + 1, -1, dtype=np.int64)
        lookup[list(ids)] = np.arange(len(ids))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_lookup", _readonly(lookup))

    @classmethod
    def from_names(cls, names: Sequence[str], start: int = 0) -> "ClassSet":
        return cls(tuple(range(start, start + len(names))), tuple(names))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self.ids

    def name(self, class_id: int) -> str:
        return self.names[self.ids.index(int(class_id))]

    def to_index(self, labels) -> np.ndarray:
        """Map class ids to column indices; IGNORE stays IGNORE."""
        labels = as_labels(labels)
        out = np.full(labels.shape, IGNORE, dtype=LABEL_DTYPE)
        keep = labels != IGNORE
        if np.any((labels[keep] < 0) | (labels[keep] > IGNORE)):
            raise UnknownClassId("label outside the 16-bit range")
        cols = self._lookup[labels[keep]]
        if np.any(cols < 0):
            bad = np.unique(labels[keep][cols < 0])
            raise UnknownClassId(f"labels {bad.tolist()} not in class set")
        out[keep] = cols
        return out

    def from_index(self, columns) -> np.ndarray:
        columns = as_labels(columns)
        ids = np.asarray(self.ids, dtype=LABEL_DTYPE)
        out = np.full(columns.shape, IGNORE, dtype=LABEL_DTYPE)
        keep = columns != IGNORE
        out[keep] = ids[columns[keep]]
        return out


@dataclass(frozen=True, eq=False)
class Patch:
    """Points of one class lifted out of a cloud."""

    class_id: int
    cloud: PointCloud
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.shape != (self.cloud.count,):
            raise LengthMismatch(
                f"patch has {self.cloud.count} points but {idx.size} indices"
            )
        object.__setattr__(self, "indices", _readonly(idx.copy()))

    @property
    def count(self) -> int:
        return self.cloud.count

    def __len__(self) -> int:
        return self.count


def validate(cloud: PointCloud, labels, classes: ClassSet) -> None:
    """Check a cloud/label pair against the class set.

    Raises ``LengthMismatch``, ``NonFiniteCoordinate`` or ``UnknownClassId``.
    """
    labels = as_labels(labels)
    if labels.shape[0] != cloud.count:
        raise LengthMismatch(f"{cloud.count} points but {labels.shape[0]} labels")
    if not np.all(np.isfinite(cloud.points)):
        raise NonFiniteCoordinate("cloud contains NaN or Inf values")
    classes.to_index(labels)
