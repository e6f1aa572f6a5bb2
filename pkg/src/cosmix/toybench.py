"""Procedural two-domain LiDAR-like benchmark.

Each scene is a ground disc with boxes (buildings, vehicles), cylinders
(poles) and ellipsoids (vegetation). Points are drawn on primitive surfaces.
The per-class point budget is multinomial in the abundance weights, so class
fractions match the weights in expectation. A domain is a :class:`SceneSpec`;
the target default is sparser, noisier, with a different class mix and an
intensity offset (a differently calibrated sensor).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import ClassSet, PointCloud

CLASS_NAMES = ("ground", "building", "pole", "vehicle", "vegetation")
# id 0 is reserved for "unlabeled" on disk
TOY_CLASSES = ClassSet(tuple(range(1, len(CLASS_NAMES) + 1)), CLASS_NAMES)
UNLABELED_ID = 0


@dataclass(frozen=True)
class SceneSpec:
    scene_radius: float = 30.0
    density: float = 1.8  # points per square metre of ground disc
    noise: float = 0.0
    abundance: Mapping[str, float] = field(
        default_factory=lambda: {
            "ground": 0.45, "building": 0.25, "pole": 0.05, "vehicle": 0.10, "vegetation": 0.15,
        }
    )
    intensity_mean: Mapping[str, float] = field(
        default_factory=lambda: {
            "ground": 0.30, "building": 0.50, "pole": 0.70, "vehicle": 0.85, "vegetation": 0.15,
        }
    )
    intensity_std: float = 0.08
    intensity_gain: float = 1.0
    intensity_offset: float = 0.0
    max_instances: Mapping[str, int] = field(
        default_factory=lambda: {"building": 4, "pole": 6, "vehicle": 6, "vegetation": 5}
    )
    seed: int = 0

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError("density must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        weights = [self.abundance.get(n, 0.0) for n in CLASS_NAMES]
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("abundance weights must be >= 0 and not all zero")
        unknown = set(self.abundance) - set(CLASS_NAMES)
        if unknown:
            raise ValueError(f"unknown classes in abundance: {sorted(unknown)}")

    @property
    def expected_points(self) -> float:
        return self.density * math.pi * self.scene_radius**2

    def weights(self) -> np.ndarray:
        w = np.array([self.abundance.get(n, 0.0) for n in CLASS_NAMES], dtype=np.float64)
        return w / w.sum()


def source_spec(**overrides) -> SceneSpec:
    return replace(SceneSpec(), **overrides)


def target_spec(**overrides) -> SceneSpec:
    spec = SceneSpec(
        density=0.9,
        noise=0.06,
        abundance={"ground": 0.38, "building": 0.20, "pole": 0.07, "vehicle": 0.15, "vegetation": 0.20},
        intensity_offset=0.15,
    )
    return replace(spec, **overrides)


# --------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Box:
    center: tuple  # (x, y) of the footprint centre
    size: tuple  # (length, width, height)
    yaw: float

    def area(self) -> float:
        l, w, h = self.size
        return 2 * (l + w) * h + l * w

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        l, w, h = self.size
        faces = np.array([l * h, l * h, w * h, w * h, l * w])
        face = rng.choice(5, size=n, p=faces / faces.sum())
        u = rng.uniform(-0.5, 0.5, size=n)
        v = rng.uniform(0.0, 1.0, size=n)
        local = np.zeros((n, 3))
        for k, (sx, sy) in enumerate([(0, -1), (0, 1), (-1, 0), (1, 0)]):
            m = face == k
            if sx == 0:
                local[m, 0] = u[m] * l
                local[m, 1] = sy * w / 2
            else:
                local[m, 0] = sx * l / 2
                local[m, 1] = u[m] * w
            local[m, 2] = v[m] * h
        top = face == 4
        local[top, 0] = u[top] * l
        local[top, 1] = rng.uniform(-0.5, 0.5, size=top.sum()) * w
        local[top, 2] = h
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = local.copy()
        out[:, 0] = self.center[0] + c * local[:, 0] - s * local[:, 1]
        out[:, 1] = self.center[1] + s * local[:, 0] + c * local[:, 1]
        return out


@dataclass(frozen=True)
class Cylinder:
    center: tuple
    radius: float
    height: float

    def area(self) -> float:
        return 2 * math.pi * self.radius * self.height

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        phi = rng.uniform(0.0, 2 * math.pi, size=n)
        z = rng.uniform(0.0, self.height, size=n)
        return np.column_stack(
            [self.center[0] + self.radius * np.cos(phi), self.center[1] + self.radius * np.sin(phi), z]
        )


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple  # (x, y, z)
    radii: tuple

    def area(self) -> float:
        a, b, c = self.radii
        p = 1.6075
        return 4 * math.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + d * np.asarray(self.radii)


def _polar(rng, lo, hi):
    r = rng.uniform(lo, hi)
    phi = rng.uniform(0, 2 * math.pi)
    return (r * math.cos(phi), r * math.sin(phi))


def _make_instance(name: str, spec: SceneSpec, rng: np.random.Generator):
    R = spec.scene_radius
    if name == "building":
        return Box(_polar(rng, 0.45 * R, 0.85 * R), (rng.uniform(6, 14), rng.uniform(5, 10), rng.uniform(5, 12)), rng.uniform(0, math.pi))
    if name == "vehicle":
        return Box(_polar(rng, 0.12 * R, 0.7 * R), (rng.uniform(3.8, 4.8), rng.uniform(1.7, 2.0), rng.uniform(1.3, 1.8)), rng.uniform(0, math.pi))
    if name == "pole":
        return Cylinder(_polar(rng, 0.1 * R, 0.85 * R), rng.uniform(0.1, 0.25), rng.uniform(4.0, 8.0))
    if name == "vegetation":
        xy = _polar(rng, 0.25 * R, 0.9 * R)
        radii = (rng.uniform(1.5, 3.0), rng.uniform(1.5, 3.0), rng.uniform(1.0, 2.0))
        return Ellipsoid((xy[0], xy[1], radii[2] + rng.uniform(0.5, 2.0)), radii)
    raise ValueError(f"no primitive for class {name!r}")


@dataclass(frozen=True)
class SceneLayout:
    n_points: np.ndarray  # per-class point budget, CLASS_NAMES order
    instances: dict  # class name -> list of primitives


def plan_scene(spec: SceneSpec, rng: np.random.Generator) -> SceneLayout:
    total = rng.poisson(spec.expected_points)
    n_points = rng.multinomial(total, spec.weights())
    instances = {}
    for name, n in zip(CLASS_NAMES[1:], n_points[1:]):
        if n == 0:
            instances[name] = []
            continue
        k = int(rng.integers(1, spec.max_instances.get(name, 1) + 1))
        instances[name] = [_make_instance(name, spec, rng) for _ in range(k)]
    return SceneLayout(n_points, instances)


def sample_scene(spec: SceneSpec, layout: SceneLayout, rng: np.random.Generator):
    xyz_parts, label_parts, names = [], [], []
    n_ground = int(layout.n_points[0])
    r = spec.scene_radius * np.sqrt(rng.uniform(size=n_ground))
    phi = rng.uniform(0, 2 * math.pi, size=n_ground)
    xyz_parts.append(np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n_ground)]))
    label_parts.append(np.full(n_ground, TOY_CLASSES.ids[0]))
    names.append(np.zeros(n_ground, dtype=np.intp))
    for k, name in enumerate(CLASS_NAMES[1:], start=1):
        prims = layout.instances[name]
        n = int(layout.n_points[k])
        if n == 0 or not prims:
            continue
        areas = np.array([p.area() for p in prims])
        split = rng.multinomial(n, areas / areas.sum())
        for prim, m in zip(prims, split):
            if m:
                xyz_parts.append(prim.sample(int(m), rng))
        label_parts.append(np.full(n, TOY_CLASSES.ids[k]))
        names.append(np.full(n, k, dtype=np.intp))
    xyz = np.concatenate(xyz_parts)
    labels = np.concatenate(label_parts).astype(np.int64)
    cls_index = np.concatenate(names)
    if spec.noise > 0:
        xyz = xyz + rng.normal(0.0, spec.noise, size=xyz.shape)
    means = np.array([spec.intensity_mean[n] for n in CLASS_NAMES])[cls_index]
    raw = rng.normal(means, spec.intensity_std)
    intensity = np.clip(spec.intensity_gain * raw + spec.intensity_offset, 0.0, 1.0)
    # interleave classes so scan order carries no label information
    order = rng.permutation(labels.size)
    cloud = PointCloud(np.column_stack([xyz, intensity])[order])
    return cloud, labels[order]


def generate_scene(spec: SceneSpec, rng: np.random.Generator | None = None):
    """One labelled scene; uses ``spec.seed`` when no generator is given."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return sample_scene(spec, plan_scene(spec, rng), rng)


def _scene_from_seed(args):
    spec, seq = args
    return generate_scene(spec, np.random.default_rng(seq))


def _generate(spec: SceneSpec, seqs, workers: int) -> list:
    jobs = [(spec, s) for s in seqs]
    if workers <= 1 or len(jobs) < 2:
        return [_scene_from_seed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_scene_from_seed, jobs, chunksize=8))


def generate_dataset(spec: SceneSpec, n_scans: int, seed: int | None = None, workers: int = 1) -> list:
    """``n_scans`` scenes; scan ``k`` depends only on ``(seed, k)``, whatever ``workers`` is."""
    root = np.random.SeedSequence(spec.seed if seed is None else seed)
    return _generate(spec, root.spawn(n_scans), workers)


def make_domain_pair(src: SceneSpec, tgt: SceneSpec, n_scans: int, seed: int = 0, workers: int = 1):
    """Source and target datasets of ``n_scans`` scenes each, from independent streams."""
    s_seq, t_seq = np.random.SeedSequence(seed).spawn(2)
    return _generate(src, s_seq.spawn(n_scans), workers), _generate(tgt, t_seq.spawn(n_scans), workers)
