import math

import numpy as np
import pytest

from cosmix import toybench as tb
from cosmix.core import validate


def test_pole_points_lie_on_the_cylinder():
    spec = tb.source_spec(
        abundance={"ground": 0.5, "pole": 0.5},
        max_instances={"pole": 1},
        noise=0.0,
        scene_radius=15.0,
    )
    rng = np.random.default_rng(0)
    layout = tb.plan_scene(spec, rng)
    (pole,) = layout.instances["pole"]
    assert all(not v for k, v in layout.instances.items() if k != "pole")
    cloud, labels = tb.sample_scene(spec, layout, rng)
    pts = cloud.xyz[labels != tb.TOY_CLASSES.ids[0]]
    assert pts.shape[0] == layout.n_points[2] > 0
    r = np.hypot(pts[:, 0] - pole.center[0], pts[:, 1] - pole.center[1])
    assert np.all(np.abs(r - pole.radius) <= 1e-6)
    assert np.all((pts[:, 2] >= -1e-6) & (pts[:, 2] <= pole.height + 1e-6))
    ground = cloud.xyz[labels == tb.TOY_CLASSES.ids[0]]
    assert np.all(ground[:, 2] == 0.0)


def test_class_histogram_matches_abundance():
    spec = tb.source_spec(scene_radius=12.0)
    data = tb.generate_dataset(spec, 100, seed=1)
    labels = np.concatenate([l for _, l in data])
    n = labels.size
    w = spec.weights()
    counts = np.array([np.sum(labels == c) for c in tb.TOY_CLASSES.ids])
    sigma = np.sqrt(n * w * (1 - w))
    assert np.all(np.abs(counts - n * w) <= 3 * sigma)
    # within 20% of each weight as well
    assert np.all(np.abs(counts / n - w) <= 0.2 * w)


def test_fixed_seed_is_bitwise_identical():
    spec = tb.target_spec(scene_radius=10.0)
    a = tb.generate_scene(spec, np.random.default_rng(5))
    b = tb.generate_scene(spec, np.random.default_rng(5))
    assert a[0].equals(b[0]) and np.array_equal(a[1], b[1])
    assert tb.generate_scene(spec)[0].equals(tb.generate_scene(spec)[0])


def test_scan_depends_only_on_seed_and_index():
    spec = tb.source_spec(scene_radius=8.0)
    short = tb.generate_dataset(spec, 3, seed=4)
    long = tb.generate_dataset(spec, 6, seed=4)
    for (c1, l1), (c2, l2) in zip(short, long):
        assert c1.equals(c2) and np.array_equal(l1, l2)


def test_parallel_generation_matches_sequential():
    spec = tb.source_spec(scene_radius=8.0)
    seq = tb.generate_dataset(spec, 6, seed=2, workers=1)
    par = tb.generate_dataset(spec, 6, seed=2, workers=2)
    for (c1, l1), (c2, l2) in zip(seq, par):
        assert c1.equals(c2) and np.array_equal(l1, l2)


def _counts(data):
    return np.array([c.count for c, _ in data], dtype=float)


def test_identical_specs_give_matching_densities():
    spec = tb.source_spec(scene_radius=10.0)
    a, b = tb.make_domain_pair(spec, spec, 50, seed=3)
    ca, cb = _counts(a), _counts(b)
    se = math.sqrt(ca.var(ddof=1) / ca.size + cb.var(ddof=1) / cb.size)
    assert abs(ca.mean() - cb.mean()) <= 4 * se


def test_half_density_halves_points():
    src = tb.source_spec(scene_radius=15.0)
    a, b = tb.make_domain_pair(src, tb.source_spec(scene_radius=15.0, density=src.density / 2), 50, seed=6)
    ratio = _counts(b).mean() / _counts(a).mean()
    assert abs(ratio - 0.5) <= 0.05


def test_default_target_realises_three_shifts():
    s, t = tb.source_spec(), tb.target_spec()
    assert t.density < s.density
    assert t.noise > s.noise
    assert not np.allclose(t.weights(), s.weights())


def test_generated_data_validates():
    src, tgt = tb.make_domain_pair(tb.source_spec(scene_radius=10.0), tb.target_spec(scene_radius=10.0), 10, seed=0)
    for cloud, labels in src + tgt:
        validate(cloud, labels, tb.TOY_CLASSES)
        assert np.all((cloud.intensity >= 0) & (cloud.intensity <= 1))


def test_default_scan_size():
    assert 4500 <= tb.source_spec().expected_points <= 5500


@pytest.mark.parametrize(
    "kw",
    [
        {"density": 0.0},
        {"noise": -0.1},
        {"abundance": {"ground": 0.0}},
        {"abundance": {"ground": -1.0, "pole": 2.0}},
        {"abundance": {"tree": 1.0}},
    ],
)
def test_invalid_scene_settings(kw):
    with pytest.raises(ValueError):
        tb.source_spec(**kw)
