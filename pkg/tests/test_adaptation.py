import math

import numpy as np
import pytest

from cosmix.adaptation import (
    AdaptationConfig,
    TrainState,
    adapt,
    adapt_iteration,
    calibrate_from_teacher,
    confusion_matrix,
    evaluate,
    iou_from_confusion,
    warmup,
)
from cosmix.core import IGNORE, ClassSet, PointCloud
from cosmix.errors import EmptyDataset
from cosmix.mixing import BASE, PATCH
from cosmix.segmenter import ToySegmenter
from cosmix.selection import class_frequency

CLASSES = ClassSet((1, 2), ("dark", "bright"))


def _separable(n_scans=6, n=80, seed=0, shift=0.0):
    """Class 1 points are dark, class 2 points are bright."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_scans):
        labels = rng.integers(1, 3, size=n)
        inten = np.where(labels == 1, 0.2, 0.8) + rng.normal(0, 0.05, size=n) + shift
        xyz = rng.uniform(-5, 5, size=(n, 3))
        out.append((PointCloud.from_xyz(xyz, inten), labels))
    return out


def _cfg(**kw):
    base = dict(epochs_warmup=3, epochs_adapt=2, batch_size=2, lr=5.0, zeta=0.6, seed=0)
    base.update(kw)
    return AdaptationConfig(**base)


def _warm(cfg=None, data=None):
    cfg = cfg or _cfg()
    data = data or _separable()
    return warmup(data, ToySegmenter(CLASSES, scene_radius=10, seed=1), cfg), data


def test_warmup_copies_student_into_teacher():
    state, _ = _warm()
    assert np.array_equal(state.teacher.params(), state.student.params())
    assert state.teacher is not state.student


def test_zero_warmup_epochs_keeps_init():
    seg = ToySegmenter(CLASSES, seed=4)
    init = seg.params()
    state = warmup(_separable(), seg, _cfg(epochs_warmup=0))
    assert np.array_equal(state.student.params(), init)


def test_warmup_learns_separable_set():
    state, data = _warm(_cfg(epochs_warmup=20))
    correct = total = 0
    for cloud, labels in data:
        correct += np.sum(state.student.predict_labels(cloud) == labels)
        total += labels.size
    assert correct / total > 0.9


def test_warmup_needs_data():
    with pytest.raises(EmptyDataset):
        warmup([], ToySegmenter(CLASSES), _cfg())


def _batches(seed=1):
    src = _separable(2, seed=seed)
    tgt = [(c, None) for c, _ in _separable(2, seed=seed + 50, shift=0.05)]
    return src, tgt


def test_branches_off_leaves_student():
    state, src = _warm()
    cfg = _cfg(branch_s2t=False, branch_t2s=False)
    before = state.student.params()
    s, t = _batches()
    out = adapt_iteration(state, s, t, class_frequency(l for _, l in src), cfg)
    assert out == {"loss_s2t": None, "loss_t2s": None}
    assert np.array_equal(state.student.params(), before)
    assert state.iteration == 1


def test_ema_off_freezes_teacher():
    state, src = _warm()
    cfg = _cfg(ema=False)
    frozen = state.teacher.params()
    h = class_frequency(l for _, l in src)
    for k in range(4):
        s, t = _batches(k)
        adapt_iteration(state, s, t, h, cfg)
    assert np.array_equal(state.teacher.params(), frozen)
    assert not np.array_equal(state.student.params(), frozen)


def test_teacher_contracts_toward_fixed_student():
    state, src = _warm()
    state.teacher.set_params(state.teacher.params() + 1.0)
    cfg = _cfg(branch_s2t=False, branch_t2s=False, beta=0.99, gamma=1)
    h = class_frequency(l for _, l in src)
    gaps = []
    for k in range(10):
        s, t = _batches(k)
        adapt_iteration(state, s, t, h, cfg)
        gaps.append(np.linalg.norm(state.teacher.params() - state.student.params()))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_gamma_schedules_teacher_updates():
    state, src = _warm()
    cfg = _cfg(gamma=3)
    h = class_frequency(l for _, l in src)
    changed = []
    for k in range(7):
        before = state.teacher.params()
        s, t = _batches(k)
        adapt_iteration(state, s, t, h, cfg)
        changed.append(not np.array_equal(before, state.teacher.params()))
    # iterations 0, 3, 6 refresh the teacher
    assert changed == [True, False, False, True, False, False, True]


def test_mixed_batches_satisfy_invariants():
    state, src = _warm()
    h = class_frequency(l for _, l in src)
    seen = []

    def check(sample):
        assert sample.cloud.count == sample.labels.shape[0] == sample.provenance.shape[0]
        assert set(np.unique(sample.provenance).tolist()) <= {BASE, PATCH}
        seen.append(sample)

    s, t = _batches()
    adapt_iteration(state, s, t, h, _cfg(), check=check)
    assert len(seen) == 4


def test_fully_filtered_batch_still_trains_s2t():
    state, src = _warm()
    # confidence can never reach this threshold
    cfg = _cfg(zeta=0.999999, branch_t2s=True)
    state.teacher.set_params(np.zeros_like(state.teacher.params()))
    before = state.student.params()
    s, t = _batches()
    out = adapt_iteration(state, s, t, class_frequency(l for _, l in src), cfg)
    assert out["loss_s2t"] is not None
    assert not np.array_equal(state.student.params(), before)


def test_adapt_is_reproducible():
    histories = []
    for _ in range(2):
        state, src = _warm()
        tgt = [(c, None) for c, _ in _separable(4, seed=9, shift=0.05)]
        adapt(state, src, tgt, _cfg(), eval_set=_separable(2, seed=11, shift=0.05))
        histories.append(state.history)
    assert histories[0] == histories[1]
    assert [r["epoch"] for r in histories[0]] == [1, 2]


def test_calibrate_from_teacher_retains_fraction():
    state, src = _warm()
    tgt = [(c, None) for c, _ in _separable(4, seed=3, shift=0.05)]
    zeta = calibrate_from_teacher(state.teacher, tgt, 0.8)
    conf = np.concatenate([state.teacher.predict(c).max(axis=1) for c, _ in tgt])
    assert 0 < zeta < 1
    assert np.mean(conf >= zeta) == pytest.approx(0.8, abs=0.01)


# metrics


class _Oracle:
    """Stub segmenter that predicts the class stored in the intensity channel."""

    def __init__(self, classes, remap=None):
        self.classes = classes
        self.remap = remap or {}

    def predict(self, cloud):
        ids = cloud.intensity.astype(int)
        ids = np.array([self.remap.get(int(i), int(i)) for i in ids])
        cols = self.classes.to_index(ids)
        return np.eye(len(self.classes))[cols]


def _scan(pred_ids, gt_ids):
    cloud = PointCloud.from_xyz(np.zeros((len(pred_ids), 3)), np.asarray(pred_ids, float))
    return cloud, np.asarray(gt_ids)


def test_evaluate_perfect():
    labels = [1, 2, 2, 1]
    res = evaluate([_scan(labels, labels)], _Oracle(CLASSES))
    assert res.iou == {1: 1.0, 2: 1.0}
    assert res.miou == 1.0


def test_evaluate_fully_confused():
    data = [_scan([1, 1, 2, 2], [1, 1, 2, 2])]
    res = evaluate(data, _Oracle(CLASSES, remap={1: 2, 2: 1}))
    assert res.iou == {1: 0.0, 2: 0.0}
    assert res.miou == 0.0


def naive_iou(pairs, class_ids):
    """Set intersection over union per class, one point at a time."""
    out = {}
    for c in class_ids:
        inter = union = 0
        for pred, gt in pairs:
            if gt == IGNORE:
                continue
            inter += pred == c and gt == c
            union += pred == c or gt == c
        out[c] = (inter, union)
    return out


def test_evaluate_matches_naive_oracle():
    classes = ClassSet((0, 1, 2, 3), tuple("abcd"))
    rng = np.random.default_rng(0)
    data = []
    pairs = []
    for _ in range(5):
        n = int(rng.integers(20, 60))
        pred = rng.integers(0, 4, size=n)
        gt = rng.integers(0, 3, size=n)  # class 3 never in ground truth
        gt[rng.random(n) < 0.1] = IGNORE
        data.append(_scan(pred, gt))
        pairs += list(zip(pred.tolist(), gt.tolist()))
    res = evaluate(data, _Oracle(classes))
    oracle = naive_iou(pairs, classes.ids)
    for k, c in enumerate(classes.ids):
        inter, union = oracle[c]
        assert res.confusion[k, k] == inter
        assert res.confusion[k].sum() + res.confusion[:, k].sum() - res.confusion[k, k] == union
        assert res.iou[c] == inter / union
    scored = [i / u for i, u in oracle.values() if u]
    assert res.miou == pytest.approx(sum(scored) / len(scored), rel=1e-15)


def test_iou_conventions():
    conf = np.array([[5, 0, 0], [0, 0, 0], [1, 0, 2]])
    iou, miou = iou_from_confusion(conf, "exclude")
    assert math.isnan(iou[1])
    assert miou == pytest.approx((5 / 6 + 2 / 3) / 2)
    iou0, miou0 = iou_from_confusion(conf, "zero")
    assert iou0[1] == 0.0
    assert miou0 == pytest.approx((5 / 6 + 2 / 3) / 3)


def test_confusion_skips_ignore():
    conf = confusion_matrix([0, 1, IGNORE], [0, 0, 1], 2)
    assert conf.tolist() == [[1, 0], [1, 0]]


def test_evaluate_empty():
    with pytest.raises(EmptyDataset):
        evaluate([], _Oracle(CLASSES))


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptationConfig(gamma=0)
    with pytest.raises(ValueError):
        AdaptationConfig(alpha=0.0)
    with pytest.raises(ValueError):
        AdaptationConfig(miou_convention="mean")


def test_state_type():
    state, _ = _warm()
    assert isinstance(state, TrainState)
    assert state.iteration == 0
