"""Source warm-up, the two-branch mixing iteration, and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import IGNORE, ClassSet, as_labels
from .errors import AllIgnored, EmptyDataset, NonFiniteLoss
from .learning import ema_update, sgd_step, total_loss
from .mixing import GlobalAugConfig, LocalAugConfig, MixedSample, cosmix_pair
from .segmenter import ToySegmenter
from .selection import ClassHistogram, Prediction, SelectionConfig, calibrate_zeta, class_frequency

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptationConfig:
    epochs_warmup: int = 10
    epochs_adapt: int = 10
    batch_size: int = 4
    alpha: float = 0.5
    zeta: float = 0.85
    beta: float = 0.99
    gamma: int = 1
    lr: float = 0.001
    # ablation switches
    branch_s2t: bool = True
    branch_t2s: bool = True
    local_aug: bool = True
    global_aug: bool = True
    weighted_f: bool = True
    ema: bool = True
    target_subsample: bool = True
    local_cfg: LocalAugConfig = field(default_factory=LocalAugConfig)
    global_cfg: GlobalAugConfig = field(default_factory=GlobalAugConfig)
    miou_convention: str = "exclude"
    seed: int = 0

    def __post_init__(self):
        if self.epochs_warmup < 0 or self.epochs_adapt < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1 or self.gamma < 1:
            raise ValueError("batch_size and gamma must be >= 1")
        if self.miou_convention not in ("exclude", "zero"):
            raise ValueError(f"unknown mIoU convention {self.miou_convention!r}")
        # validates alpha and zeta
        self.selection()

    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.alpha, self.zeta, self.weighted_f, self.target_subsample)

    def local(self) -> LocalAugConfig:
        return LocalAugConfig(
            self.local_cfg.rot_z_bounds,
            self.local_cfg.scale_bounds,
            self.local_cfg.keep_fraction,
            self.local_cfg.enabled and self.local_aug,
        )

    def global_(self) -> GlobalAugConfig:
        g = self.global_cfg
        return GlobalAugConfig(g.rot_bounds, g.translation_bounds, g.scale_bounds, g.enabled and self.global_aug)


@dataclass
class TrainState:
    student: ToySegmenter
    teacher: ToySegmenter
    rng: np.random.Generator
    iteration: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class EvalResult:
    confusion: np.ndarray  # rows: ground truth column, cols: predicted column
    iou: dict
    miou: float

    def table(self, classes: ClassSet) -> str:
        lines = [f"{'class':<14}{'IoU':>8}"]
        for cid, name in zip(classes.ids, classes.names):
            v = self.iou[cid]
            lines.append(f"{name:<14}{'n/a' if math.isnan(v) else f'{100 * v:.2f}':>8}")
        lines.append(f"{'mIoU':<14}{100 * self.miou:>8.2f}")
        return "\n".join(lines)


def _batches(order: np.ndarray, size: int):
    for start in range(0, order.size, size):
        yield order[start : start + size]


def warmup(source: Sequence, segmenter: ToySegmenter, cfg: AdaptationConfig, rng: np.random.Generator | None = None) -> TrainState:
    """Train on labelled source scans only, then clone the student into the teacher."""
    if not source:
        raise EmptyDataset("warm-up needs at least one source scan")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    for epoch in range(cfg.epochs_warmup):
        for batch in _batches(rng.permutation(len(source)), cfg.batch_size):
            clouds = [source[i][0] for i in batch]
            labels = [source[i][1] for i in batch]
            loss, grad = segmenter.loss_and_grad(clouds, labels)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"warm-up loss is {loss} in epoch {epoch}")
            segmenter.set_params(sgd_step(segmenter.params(), grad, cfg.lr))
        log.debug("warm-up epoch %d done", epoch)
    return TrainState(student=segmenter, teacher=segmenter.copy(), rng=rng)


def _branch_loss(student: ToySegmenter, samples: list[MixedSample]):
    if not samples:
        return None, None
    try:
        return student.loss_and_grad([s.cloud for s in samples], [s.labels for s in samples])
    except AllIgnored:
        return None, None


def adapt_iteration(
    state: TrainState,
    source_batch: Sequence,
    target_batch: Sequence,
    histogram: ClassHistogram,
    cfg: AdaptationConfig,
    check: Callable[[MixedSample], None] | None = None,
) -> dict:
    """One student update on mixed batches, plus the scheduled teacher refresh.

    Returns the branch losses (``None`` for a branch that did not train).
    """
    classes = state.student.classes
    sel, loc, glo = cfg.selection(), cfg.local(), cfg.global_()
    s2t_samples, t2s_samples = [], []
    for (s_cloud, s_labels), (t_cloud, _) in zip(source_batch, target_batch):
        pred = Prediction.from_probs(state.teacher.predict(t_cloud), classes.ids)
        (stream,) = state.rng.spawn(1)
        s2t, t2s = cosmix_pair(
            s_cloud, s_labels, t_cloud, pred, sel, loc, glo, histogram, stream,
            s2t=cfg.branch_s2t, t2s=cfg.branch_t2s,
        )
        for sample, bucket in ((s2t, s2t_samples), (t2s, t2s_samples)):
            if sample is not None:
                if check is not None:
                    check(sample)
                bucket.append(sample)

    loss_s2t, g_s2t = _branch_loss(state.student, s2t_samples)
    loss_t2s, g_t2s = _branch_loss(state.student, t2s_samples)
    grads = [g for g in (g_s2t, g_t2s) if g is not None]
    if grads:
        loss = total_loss(loss_s2t, loss_t2s)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss is {loss} at iteration {state.iteration}")
        state.student.set_params(sgd_step(state.student.params(), sum(grads), cfg.lr))
    if cfg.ema and state.iteration % cfg.gamma == 0:
        state.teacher.set_params(ema_update(state.teacher.params(), state.student.params(), cfg.beta))
    state.iteration += 1
    return {"loss_s2t": loss_s2t, "loss_t2s": loss_t2s}


def adapt(
    state: TrainState,
    source: Sequence,
    target: Sequence,
    cfg: AdaptationConfig,
    histogram: ClassHistogram | None = None,
    eval_set: Sequence | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainState:
    """Run ``cfg.epochs_adapt`` epochs; source and target are re-shuffled independently per epoch."""
    if not source or not target:
        raise EmptyDataset("adaptation needs source and target scans")
    if histogram is None:
        histogram = class_frequency(lab for _, lab in source)
    n = min(len(source), len(target))
    for _ in range(cfg.epochs_adapt):
        s_order = state.rng.permutation(len(source))[:n]
        t_order = state.rng.permutation(len(target))[:n]
        losses = {"loss_s2t": [], "loss_t2s": []}
        for lo in range(0, n, cfg.batch_size):
            s_batch = [source[i] for i in s_order[lo : lo + cfg.batch_size]]
            t_batch = [target[i] for i in t_order[lo : lo + cfg.batch_size]]
            out = adapt_iteration(state, s_batch, t_batch, histogram, cfg)
            for k, v in out.items():
                if v is not None:
                    losses[k].append(v)
        state.epoch += 1
        row = {
            "iter": state.iteration,
            "epoch": state.epoch,
            "loss_s2t": float(np.mean(losses["loss_s2t"])) if losses["loss_s2t"] else math.nan,
            "loss_t2s": float(np.mean(losses["loss_t2s"])) if losses["loss_t2s"] else math.nan,
            "miou": evaluate(eval_set, state.student, cfg.miou_convention).miou if eval_set else math.nan,
        }
        state.history.append(row)
        log.info("epoch %d iter %d s2t %.4f t2s %.4f miou %.4f", row["epoch"], row["iter"], row["loss_s2t"], row["loss_t2s"], row["miou"])
        if on_epoch is not None:
            on_epoch(row)
    return state


def calibrate_from_teacher(teacher: ToySegmenter, target: Sequence, fraction: float) -> float:
    """Confidence threshold keeping ``fraction`` of the teacher's target predictions.

    The result is clamped into the open interval (0, 1) a threshold must lie in.
    """
    conf = np.concatenate([teacher.predict(cloud).max(axis=1) for cloud, _ in target])
    return float(np.clip(calibrate_zeta(conf, fraction), 1e-6, 1.0 - 1e-6))


def confusion_matrix(gt_columns, pred_columns, n_classes: int) -> np.ndarray:
    gt = as_labels(gt_columns)
    pred = as_labels(pred_columns)
    keep = gt != IGNORE
    idx = gt[keep] * n_classes + pred[keep]
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def iou_from_confusion(conf: np.ndarray, convention: str = "exclude") -> tuple[np.ndarray, float]:
    """Per-class IoU and mIoU.

    ``exclude`` leaves classes with an empty union out of the mean (IoU NaN);
    ``zero`` scores them 0.
    """
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = tp / union
    if convention == "zero":
        iou = np.where(union == 0, 0.0, iou)
        return iou, float(iou.mean())
    if convention != "exclude":
        raise ValueError(f"unknown mIoU convention {convention!r}")
    scored = union > 0
    return iou, float(iou[scored].mean()) if scored.any() else math.nan


def evaluate(dataset: Sequence, segmenter: ToySegmenter, convention: str = "exclude") -> EvalResult:
    """Confusion matrix over every labelled point of ``dataset``."""
    if not dataset:
        raise EmptyDataset("nothing to evaluate")
    classes = segmenter.classes
    k = len(classes)
    conf = np.zeros((k, k), dtype=np.int64)
    for cloud, labels in dataset:
        gt = classes.to_index(labels)
        pred = np.argmax(segmenter.predict(cloud), axis=1)
        conf += confusion_matrix(gt, pred, k)
    iou, miou = iou_from_confusion(conf, convention)
    return EvalResult(conf, dict(zip(classes.ids, iou.tolist())), miou)
