"""Loss functions, the two-stage optimization schedule, and ablation handling.

Stage "detection" trains the face encoder and the prompt learner against the
classification + box objective; stage "reasoning" trains only the prompt
learner against the full objective including the sequence loss. Everything
else stays bitwise frozen, which the tests verify parameter by parameter.

Image taps, the text feature, and the fusion maps are frozen in both stages,
so per-sample cross features are precomputed once per run; the cached path is
numerically identical to the direct forward pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .data_model import Dataset, NewsSample
from .encoders import preprocess
from .model import GROUPS, MODALITIES, NewsModel
from .prompt_reasoner import EOS, LOG_CLAMP, encode_bytes
from .seeding import substream

STAGE_TRAINABLE = {
    "detection": ("encoders.face", "prompt_learner"),
    "reasoning": ("prompt_learner",),
}


class NumericalAbort(RuntimeError):
    """Raised when a loss stops being finite; carries the failing step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class LossReport:
    ce: float
    llm: float
    bbox: float
    giou: float
    total: float

    @classmethod
    def from_components(cls, ce: float, llm: float, bbox: float, giou: float, w: LossWeights) -> "LossReport":
        total = w.alpha * ce + w.beta * llm + w.gamma * bbox + w.delta * giou
        return cls(ce=ce, llm=llm, bbox=bbox, giou=giou, total=total)


@dataclass
class StagePlan:
    stage: str
    dataset: Dataset
    epochs: int = 1
    lr: float = 1e-3
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.stage not in STAGE_TRAINABLE:
            raise ValueError(f"stage must be one of {sorted(STAGE_TRAINABLE)}, got {self.stage!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def trainable(self) -> tuple:
        return STAGE_TRAINABLE[self.stage]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over the batch, probabilities clamped at 1e-12."""
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {tuple(probs.shape)} vs {tuple(labels.shape)}")
    p = probs.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
    y = labels.to(torch.float64)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def bbox_l1_loss(pred: torch.Tensor, gt: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean (over masked samples) of the per-sample sum of |coordinate errors|."""
    if pred.shape != gt.shape:
        raise ValueError("box tensors must have identical shapes")
    per_sample = (pred - gt).abs().sum(dim=-1)
    if mask is None:
        return per_sample.mean()
    mask = mask.to(torch.bool)
    if int(mask.sum()) == 0:
        return per_sample.sum() * 0.0
    return per_sample[mask].mean()


def giou_values(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Generalized IoU per box pair (corner form x1,y1,x2,y2)."""
    ix1 = torch.maximum(pred[..., 0], gt[..., 0])
    iy1 = torch.maximum(pred[..., 1], gt[..., 1])
    ix2 = torch.minimum(pred[..., 2], gt[..., 2])
    iy2 = torch.minimum(pred[..., 3], gt[..., 3])
    inter = (ix2 - ix1).clamp(min=0) * (iy2 - iy1).clamp(min=0)
    area_p = (pred[..., 2] - pred[..., 0]) * (pred[..., 3] - pred[..., 1])
    area_g = (gt[..., 2] - gt[..., 0]) * (gt[..., 3] - gt[..., 1])
    union = area_p + area_g - inter
    ex1 = torch.minimum(pred[..., 0], gt[..., 0])
    ey1 = torch.minimum(pred[..., 1], gt[..., 1])
    ex2 = torch.maximum(pred[..., 2], gt[..., 2])
    ey2 = torch.maximum(pred[..., 3], gt[..., 3])
    enclosing = (ex2 - ex1) * (ey2 - ey1)
    if bool((enclosing <= 0).any()):
        raise ValueError("zero-area enclosing box")
    iou = inter / union
    return iou - (enclosing - union) / enclosing


def giou_loss(pred: torch.Tensor, gt: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """1 - GIoU, averaged over the masked samples; each term lies in [0, 2]."""
    values = 1.0 - giou_values(pred, gt)
    if mask is None:
        return values.mean()
    mask = mask.to(torch.bool)
    if int(mask.sum()) == 0:
        return values.sum() * 0.0
    return values[mask].mean()


def total_loss(ce, llm, bbox, giou, w: LossWeights):
    """Exact weighted sum of the four components (tensor or float inputs)."""
    return w.alpha * ce + w.beta * llm + w.gamma * bbox + w.delta * giou


# ---------------------------------------------------------------------------
# Feature cache
# ---------------------------------------------------------------------------


@dataclass
class SampleCache:
    cross: torch.Tensor          # (N, n_depths * c_fusion), frozen cross features
    pooled_deep: torch.Tensor    # (N, c_image)
    face_crops: torch.Tensor     # (N, 3, S, S)
    labels: torch.Tensor         # (N,)
    boxes: torch.Tensor          # (N, 4) corner targets (zeros when unsupervised)
    box_mask: torch.Tensor       # (N,) True where the image side was manipulated
    contexts: List[List[int]]    # headline byte tokens
    targets: List[List[int]]     # reasoning byte tokens + EOS


def build_cache(model: NewsModel, dataset: Dataset, use_gt_bbox: bool = True) -> SampleCache:
    """Precompute everything that stays frozen during both training stages."""
    cross_rows, pooled_rows, crops, labels, boxes, mask = [], [], [], [], [], []
    contexts, targets = [], []
    with torch.no_grad():
        for s in dataset:
            fs = model.encode(s.image, s.text, s.face_bbox if use_gt_bbox else None)
            cross = torch.cat(model.fusion.cross_features(fs.taps, fs.text_feature), dim=-1)
            cross_rows.append(cross)
            pooled_rows.append(fs.pooled_deep)
            if "face" in model.drop:
                crops.append(torch.zeros((3, model.config.face_crop, model.config.face_crop), dtype=torch.float64))
            else:
                img = preprocess(s.image, model.config.image_size)
                crops.append(model.face_encoder.extract_crop(img, s.face_bbox if use_gt_bbox else None))
            labels.append(float(s.label))
            supervised = s.fake_cls.involves_image and s.face_bbox is not None
            mask.append(supervised)
            boxes.append(
                torch.tensor(s.face_bbox.to_list(), dtype=torch.float64)
                if supervised
                else torch.zeros(4, dtype=torch.float64)
            )
            contexts.append(encode_bytes(s.text))
            targets.append(encode_bytes(s.reasoning) + [EOS])
    return SampleCache(
        cross=torch.stack(cross_rows),
        pooled_deep=torch.stack(pooled_rows),
        face_crops=torch.stack(crops),
        labels=torch.tensor(labels, dtype=torch.float64),
        boxes=torch.stack(boxes),
        box_mask=torch.tensor(mask, dtype=torch.bool),
        contexts=contexts,
        targets=targets,
    )


def _face_features(model: NewsModel, crops: torch.Tensor) -> torch.Tensor:
    if "face" in model.drop:
        return torch.zeros((crops.shape[0], model.config.c_face), dtype=torch.float64)
    return model.face_encoder(crops)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _sgd_step(params: Sequence[torch.nn.Parameter], lr: float) -> None:
    with torch.no_grad():
        for p in params:
            if p.grad is not None:
                p.add_(p.grad, alpha=-lr)
                p.grad = None


def train_stage(model: NewsModel, plan: StagePlan, seed: int) -> List[LossReport]:
    """Run one training stage in place; returns the per-step loss curve."""
    if len(plan.dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model.set_trainable(plan.trainable)
    trainable = model.parameters_in(plan.trainable)
    cache = build_cache(model, plan.dataset, use_gt_bbox=True)
    w = plan.weights
    n = len(plan.dataset)
    reports: List[LossReport] = []
    rng = substream(seed, "batches", plan.stage)

    fused_frozen = None
    if plan.stage == "reasoning":
        # face encoder is frozen here, so the whole fusion vector is constant
        with torch.no_grad():
            face = _face_features(model, cache.face_crops)
            fused_frozen = torch.cat([cache.cross, face], dim=1)

    step = 0
    for _ in range(plan.epochs):
        order = rng.permutation(n)
        for start in range(0, n, plan.batch_size):
            idx = torch.as_tensor(order[start : start + plan.batch_size], dtype=torch.long)
            if plan.stage == "detection":
                face = _face_features(model, cache.face_crops[idx])
                fused = torch.cat([cache.cross[idx], face], dim=1)
                head = model.prompt.head(fused)
                ce = bce_loss(head.p, cache.labels[idx])
                bb = bbox_l1_loss(head.bbox, cache.boxes[idx], cache.box_mask[idx])
                gi = giou_loss(head.bbox, cache.boxes[idx], cache.box_mask[idx])
                llm = torch.zeros((), dtype=torch.float64)
            else:
                fused = fused_frozen[idx]
                prompt_rows, head = model.prompt(fused, cache.pooled_deep[idx])
                ce = bce_loss(head.p, cache.labels[idx])
                bb = bbox_l1_loss(head.bbox, cache.boxes[idx], cache.box_mask[idx])
                gi = giou_loss(head.bbox, cache.boxes[idx], cache.box_mask[idx])
                contexts = [cache.contexts[int(i)] for i in idx]
                targets = [cache.targets[int(i)] for i in idx]
                llm = model.decoder.batch_teacher_loss(prompt_rows, contexts, targets)
            loss = total_loss(ce, llm, bb, gi, w)
            if not torch.isfinite(loss):
                raise NumericalAbort(step)
            loss.backward()
            _sgd_step(trainable, plan.lr)
            reports.append(
                LossReport.from_components(float(ce), float(llm), float(bb), float(gi), w)
            )
            step += 1
    model.set_trainable(GROUPS)
    return reports


def reasoning_overfit(
    model: NewsModel,
    sample: NewsSample,
    steps: int = 3000,
    lr: float = 1.0,
    clip_norm: Optional[float] = 1.0,
    target_loss: Optional[float] = 1e-3,
) -> List[float]:
    """Memorize one sample's annotation: decoder + prompt learner trainable.

    Stands in for starting from a pretrained language model; the two named
    stages never touch the decoder. Plain SGD with optional gradient-norm
    clipping; stops early once the sequence loss reaches ``target_loss``.
    """
    groups = ("decoder", "prompt_learner")
    model.set_trainable(groups)
    trainable = model.parameters_in(groups)
    with torch.no_grad():
        fs = model.encode(sample.image, sample.text, sample.face_bbox)
        fused = model.fusion.fuse(fs.taps, fs.text_feature, fs.face_feature)
        pooled = fs.pooled_deep
    context = encode_bytes(sample.text)
    target = encode_bytes(sample.reasoning) + [EOS]
    curve: List[float] = []
    for step in range(steps):
        prompt_rows, _ = model.prompt(fused, pooled)
        loss = model.decoder.teacher_forced_loss(prompt_rows, target, context)
        if not torch.isfinite(loss):
            raise NumericalAbort(step)
        loss.backward()
        if clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(trainable, clip_norm)
        _sgd_step(trainable, lr)
        curve.append(float(loss))
        if target_loss is not None and curve[-1] <= target_loss:
            break
    model.set_trainable(GROUPS)
    return curve


def ablate(model: NewsModel, drop) -> NewsModel:
    """Model view with the given modalities replaced by zero features."""
    drop = frozenset(drop)
    if not drop <= set(MODALITIES):
        raise ValueError(f"drop must be a subset of {MODALITIES}")
    if drop == set(MODALITIES):
        raise ValueError("cannot drop all three modalities")
    return model.with_drop(drop)


def write_loss_csv(path, reports: List[LossReport]) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "L_CE", "L_LLM", "L_bbox", "L_GIoU", "L_total"])
        for i, r in enumerate(reports):
            writer.writerow([i, repr(r.ce), repr(r.llm), repr(r.bbox), repr(r.giou), repr(r.total)])


def read_loss_csv(path) -> List[LossReport]:
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            reports.append(
                LossReport(
                    ce=float(row["L_CE"]),
                    llm=float(row["L_LLM"]),
                    bbox=float(row["L_bbox"]),
                    giou=float(row["L_GIoU"]),
                    total=float(row["L_total"]),
                )
            )
    return reports
