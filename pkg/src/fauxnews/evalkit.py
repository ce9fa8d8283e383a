"""Classification metrics, few-shot / chain-of-thought prompt assembly, and
human-rating aggregation.

The positive class is "fake" (label 1) by convention; it is a parameter of
``compute_metrics`` for anyone who needs the other orientation. Zero-division
cells report 0.0 and raise a flag instead of NaN so report files stay stable.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .data_model import Dataset, Domain, NewsSample, split_reasoning
from .model import NewsModel
from .seeding import substream

DEFAULT_SHOT_CHOICES = (0, 1, 2, 4)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class GroupMetrics:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    flags: List[str] = field(default_factory=list)


@dataclass
class MetricsReport:
    accuracy: float
    n: int
    overall: GroupMetrics
    per_domain: Dict[str, GroupMetrics]

    @property
    def flags(self) -> List[str]:
        out = [f"overall:{f}" for f in self.overall.flags]
        for name, gm in self.per_domain.items():
            out.extend(f"{name}:{f}" for f in gm.flags)
        return out


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _group_metrics(preds: Sequence[int], labels: Sequence[int], positive_label: int) -> GroupMetrics:
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        if p == positive_label and y == positive_label:
            tp += 1
        elif p == positive_label:
            fp += 1
        elif y == positive_label:
            fn += 1
        else:
            tn += 1
    flags = []
    if tp + fp == 0:
        precision, flag_p = 0.0, True
    else:
        precision, flag_p = tp / (tp + fp), False
    if flag_p:
        flags.append("precision-div0")
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall-div0")
    else:
        recall = tp / (tp + fn)
    return GroupMetrics(
        precision=precision, recall=recall, f1=f1_score(precision, recall), counts=ConfusionCounts(tp, fp, tn, fn), flags=flags
    )


def compute_metrics(
    preds: Sequence[int],
    labels: Sequence[int],
    domains: Sequence[Domain],
    positive_label: int = 1,
) -> MetricsReport:
    """Overall accuracy plus overall and per-domain precision/recall/F1."""
    if not (len(preds) == len(labels) == len(domains)):
        raise ValueError("preds, labels and domains must have equal lengths")
    if len(preds) == 0:
        raise ValueError("cannot compute metrics over zero samples")
    correct = sum(1 for p, y in zip(preds, labels) if p == y)
    per_domain = {}
    for d in Domain:
        idx = [i for i, dom in enumerate(domains) if dom == d]
        per_domain[d.value] = _group_metrics([preds[i] for i in idx], [labels[i] for i in idx], positive_label)
    return MetricsReport(
        accuracy=correct / len(preds),
        n=len(preds),
        overall=_group_metrics(preds, labels, positive_label),
        per_domain=per_domain,
    )


# ---------------------------------------------------------------------------
# Human-rating aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HumanRating:
    rater: str
    sample: str
    exactness: int
    certainty: int
    detail: int

    def __post_init__(self):
        for name in ("exactness", "certainty", "detail"):
            v = getattr(self, name)
            if not (isinstance(v, int) and 1 <= v <= 10):
                raise ValueError(f"{name} must be an integer in 1..10, got {v!r}")


@dataclass(frozen=True)
class RatingSummary:
    exactness: float
    certainty: float
    detail: float
    total: float
    n: int


def aggregate_ratings(ratings: Sequence[HumanRating]) -> RatingSummary:
    """Aspect means and their arithmetic mean; full precision internally."""
    if not ratings:
        raise ValueError("no ratings to aggregate")
    e = float(np.mean([r.exactness for r in ratings]))
    c = float(np.mean([r.certainty for r in ratings]))
    d = float(np.mean([r.detail for r in ratings]))
    return RatingSummary(exactness=e, certainty=c, detail=d, total=(e + c + d) / 3.0, n=len(ratings))


def load_ratings_csv(path) -> List[HumanRating]:
    """Read ratings from a CSV with header rater,sample,exactness,certainty,detail."""
    required = ["rater", "sample", "exactness", "certainty", "detail"]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != required:
            raise ValueError(f"ratings CSV must have header {','.join(required)}")
        return [
            HumanRating(
                rater=row["rater"],
                sample=row["sample"],
                exactness=int(row["exactness"]),
                certainty=int(row["certainty"]),
                detail=int(row["detail"]),
            )
            for row in reader
        ]


# ---------------------------------------------------------------------------
# Few-shot prompt assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FewShotSetup:
    k: int
    seed: int = 0
    cot: bool = False
    allowed: Tuple[int, ...] = DEFAULT_SHOT_CHOICES

    def __post_init__(self):
        if self.k not in self.allowed:
            raise ValueError(f"k={self.k} not in the configured set {self.allowed}")


@dataclass
class PromptBundle:
    text: str
    image_refs: List[str]  # sample ids whose images slot into the <Img> markers, in order


def load_prompt_template() -> str:
    ref = importlib.resources.files("fauxnews").joinpath("data/prompt_template.txt")
    return ref.read_text(encoding="utf-8").rstrip("\n")


def _exemplar_answer(sample: NewsSample, cot: bool) -> str:
    auth, summary, clue = split_reasoning(sample.reasoning)
    if cot:
        return f"{summary} {clue} {auth}"
    return auth


def assemble_fewshot_prompt(
    setup: FewShotSetup,
    exemplars: Sequence[NewsSample],
    query: NewsSample,
    template: Optional[str] = None,
) -> PromptBundle:
    """Render exemplar blocks (optionally with their summary and clue steps)
    followed by the answer-free query block."""
    if len(exemplars) != setup.k:
        raise ValueError(f"expected {setup.k} exemplars, got {len(exemplars)}")
    if any(e.id == query.id for e in exemplars):
        raise ValueError("exemplars must be disjoint from the query sample")
    template = template if template is not None else load_prompt_template()
    blocks = []
    refs = []
    for ex in exemplars:
        blocks.append(template.format(headline=ex.text, answer=_exemplar_answer(ex, setup.cot)))
        refs.append(ex.id)
    blocks.append(template.format(headline=query.text, answer=""))
    refs.append(query.id)
    return PromptBundle(text="\n\n".join(blocks), image_refs=refs)


def select_exemplars(train_set: Dataset, setup: FewShotSetup, query: NewsSample) -> List[NewsSample]:
    """Uniform draw without replacement from the train split, excluding the
    query; when k >= 2 the draw is nudged to include at least one fake."""
    pool = [s for s in train_set if s.id != query.id]
    if len(pool) < setup.k:
        raise ValueError(f"train split too small for k={setup.k}")
    rng = substream(setup.seed, "exemplars", setup.k, query.id)
    chosen_idx = rng.choice(len(pool), size=setup.k, replace=False) if setup.k else np.array([], dtype=int)
    chosen = [pool[int(i)] for i in chosen_idx]
    if setup.k >= 2 and not any(s.label == 1 for s in chosen):
        fakes = [s for s in pool if s.label == 1]
        if fakes:
            chosen[-1] = fakes[int(rng.integers(0, len(fakes)))]
    return chosen


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------


@torch.no_grad()
def predict_dataset(model: NewsModel, dataset: Dataset, threshold: float = 0.5):
    """Head-based predictions for every sample (test-time center-crop rule)."""
    preds, labels, domains, probs = [], [], [], []
    for s in dataset:
        result = model.analyze_sample(s, use_gt_bbox=False)
        p = float(result.head.p)
        preds.append(1 if p >= threshold else 0)
        labels.append(s.label)
        domains.append(s.domain)
        probs.append(p)
    return preds, labels, domains, probs


@dataclass
class FewShotRow:
    k: int
    cot: bool
    report: MetricsReport
    prompts: List[PromptBundle]


def run_fewshot_eval(
    model: NewsModel,
    setup: FewShotSetup,
    train_set: Dataset,
    test_set: Dataset,
) -> FewShotRow:
    """Assemble the per-query prompts for this setup and score the classifier.

    Predictions come from the prediction head (threshold 0.5); the assembled
    prompts feed the reasoning path only, so the row is deterministic in
    (model, setup, data).
    """
    if len(test_set) == 0:
        raise ValueError("empty test set")
    prompts = []
    for query in test_set:
        exemplars = select_exemplars(train_set, setup, query)
        prompts.append(assemble_fewshot_prompt(setup, exemplars, query))
    preds, labels, domains, _ = predict_dataset(model, test_set)
    return FewShotRow(k=setup.k, cot=setup.cot, report=compute_metrics(preds, labels, domains), prompts=prompts)


def run_fewshot_sweep(
    model: NewsModel,
    ks: Iterable[int],
    train_set: Dataset,
    test_set: Dataset,
    seed: int = 0,
    cot: bool = False,
) -> List[FewShotRow]:
    ks = tuple(ks)
    rows = []
    for k in ks:
        setup = FewShotSetup(k=k, seed=seed, cot=cot, allowed=ks)
        rows.append(run_fewshot_eval(model, setup, train_set, test_set))
    return rows


# ---------------------------------------------------------------------------
# Delimited report files
# ---------------------------------------------------------------------------


DOMAIN_ORDER = [d.value for d in Domain]


def write_metrics_csv(path, reports: Dict[str, MetricsReport]) -> None:
    """One row per method: accuracy then per-domain precision/recall/F1."""
    header = ["method", "accuracy"]
    for name in DOMAIN_ORDER:
        header += [f"{name}_precision", f"{name}_recall", f"{name}_f1"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for method, report in reports.items():
            row = [method, f"{report.accuracy:.6f}"]
            for name in DOMAIN_ORDER:
                gm = report.per_domain[name]
                row += [f"{gm.precision:.6f}", f"{gm.recall:.6f}", f"{gm.f1:.6f}"]
            writer.writerow(row)


def write_fewshot_csv(path, rows: List[FewShotRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setup", "cot", "accuracy", "precision", "recall", "f1"])
        for row in rows:
            o = row.report.overall
            writer.writerow(
                [
                    f"{row.k}-shot",
                    int(row.cot),
                    f"{row.report.accuracy:.6f}",
                    f"{o.precision:.6f}",
                    f"{o.recall:.6f}",
                    f"{o.f1:.6f}",
                ]
            )


def write_ablation_csv(path, reports: Dict[str, MetricsReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "accuracy", "precision", "recall", "f1"])
        for method, report in reports.items():
            o = report.overall
            writer.writerow(
                [method, f"{report.accuracy:.6f}", f"{o.precision:.6f}", f"{o.recall:.6f}", f"{o.f1:.6f}"]
            )


def write_ratings_csv(path, summaries: Dict[str, RatingSummary]) -> None:
    """Display table: aspect means and total rounded to 2 decimals."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "exactness", "certainty", "detail", "total"])
        for method, s in summaries.items():
            writer.writerow([method, f"{s.exactness:.2f}", f"{s.certainty:.2f}", f"{s.detail:.2f}", f"{s.total:.2f}"])
