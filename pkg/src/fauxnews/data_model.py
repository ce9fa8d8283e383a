"""Canonical record types and bit-exact persistence for benchmark datasets.

A dataset is a line-delimited UTF-8 record file (one JSON object per line,
fixed key order) plus a sibling directory of losslessly stored PNG images and
a small ``.meta.json`` carrying the split tag and provenance seed.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

AUTH_TAG = "[AUTH]"
SUMMARY_TAG = "[SUMMARY]"
CLUE_TAG = "[CLUE]"
AUTH_REAL = "Yes, the news is real"
AUTH_FAKE = "No, the news is fake"

RECORD_KEYS = ("id", "image", "text", "domain", "label", "fake_cls", "face_bbox", "reasoning")
SPLITS = ("train", "test")


class SchemaError(ValueError):
    """A record violated the dataset schema. Carries record index and field."""

    def __init__(self, message: str, record_index: Optional[int] = None, field_name: Optional[str] = None):
        self.record_index = record_index
        self.field_name = field_name
        self.bare_message = message
        prefix = ""
        if record_index is not None:
            prefix += f"record {record_index}: "
        if field_name is not None:
            prefix += f"field '{field_name}': "
        super().__init__(prefix + message)


class Domain(str, Enum):
    ENTERTAINMENT = "entertainment"
    SPORT = "sport"
    POLITICS = "politics"
    OTHERS = "others"

    @classmethod
    def parse(cls, value: str) -> "Domain":
        try:
            return cls(value)
        except ValueError:
            raise SchemaError(f"unknown domain {value!r}", field_name="domain") from None


class ManipClass(str, Enum):
    ORIG = "orig"
    IMAGE = "image"
    TEXT = "text"
    FACT = "fact"
    IMAGE_TEXT = "image&text"
    IMAGE_FACT = "image&fact"

    @classmethod
    def parse(cls, value: str) -> "ManipClass":
        try:
            return cls(value)
        except ValueError:
            raise SchemaError(f"unknown fake_cls {value!r}", field_name="fake_cls") from None

    @property
    def involves_image(self) -> bool:
        return self in (ManipClass.IMAGE, ManipClass.IMAGE_TEXT, ManipClass.IMAGE_FACT)

    @property
    def involves_text(self) -> bool:
        return self in (ManipClass.TEXT, ManipClass.IMAGE_TEXT)

    @property
    def involves_fact(self) -> bool:
        return self in (ManipClass.FACT, ManipClass.IMAGE_FACT)

    def with_image(self) -> "ManipClass":
        mapping = {
            ManipClass.ORIG: ManipClass.IMAGE,
            ManipClass.IMAGE: ManipClass.IMAGE,
            ManipClass.TEXT: ManipClass.IMAGE_TEXT,
            ManipClass.FACT: ManipClass.IMAGE_FACT,
            ManipClass.IMAGE_TEXT: ManipClass.IMAGE_TEXT,
            ManipClass.IMAGE_FACT: ManipClass.IMAGE_FACT,
        }
        return mapping[self]

    def with_text(self) -> "ManipClass":
        if self in (ManipClass.ORIG, ManipClass.TEXT):
            return ManipClass.TEXT
        if self in (ManipClass.IMAGE, ManipClass.IMAGE_TEXT):
            return ManipClass.IMAGE_TEXT
        raise ValueError(f"cannot combine text manipulation with {self.value}")

    def with_fact(self) -> "ManipClass":
        if self in (ManipClass.ORIG, ManipClass.FACT):
            return ManipClass.FACT
        if self in (ManipClass.IMAGE, ManipClass.IMAGE_FACT):
            return ManipClass.IMAGE_FACT
        raise ValueError(f"cannot combine factual manipulation with {self.value}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized [0,1] coordinates, corners strictly ordered."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name, v in (("x1", self.x1), ("y1", self.y1), ("x2", self.x2), ("y2", self.y2)):
            if not (0.0 <= v <= 1.0):
                raise SchemaError(f"coordinate {name}={v} outside [0,1]", field_name="face_bbox")
        if not self.x1 < self.x2:
            raise SchemaError("x1<x2 violated", field_name="face_bbox")
        if not self.y1 < self.y2:
            raise SchemaError("y1<y2 violated", field_name="face_bbox")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, values) -> "BBox":
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise SchemaError("face_bbox must be a 4-array or null", field_name="face_bbox")
        return cls(*(float(v) for v in values))

    def to_pixels(self, width: int, height: int) -> tuple:
        """Integer pixel rectangle (x1, y1, x2, y2), end-exclusive, at least 1x1.

        The 1e-9 guards keep boxes that were built from pixel corners snapping
        back to exactly those corners despite float division round-off.
        """
        x1 = int(np.floor(self.x1 * width + 1e-9))
        y1 = int(np.floor(self.y1 * height + 1e-9))
        x2 = max(x1 + 1, int(np.ceil(self.x2 * width - 1e-9)))
        y2 = max(y1 + 1, int(np.ceil(self.y2 * height - 1e-9)))
        return x1, y1, min(x2, width), min(y2, height)

    @classmethod
    def from_pixels(cls, x1: int, y1: int, x2: int, y2: int, width: int, height: int) -> "BBox":
        return cls(x1 / width, y1 / height, x2 / width, y2 / height)


# Test-time face crop when no box hint is available: the central third of the
# image, matching the typical extent of a centered portrait face.
CENTER_CROP = BBox(1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)


@dataclass
class NewsSample:
    """One image-text news item with labels and a reasoning annotation."""

    id: str
    image: np.ndarray
    text: str
    domain: Domain
    label: int
    fake_cls: ManipClass
    face_bbox: Optional[BBox] = None
    reasoning: str = ""

    def validate(self, record_index: Optional[int] = None) -> None:
        def fail(msg, fname):
            raise SchemaError(msg, record_index=record_index, field_name=fname)

        if not isinstance(self.id, str) or not self.id:
            fail("id must be a non-empty string", "id")
        img = self.image
        if not isinstance(img, np.ndarray) or img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            fail("image must be an HxWx3 uint8 array", "image")
        if not isinstance(self.text, str) or not self.text.strip():
            fail("text must be a non-empty headline", "text")
        if not isinstance(self.domain, Domain):
            fail(f"unknown domain {self.domain!r}", "domain")
        if self.label not in (0, 1):
            fail(f"label must be 0 or 1, got {self.label!r}", "label")
        if not isinstance(self.fake_cls, ManipClass):
            fail(f"unknown fake_cls {self.fake_cls!r}", "fake_cls")
        if (self.label == 0) != (self.fake_cls == ManipClass.ORIG):
            fail(
                f"label={self.label} inconsistent with fake_cls={self.fake_cls.value} "
                "(label=0 iff fake_cls=orig)",
                "fake_cls",
            )
        if self.fake_cls.involves_image and self.face_bbox is None:
            fail(f"fake_cls={self.fake_cls.value} requires face_bbox", "face_bbox")
        if self.face_bbox is not None and not isinstance(self.face_bbox, BBox):
            fail("face_bbox must be a BBox or None", "face_bbox")
        if not isinstance(self.reasoning, str) or not self.reasoning.strip():
            fail("reasoning must be non-empty", "reasoning")

    def copy(self, **changes) -> "NewsSample":
        out = replace(self, **changes)
        if "image" not in changes:
            out.image = self.image.copy()
        return out


@dataclass
class Dataset:
    """Ordered collection of samples with a split tag and provenance seed."""

    samples: list = field(default_factory=list)
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise SchemaError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen = set()
        for i, s in enumerate(self.samples):
            if s.id in seen:
                raise SchemaError(f"duplicate sample id {s.id!r}", record_index=i, field_name="id")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self, sample_id: str) -> NewsSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def validate(self) -> None:
        for i, s in enumerate(self.samples):
            s.validate(record_index=i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.split != other.split or self.seed != other.seed or len(self) != len(other):
            return False
        for a, b in zip(self.samples, other.samples):
            if (
                a.id != b.id
                or a.text != b.text
                or a.domain != b.domain
                or a.label != b.label
                or a.fake_cls != b.fake_cls
                or a.face_bbox != b.face_bbox
                or a.reasoning != b.reasoning
                or not np.array_equal(a.image, b.image)
            ):
                return False
        return True


def split_reasoning(reasoning: str) -> tuple:
    """Split an annotation into its (authenticity, summary, clue) parts."""
    ia = reasoning.find(AUTH_TAG)
    isum = reasoning.find(SUMMARY_TAG)
    ic = reasoning.find(CLUE_TAG)
    if min(ia, isum, ic) < 0 or not (ia < isum < ic):
        raise ValueError("reasoning does not contain the three ordered sections")
    auth = reasoning[ia + len(AUTH_TAG) : isum].strip()
    summary = reasoning[isum + len(SUMMARY_TAG) : ic].strip()
    clue = reasoning[ic + len(CLUE_TAG) :].strip()
    return auth, summary, clue


def render_reasoning(label: int, summary: str, clue: str) -> str:
    phrase = AUTH_FAKE if label == 1 else AUTH_REAL
    return f"{AUTH_TAG} {phrase}. {SUMMARY_TAG} {summary} {CLUE_TAG} {clue}"


def validate_reasoning(sample: NewsSample) -> list:
    """Return structural violations of the three-part reasoning annotation.

    Empty list means: the [AUTH], [SUMMARY], [CLUE] sections appear in order
    and the authenticity sentence agrees with the sample label.
    """
    text = sample.reasoning or ""
    violations = []
    ia = text.find(AUTH_TAG)
    isum = text.find(SUMMARY_TAG)
    ic = text.find(CLUE_TAG)
    if ia < 0:
        violations.append("missing-auth")
    if isum < 0:
        violations.append("missing-summary")
    if ic < 0:
        violations.append("missing-clue")
    if violations:
        return violations
    if not (ia < isum < ic):
        return ["section-order"]
    auth_part = text[ia + len(AUTH_TAG) : isum].strip()
    summary_part = text[isum + len(SUMMARY_TAG) : ic].strip()
    clue_part = text[ic + len(CLUE_TAG) :].strip()
    expected = AUTH_FAKE if sample.label == 1 else AUTH_REAL
    if not auth_part.startswith(expected):
        violations.append("authenticity-mismatch")
    if not summary_part:
        violations.append("empty-summary")
    if not clue_part:
        violations.append("empty-clue")
    return violations


def _images_dir(path: Path) -> Path:
    return path.parent / (path.stem + "_images")


def _meta_path(path: Path) -> Path:
    return path.parent / (path.name + ".meta.json")


def _record_to_json(sample: NewsSample, image_rel: str) -> str:
    record = {
        "id": sample.id,
        "image": image_rel,
        "text": sample.text,
        "domain": sample.domain.value,
        "label": sample.label,
        "fake_cls": sample.fake_cls.value,
        "face_bbox": None if sample.face_bbox is None else sample.face_bbox.to_list(),
        "reasoning": sample.reasoning,
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: Dataset, path) -> None:
    """Persist a dataset: JSONL records, PNG images, and a meta sidecar.

    ``load_dataset(save_dataset(ds))`` is the identity; metadata bytes are
    stable across repeated save/load cycles.
    """
    path = Path(path)
    ds.validate()
    path.parent.mkdir(parents=True, exist_ok=True)
    img_dir = _images_dir(path)
    img_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for sample in ds.samples:
        rel = f"{img_dir.name}/{sample.id}.png"
        Image.fromarray(sample.image).save(img_dir / f"{sample.id}.png", format="PNG")
        lines.append(_record_to_json(sample, rel))
    body = ("\n".join(lines) + "\n") if lines else ""
    _atomic_write_bytes(path, body.encode("utf-8"))
    meta = json.dumps({"seed": ds.seed, "split": ds.split}, sort_keys=True) + "\n"
    _atomic_write_bytes(_meta_path(path), meta.encode("utf-8"))


def load_dataset(path) -> Dataset:
    """Load a JSONL dataset, validating every record against the schema."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"dataset file not found: {path}")
    split, seed = "train", 0
    meta_file = _meta_path(path)
    if meta_file.exists():
        meta = json.loads(meta_file.read_text(encoding="utf-8"))
        split = meta.get("split", "train")
        seed = int(meta.get("seed", 0))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", record_index=index) from None
            missing = [k for k in RECORD_KEYS if k not in record]
            if missing:
                raise SchemaError(f"missing keys {missing}", record_index=index, field_name=missing[0])
            img_path = path.parent / record["image"]
            if not img_path.exists():
                raise SchemaError(f"missing image file: {img_path}", record_index=index, field_name="image")
            image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.uint8)
            try:
                bbox = None if record["face_bbox"] is None else BBox.from_list(record["face_bbox"])
                sample = NewsSample(
                    id=str(record["id"]),
                    image=image,
                    text=record["text"],
                    domain=Domain.parse(record["domain"]),
                    label=int(record["label"]),
                    fake_cls=ManipClass.parse(record["fake_cls"]),
                    face_bbox=bbox,
                    reasoning=record["reasoning"],
                )
                sample.validate(record_index=index)
            except SchemaError as exc:
                if exc.record_index is None:
                    raise SchemaError(exc.bare_message, record_index=index, field_name=exc.field_name) from None
                raise
            samples.append(sample)
    return Dataset(samples=samples, split=split, seed=seed)
