"""Synthetic benchmark forge.

Generates real base samples (procedural face scene + templated headline),
applies the five manipulation types through three approaches (face swap /
face edit on pixels, semantic reversal of a headline phrase, entity-name
replacement), filters base samples by image-text consistency, and assembles
a fully annotated, schema-valid dataset.

Every output is a pure function of (config, lexicon, seed): per-sample
generation draws from counter-based substreams, so parallel generation would
produce exactly the sequential result.
"""

from __future__ import annotations

import importlib.resources
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .data_model import (
    AUTH_FAKE,
    AUTH_REAL,
    BBox,
    Dataset,
    Domain,
    ManipClass,
    NewsSample,
    render_reasoning,
    split_reasoning,
)
from .encoders import ImageEncoder, TextEncoder, preprocess
from .seeding import stream_seed, substream

IMAGE_SIZE = 224

# Fixed seeds that are part of the forge definition, not of any run.
_PALETTE_SEED = 90101
_SCORER_SEED = 70211

REAL_CLUE = "No editing traces are visible and the headline matches the scene."

_STOPWORDS = {"the", "a", "an", "and", "of", "in", "on", "at", "for", "with", "after", "to"}

TEMPLATES: Dict[Domain, List[str]] = {
    Domain.ENTERTAINMENT: [
        "{name} premiere draws rave reviews at the film festival",
        "{name} receives heated extolling at the gala screening",
        "{name} stage return earns widespread praise from critics",
    ],
    Domain.SPORT: [
        "{name} returns triumphantly and receives heated extolling",
        "{name} clinches record victory at the national finals",
        "{name} makes roaring comeback in the relay decider",
    ],
    Domain.POLITICS: [
        "{name} wins landslide approval in the council vote",
        "{name} draws strong support at the downtown rally",
        "{name} reform plan earns widespread praise in the chamber",
    ],
    Domain.OTHERS: [
        "{name} rescue effort earns widespread praise from neighbors",
        "{name} receives warm welcome after the charity drive",
        "{name} harvest project shows bright outlook for the valley",
    ],
}

_DOMAIN_BASE_COLOR = {
    Domain.ENTERTAINMENT: (128, 48, 128),
    Domain.SPORT: (40, 120, 64),
    Domain.POLITICS: (48, 64, 140),
    Domain.OTHERS: (140, 110, 48),
}


class ForgeError(ValueError):
    pass


@dataclass
class Lexicon:
    """Reversal pairs for semantic flips plus a pool of replacement names."""

    reversal_pairs: Dict[str, str]
    entity_names: List[str]

    def __post_init__(self):
        if not self.reversal_pairs:
            raise ForgeError("lexicon needs at least one reversal pair")
        keys = set(self.reversal_pairs)
        values = set(self.reversal_pairs.values())
        if keys & values:
            raise ForgeError(f"reversal keys overlap values: {sorted(keys & values)}")
        if not self.entity_names:
            raise ForgeError("lexicon needs at least one entity name")
        if len(set(self.entity_names)) != len(self.entity_names):
            raise ForgeError("entity names must be distinct")


def load_lexicon(path) -> Lexicon:
    """Parse a lexicon file: ``key<TAB>value`` lines, then a [NAMES] section."""
    pairs: Dict[str, str] = {}
    names: List[str] = []
    in_names = False
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[NAMES]":
            in_names = True
            continue
        if in_names:
            names.append(line)
        else:
            if "\t" not in line:
                raise ForgeError(f"bad lexicon line (expected key<TAB>value): {line!r}")
            key, value = line.split("\t", 1)
            pairs[key.strip()] = value.strip()
    return Lexicon(reversal_pairs=pairs, entity_names=names)


def default_lexicon() -> Lexicon:
    ref = importlib.resources.files("fauxnews").joinpath("data/lexicon.txt")
    with importlib.resources.as_file(ref) as path:
        return load_lexicon(path)


@dataclass
class ForgeConfig:
    n_samples: int = 655
    manip_rate: float = 0.684
    multimodal_rate: float = 0.078
    domain_mix: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    consistency_threshold: float = -0.15
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ForgeError("n_samples must be >= 0")
        for name, rate in (("manip_rate", self.manip_rate), ("multimodal_rate", self.multimodal_rate)):
            if not 0.0 <= rate <= 1.0:
                raise ForgeError(f"{name} must lie in [0,1], got {rate}")
        if self.multimodal_rate > self.manip_rate:
            raise ForgeError("infeasible config: multimodal_rate exceeds manip_rate")
        mix = tuple(float(w) for w in self.domain_mix)
        if len(mix) != 4 or any(w < 0 for w in mix):
            raise ForgeError("domain_mix must be 4 nonnegative weights")
        total = sum(mix)
        if total <= 0:
            raise ForgeError("domain_mix weights must not all be zero")
        object.__setattr__(self, "domain_mix", tuple(w / total for w in mix))
        if not -1.0 <= self.consistency_threshold <= 1.0:
            raise ForgeError("consistency_threshold must lie in [-1,1]")

    @classmethod
    def from_mapping(cls, mapping: Dict[str, str]) -> "ForgeConfig":
        kwargs = {}
        if "n_samples" in mapping:
            kwargs["n_samples"] = int(mapping["n_samples"])
        for key in ("manip_rate", "multimodal_rate", "consistency_threshold"):
            if key in mapping:
                kwargs[key] = float(mapping[key])
        if "domain_mix" in mapping:
            kwargs["domain_mix"] = tuple(float(x) for x in str(mapping["domain_mix"]).split(","))
        if "seed" in mapping:
            kwargs["seed"] = int(mapping["seed"])
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Procedural imagery
# ---------------------------------------------------------------------------


def _palette_for_name(name: str) -> dict:
    """Deterministic face palette per entity name.

    Keying the look of the face to the name is what makes entity replacement
    detectable from content: after a swap of the name, face and headline no
    longer pair up.
    """
    rng = substream(_PALETTE_SEED, "palette", name)
    skin = np.array([200, 160, 130], dtype=np.int16) + rng.integers(-55, 56, size=3, dtype=np.int16)
    hair = rng.integers(10, 220, size=3, dtype=np.int16)
    accent = rng.integers(30, 226, size=3, dtype=np.int16)
    return {"skin": skin, "hair": hair, "accent": accent}


def _random_palette(rng: np.random.Generator) -> dict:
    skin = np.array([200, 160, 130], dtype=np.int16) + rng.integers(-55, 56, size=3, dtype=np.int16)
    hair = rng.integers(10, 220, size=3, dtype=np.int16)
    accent = rng.integers(30, 226, size=3, dtype=np.int16)
    return {"skin": skin, "hair": hair, "accent": accent}


def _draw_face(
    img: np.ndarray, rect: Tuple[int, int, int, int], palette: dict, seam: bool = False
) -> None:
    """Draw a stylized face filling the pixel rectangle (in place).

    With ``seam=True`` the ellipse outline is color-inverted, the systematic
    stitching artifact of a swapped-in face; it sits inside the face region so
    any crop that contains the face contains the cue.
    """
    x1, y1, x2, y2 = rect
    h, w = y2 - y1, x2 - x1
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ry, rx = max(h / 2.0, 1.0), max(w / 2.0, 1.0)
    radius = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    ellipse = radius <= 1.0
    region = img[y1:y2, x1:x2]
    backdrop = np.clip(palette["accent"] // 2 + 40, 0, 255).astype(np.uint8)
    region[:, :] = backdrop
    region[ellipse] = np.clip(palette["skin"], 0, 255).astype(np.uint8)
    hair_band = ellipse & (yy < h * 0.30)
    region[hair_band] = np.clip(palette["hair"], 0, 255).astype(np.uint8)
    for ex in (0.35, 0.65):
        eye = ((yy - h * 0.45) ** 2 + (xx - w * ex) ** 2) <= max(min(h, w) * 0.06, 1.0) ** 2
        region[eye & ellipse] = (30, 30, 30)
    mouth = (np.abs(yy - h * 0.72) <= max(h * 0.035, 1.0)) & (np.abs(xx - cx) <= w * 0.22)
    region[mouth & ellipse] = (96, 32, 32)
    if seam:
        outline = (radius <= 1.0) & (radius >= 0.70)
        region[outline] = region[outline] ^ 0x80


def _render_scene(rng: np.random.Generator, domain: Domain, name: str) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    size = IMAGE_SIZE
    base = np.array(_DOMAIN_BASE_COLOR[domain], dtype=np.int16)
    jitter = rng.integers(-8, 9, size=3, dtype=np.int16)
    top = np.clip(base + jitter + 36, 0, 255)
    bottom = np.clip(base + jitter - 24, 0, 255)
    ramp = np.linspace(0.0, 1.0, size)[:, None]
    rows = (top[None, :] * (1 - ramp) + bottom[None, :] * ramp).astype(np.int16)
    img = np.repeat(rows[:, None, :], size, axis=1)
    for _ in range(2):
        y0 = int(rng.integers(0, size - 12))
        height = int(rng.integers(6, 16))
        shade = rng.integers(-10, 11, size=3, dtype=np.int16)
        img[y0 : y0 + height] = np.clip(img[y0 : y0 + height] + shade, 0, 255)
    img = img.astype(np.uint8)

    cx = 0.5 + float(rng.uniform(-0.04, 0.04))
    cy = 0.5 + float(rng.uniform(-0.04, 0.04))
    bw = float(rng.uniform(0.26, 0.34))
    bh = float(rng.uniform(0.28, 0.36))
    x1 = int(round((cx - bw / 2) * size))
    y1 = int(round((cy - bh / 2) * size))
    x2 = x1 + max(int(round(bw * size)), 8)
    y2 = y1 + max(int(round(bh * size)), 8)
    rect = (max(x1, 0), max(y1, 0), min(x2, size), min(y2, size))
    _draw_face(img, rect, _palette_for_name(name))
    return img, rect


def _render_summary(headline: str) -> str:
    return (
        "The photo shows one person facing the camera against a plain backdrop. "
        f'The headline reports: "{headline}". '
        "The photo subject matches the kind of event the headline describes."
    )


def _rewrite_reasoning(sample: NewsSample, new_headline: str, extra_clue: Optional[str]) -> str:
    try:
        _, _, clue = split_reasoning(sample.reasoning)
    except ValueError:
        clue = REAL_CLUE
    clues = [] if clue == REAL_CLUE else [clue]
    if extra_clue:
        clues.append(extra_clue)
    if not clues:
        clues = [REAL_CLUE]
    return render_reasoning(1, _render_summary(new_headline), " ".join(clues))


# ---------------------------------------------------------------------------
# Base generation
# ---------------------------------------------------------------------------


def names_for_domain(lex: Lexicon, domain: Domain) -> List[str]:
    """Partition the name pool round-robin so each name has a home domain.

    Factual manipulation replaces the name with a uniform different pool name,
    which usually lands outside the home domain; the name-scene mismatch is
    what makes entity replacement detectable from content alone.
    """
    domains = list(Domain)
    idx = domains.index(domain)
    subset = [n for i, n in enumerate(lex.entity_names) if i % len(domains) == idx]
    return subset or lex.entity_names


def _domain_assignment(cfg: ForgeConfig) -> List[Domain]:
    domains = list(Domain)
    exact = [w * cfg.n_samples for w in cfg.domain_mix]
    counts = [int(np.floor(e)) for e in exact]
    remainders = sorted(range(4), key=lambda i: (-(exact[i] - counts[i]), i))
    short = cfg.n_samples - sum(counts)
    for i in range(short):
        counts[remainders[i % 4]] += 1
    assignment = [domains[i] for i in range(4) for _ in range(counts[i])]
    order = substream(cfg.seed, "domains").permutation(cfg.n_samples)
    return [assignment[i] for i in order]


def _base_sample(cfg: ForgeConfig, lex: Lexicon, index: int, domain: Domain, attempt: int = 0) -> NewsSample:
    rng = substream(cfg.seed, "base", index, attempt)
    name = str(rng.choice(names_for_domain(lex, domain)))
    template = str(rng.choice(TEMPLATES[domain]))
    headline = template.format(name=name)
    image, rect = _render_scene(rng, domain, name)
    bbox = BBox.from_pixels(*rect, IMAGE_SIZE, IMAGE_SIZE)
    reasoning = render_reasoning(0, _render_summary(headline), REAL_CLUE)
    return NewsSample(
        id=f"n{index:05d}",
        image=image,
        text=headline,
        domain=domain,
        label=0,
        fake_cls=ManipClass.ORIG,
        face_bbox=bbox,
        reasoning=reasoning,
    )


def generate_base(cfg: ForgeConfig, lex: Optional[Lexicon] = None) -> Dataset:
    """Generate the all-real base set (no consistency filtering here)."""
    lex = lex or default_lexicon()
    domains = _domain_assignment(cfg)
    samples = [_base_sample(cfg, lex, i, domains[i]) for i in range(cfg.n_samples)]
    return Dataset(samples=samples, split="train", seed=cfg.seed)


# ---------------------------------------------------------------------------
# Manipulations
# ---------------------------------------------------------------------------


def apply_image_manip(sample: NewsSample, mode: str, seed: int, strength: float = 0.6) -> NewsSample:
    """Replace (swap) or perturb (edit) the pixels inside the face region.

    No pixel outside the recorded box changes; for swaps, the 1-pixel border
    ring always changes (high bit flip), so the pixel-diff bounding box equals
    the recorded box exactly.
    """
    if mode not in ("swap", "edit"):
        raise ForgeError(f"unknown image manipulation mode {mode!r}")
    if sample.face_bbox is None:
        raise ForgeError(f"sample {sample.id}: no face region to manipulate")
    rng = substream(seed, "image", mode)
    h, w = sample.image.shape[0], sample.image.shape[1]
    x1, y1, x2, y2 = sample.face_bbox.to_pixels(w, h)
    image = sample.image.copy()
    center = f"({(sample.face_bbox.x1 + sample.face_bbox.x2) / 2:.2f}, {(sample.face_bbox.y1 + sample.face_bbox.y2) / 2:.2f})"
    if mode == "swap":
        _draw_face(image, (x1, y1, x2, y2), _random_palette(rng), seam=True)
        # border ring: guarantees the pixel-diff box equals the recorded box
        region = image[y1:y2, x1:x2]
        original = sample.image[y1:y2, x1:x2]
        region[0, :] = original[0, :] ^ 0x80
        region[-1, :] = original[-1, :] ^ 0x80
        region[:, 0] = original[:, 0] ^ 0x80
        region[:, -1] = original[:, -1] ^ 0x80
        clue = f"The face region near {center} shows abrupt color seams consistent with a swapped face."
    else:
        crop = image[y1:y2, x1:x2].astype(np.int16)
        # sign-consistent banding plus a channel tint, scaled by strength
        tint = rng.integers(-40, 41, size=3, dtype=np.int16)
        rows = np.arange(y2 - y1)
        bands = np.where((rows // 8) % 2 == 0, 128.0, -64.0)[:, None, None]
        delta = strength * (bands + tint[None, None, :].astype(np.float64))
        image[y1:y2, x1:x2] = np.clip(crop + np.round(delta).astype(np.int16), 0, 255).astype(np.uint8)
        clue = f"The face region near {center} shows local tone distortions consistent with attribute editing."
    return sample.copy(
        image=image,
        label=1,
        fake_cls=sample.fake_cls.with_image(),
        reasoning=_rewrite_reasoning(sample, sample.text, clue),
    )


def _find_reversal(text: str, lex: Lexicon) -> Optional[Tuple[int, str, str]]:
    best: Optional[Tuple[int, str, str]] = None
    for key, value in lex.reversal_pairs.items():
        m = re.search(r"(?<!\w)" + re.escape(key) + r"(?!\w)", text)
        if m is None:
            continue
        # earliest match wins; on ties prefer the longer key
        if best is None or m.start() < best[0] or (m.start() == best[0] and len(key) > len(best[1])):
            best = (m.start(), key, value)
    return best


def apply_text_manip(sample: NewsSample, lex: Lexicon) -> NewsSample:
    """Reverse the headline semantics by replacing one matched lexicon phrase."""
    found = _find_reversal(sample.text, lex)
    if found is None:
        raise ForgeError(f"sample {sample.id}: headline contains no reversal-pair key")
    start, key, value = found
    new_text = sample.text[:start] + value + sample.text[start + len(key) :]
    clue = f'The phrase "{value}" reverses the sentiment of the original coverage.'
    return sample.copy(
        text=new_text,
        label=1,
        fake_cls=sample.fake_cls.with_text(),
        reasoning=_rewrite_reasoning(sample, new_text, clue),
    )


def extract_entity(text: str) -> Optional[Tuple[int, str]]:
    """Toy recognizer: the longest run of capitalized tokens (earliest on ties),
    skipping a capitalized sentence-initial stopword."""
    tokens = list(re.finditer(r"\S+", text))
    runs: List[List[re.Match]] = []
    current: List[re.Match] = []
    for i, tok in enumerate(tokens):
        word = tok.group()
        is_cap = word[0].isupper()
        if is_cap and i == 0 and word.lower() in _STOPWORDS:
            is_cap = False
        if is_cap:
            current.append(tok)
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    if not runs:
        return None
    best = max(runs, key=lambda r: (len(r), -r[0].start()))
    return best[0].start(), text[best[0].start() : best[-1].end()]


def apply_fact_manip(sample: NewsSample, lex: Lexicon, seed: int) -> NewsSample:
    """Swap the main entity name for a different, seeded-random pool name."""
    found = extract_entity(sample.text)
    if found is None:
        raise ForgeError(f"sample {sample.id}: no recognizable entity in headline")
    start, entity = found
    candidates = [n for n in lex.entity_names if n != entity]
    if not candidates:
        raise ForgeError(f"sample {sample.id}: no alternative entity name available")
    rng = substream(seed, "fact")
    replacement = str(rng.choice(candidates))
    new_text = sample.text[:start] + replacement + sample.text[start + len(entity) :]
    clue = f"The person named {replacement} does not match the person pictured in this report."
    return sample.copy(
        text=new_text,
        label=1,
        fake_cls=sample.fake_cls.with_fact(),
        reasoning=_rewrite_reasoning(sample, new_text, clue),
    )


# ---------------------------------------------------------------------------
# Consistency scoring
# ---------------------------------------------------------------------------


class ConsistencyScorer:
    """Cosine similarity between pooled image and text embeddings."""

    def __init__(self, image_encoder: ImageEncoder, text_encoder: TextEncoder):
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder

    @staticmethod
    def cosine(a: torch.Tensor, b: torch.Tensor) -> float:
        na = float(torch.linalg.vector_norm(a))
        nb = float(torch.linalg.vector_norm(b))
        if na == 0.0 or nb == 0.0:
            return 0.0
        value = float(torch.dot(a, b)) / (na * nb)
        return max(-1.0, min(1.0, value))

    @torch.no_grad()
    def score(self, image: np.ndarray, text: str) -> float:
        taps = self.image_encoder(preprocess(image))
        pooled = taps[-1].mean(dim=(0, 1))
        return self.cosine(pooled, self.text_encoder(text))


_default_scorer: Optional[ConsistencyScorer] = None


def default_scorer() -> ConsistencyScorer:
    global _default_scorer
    if _default_scorer is None:
        _default_scorer = ConsistencyScorer(
            ImageEncoder(substream(_SCORER_SEED, "image")),
            TextEncoder(substream(_SCORER_SEED, "text")),
        )
    return _default_scorer


def consistency_score(image: np.ndarray, text: str) -> float:
    """Image-text consistency of one news item, in [-1, 1]."""
    return default_scorer().score(image, text)


# ---------------------------------------------------------------------------
# Full dataset assembly
# ---------------------------------------------------------------------------


def _type_assignment(cfg: ForgeConfig) -> List[ManipClass]:
    n = cfg.n_samples
    n_manip = int(round(n * cfg.manip_rate))
    n_cross = int(round(n * cfg.multimodal_rate))
    if n_cross > n_manip:
        raise ForgeError("infeasible config: multimodal_rate exceeds manip_rate")
    n_uni = n_manip - n_cross
    uni_types = [ManipClass.IMAGE, ManipClass.TEXT, ManipClass.FACT]
    cross_types = [ManipClass.IMAGE_TEXT, ManipClass.IMAGE_FACT]
    counts: Dict[ManipClass, int] = {t: n_uni // 3 for t in uni_types}
    for i in range(n_uni % 3):
        counts[uni_types[i]] += 1
    counts.update({t: n_cross // 2 for t in cross_types})
    for i in range(n_cross % 2):
        counts[cross_types[i]] += 1
    kinds = [ManipClass.ORIG] * (n - n_manip)
    for t in uni_types + cross_types:
        kinds.extend([t] * counts[t])
    order = substream(cfg.seed, "types").permutation(n)
    return [kinds[i] for i in order]


_MAX_CONSISTENCY_ATTEMPTS = 64


def forge_dataset(
    cfg: ForgeConfig,
    lex: Optional[Lexicon] = None,
    split: str = "train",
    scorer: Optional[ConsistencyScorer] = None,
) -> Dataset:
    """Forge a full dataset: filtered base samples plus assigned manipulations."""
    lex = lex or default_lexicon()
    scorer = scorer or default_scorer()
    domains = _domain_assignment(cfg)
    kinds = _type_assignment(cfg)
    samples = []
    for i in range(cfg.n_samples):
        base = None
        for attempt in range(_MAX_CONSISTENCY_ATTEMPTS):
            candidate = _base_sample(cfg, lex, i, domains[i], attempt)
            if scorer.score(candidate.image, candidate.text) >= cfg.consistency_threshold:
                base = candidate
                break
        if base is None:
            raise ForgeError(
                f"sample {i}: no base sample reached consistency "
                f">= {cfg.consistency_threshold} in {_MAX_CONSISTENCY_ATTEMPTS} attempts"
            )
        sample = base
        kind = kinds[i]
        if kind.involves_image:
            mode = str(substream(cfg.seed, "mode", i).choice(["swap", "edit"]))
            sample = apply_image_manip(sample, mode, seed=stream_seed(cfg.seed, "imanip", i))
        if kind.involves_text:
            sample = apply_text_manip(sample, lex)
        if kind.involves_fact:
            sample = apply_fact_manip(sample, lex, seed=stream_seed(cfg.seed, "fmanip", i))
        if sample.fake_cls != kind:
            raise ForgeError(f"sample {i}: assembled fake_cls {sample.fake_cls} != assigned {kind}")
        samples.append(sample)
    ds = Dataset(samples=samples, split=split, seed=cfg.seed)
    ds.validate()
    return ds


def compute_forge_stats(ds: Dataset) -> dict:
    domains = {d.value: 0 for d in Domain}
    classes = {m.value: 0 for m in ManipClass}
    for s in ds:
        domains[s.domain.value] += 1
        classes[s.fake_cls.value] += 1
    n = max(len(ds), 1)
    n_manip = sum(1 for s in ds if s.label == 1)
    n_cross = sum(1 for s in ds if s.fake_cls in (ManipClass.IMAGE_TEXT, ManipClass.IMAGE_FACT))
    return {
        "n_samples": len(ds),
        "split": ds.split,
        "seed": ds.seed,
        "domains": domains,
        "fake_cls": classes,
        "manip_rate": n_manip / n,
        "crossmodal_rate": n_cross / n,
    }
