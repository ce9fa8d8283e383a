"""Full detection/reasoning model: encoders + fusion + prompt learner + decoder.

Parameters are grouped into six named components so the training stages can
freeze and checkpoint them independently. Modality ablation replaces the
dropped encoder's output with zeros of the right shape, leaving every
downstream shape unchanged.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .data_model import BBox, NewsSample
from .encoders import FaceEncoder, ImageEncoder, TextEncoder, preprocess
from .fusion import CrossModalFusion
from .prompt_reasoner import (
    EOS,
    VOCAB_SIZE,
    HeadOutput,
    PromptLearner,
    ReasoningOutput,
    ToyDecoder,
    encode_bytes,
)
from .seeding import substream

GROUPS = (
    "encoders.image",
    "encoders.text",
    "encoders.face",
    "fusion",
    "prompt_learner",
    "decoder",
)

MODALITIES = ("image", "text", "face")

# module attribute prefix -> parameter group
_PREFIX_TO_GROUP = {
    "image_encoder": "encoders.image",
    "text_encoder": "encoders.text",
    "face_encoder": "encoders.face",
    "fusion": "fusion",
    "prompt": "prompt_learner",
    "decoder": "decoder",
}

# group -> checkpoint file stem
GROUP_FILES = {
    "encoders.image": "image_encoder",
    "encoders.text": "text_encoder",
    "encoders.face": "face_encoder",
    "fusion": "fusion",
    "prompt_learner": "prompt_learner",
    "decoder": "decoder",
}


@dataclass
class ModelConfig:
    image_size: int = 224
    c_image: int = 64
    c_text: int = 64
    c_fusion: int = 64
    c_face: int = 32
    text_buckets: int = 512
    face_crop: int = 32
    head_hidden: int = 64
    converter_hidden: int = 256
    k_converter: int = 4
    k_semantic: int = 4
    k_adaptive: int = 8
    embed_dim: int = 128
    gru_hidden: int = 128
    vocab_size: int = VOCAB_SIZE

    @classmethod
    def small(cls) -> "ModelConfig":
        """Tiny configuration for gradient checks and fast tests."""
        return cls(
            image_size=32,
            c_image=8,
            c_text=8,
            c_fusion=8,
            c_face=4,
            text_buckets=64,
            face_crop=8,
            head_hidden=8,
            converter_hidden=16,
            k_converter=2,
            k_semantic=2,
            k_adaptive=2,
            embed_dim=16,
            gru_hidden=16,
        )

    @classmethod
    def preset(cls, name: str) -> "ModelConfig":
        if name == "default":
            return cls()
        if name == "small":
            return cls.small()
        raise ValueError(f"unknown model preset {name!r}")


@dataclass
class FeatureSet:
    taps: List[torch.Tensor]
    text_feature: torch.Tensor
    face_feature: torch.Tensor
    pooled_deep: torch.Tensor


@dataclass
class AnalysisResult:
    features: FeatureSet
    fused: torch.Tensor
    head: HeadOutput
    prompt_rows: torch.Tensor


class NewsModel(nn.Module):
    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0, drop: FrozenSet[str] = frozenset()):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        self.seed = seed
        self.drop = frozenset(drop)
        if not self.drop <= set(MODALITIES):
            raise ValueError(f"drop must be a subset of {MODALITIES}")
        if self.drop == set(MODALITIES):
            raise ValueError("cannot drop all modalities")
        self.image_encoder = ImageEncoder(
            substream(seed, "init", "image"), channels=cfg.c_image, image_size=cfg.image_size
        )
        self.text_encoder = TextEncoder(substream(seed, "init", "text"), dim=cfg.c_text, n_buckets=cfg.text_buckets)
        self.face_encoder = FaceEncoder(substream(seed, "init", "face"), dim=cfg.c_face, crop_size=cfg.face_crop)
        self.fusion = CrossModalFusion(
            substream(seed, "init", "fusion"),
            c_image=cfg.c_image,
            c_text=cfg.c_text,
            c_fusion=cfg.c_fusion,
            c_face=cfg.c_face,
        )
        self.prompt = PromptLearner(
            substream(seed, "init", "prompt"),
            fusion_dim=self.fusion.fusion_dim,
            c_image=cfg.c_image,
            embed_dim=cfg.embed_dim,
            k_converter=cfg.k_converter,
            k_semantic=cfg.k_semantic,
            k_adaptive=cfg.k_adaptive,
            head_hidden=cfg.head_hidden,
            converter_hidden=cfg.converter_hidden,
        )
        self.decoder = ToyDecoder(
            substream(seed, "init", "decoder"),
            embed_dim=cfg.embed_dim,
            hidden=cfg.gru_hidden,
            vocab_size=cfg.vocab_size,
        )

    # ---- parameter grouping -------------------------------------------------

    def group_of(self, param_name: str) -> str:
        prefix = param_name.split(".", 1)[0]
        return _PREFIX_TO_GROUP[prefix]

    def parameters_in(self, groups) -> List[nn.Parameter]:
        wanted = set(groups)
        return [p for name, p in self.named_parameters() if self.group_of(name) in wanted]

    def set_trainable(self, groups) -> None:
        wanted = set(groups)
        for name, p in self.named_parameters():
            p.requires_grad_(self.group_of(name) in wanted)

    # ---- ablation ------------------------------------------------------------

    def with_drop(self, drop) -> "NewsModel":
        """Shallow copy sharing all parameters, with the given modalities zeroed."""
        drop = frozenset(drop)
        if not drop <= set(MODALITIES):
            raise ValueError(f"drop must be a subset of {MODALITIES}")
        if drop == set(MODALITIES):
            raise ValueError("cannot drop all modalities")
        clone = copy.copy(self)
        clone.drop = drop
        return clone

    # ---- forward paths --------------------------------------------------------

    def _zero_taps(self) -> List[torch.Tensor]:
        return [
            torch.zeros((s, s, self.config.c_image), dtype=torch.float64)
            for s in self.image_encoder.tap_sizes
        ]

    def encode(
        self,
        image: np.ndarray,
        text: str,
        bbox_hint: Optional[BBox] = None,
    ) -> FeatureSet:
        img = preprocess(image, self.config.image_size)
        if "image" in self.drop:
            taps = self._zero_taps()
        else:
            taps = self.image_encoder(img)
        if "text" in self.drop:
            text_feature = torch.zeros(self.config.c_text, dtype=torch.float64)
        else:
            text_feature = self.text_encoder(text)
        if "face" in self.drop:
            face_feature = torch.zeros(self.config.c_face, dtype=torch.float64)
        else:
            face_feature = self.face_encoder.encode(img, bbox_hint)
        return FeatureSet(
            taps=taps,
            text_feature=text_feature,
            face_feature=face_feature,
            pooled_deep=taps[-1].mean(dim=(0, 1)),
        )

    def analyze(self, image: np.ndarray, text: str, bbox_hint: Optional[BBox] = None) -> AnalysisResult:
        fs = self.encode(image, text, bbox_hint)
        fused = self.fusion.fuse(fs.taps, fs.text_feature, fs.face_feature)
        prompt_rows, head = self.prompt(fused, fs.pooled_deep)
        return AnalysisResult(features=fs, fused=fused, head=head, prompt_rows=prompt_rows)

    def analyze_sample(self, sample: NewsSample, use_gt_bbox: bool = False) -> AnalysisResult:
        hint = sample.face_bbox if use_gt_bbox else None
        return self.analyze(sample.image, sample.text, hint)

    @torch.no_grad()
    def generate(
        self,
        image: np.ndarray,
        text: str,
        bbox_hint: Optional[BBox] = None,
        max_len: int = 256,
    ) -> ReasoningOutput:
        result = self.analyze(image, text, bbox_hint)
        return self.decoder.generate(result.prompt_rows, encode_bytes(text), max_len=max_len, end_token=EOS)

    # ---- persistence ----------------------------------------------------------

    def state_arrays(self, group: Optional[str] = None) -> Dict[str, np.ndarray]:
        out = {}
        for name, p in self.named_parameters():
            if group is None or self.group_of(name) == group:
                out[name] = p.detach().numpy().copy()
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        with torch.no_grad():
            for name, arr in arrays.items():
                if name not in params:
                    raise ckpt.CheckpointError(f"unknown parameter {name!r}")
                if tuple(params[name].shape) != tuple(arr.shape):
                    raise ckpt.CheckpointError(
                        f"shape mismatch for {name!r}: {tuple(arr.shape)} vs {tuple(params[name].shape)}"
                    )
                params[name].copy_(torch.from_numpy(np.ascontiguousarray(arr)))

    def save_checkpoints(self, directory) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for group, stem in GROUP_FILES.items():
            path = directory / f"{stem}.ckpt"
            ckpt.save_checkpoint(path, self.state_arrays(group))
            paths[group] = path
        return paths

    def load_checkpoints(self, directory) -> None:
        directory = Path(directory)
        for group, stem in GROUP_FILES.items():
            path = directory / f"{stem}.ckpt"
            if not path.exists():
                raise ckpt.CheckpointError(f"missing checkpoint file: {path}")
            self.load_state_arrays(ckpt.load_checkpoint(path))
