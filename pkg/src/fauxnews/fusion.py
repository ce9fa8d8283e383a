"""Cross-modal fusion.

Per depth, the visual tap is flattened to spatial tokens and rectified by a
bias-free linear map. Each token gets a scalar score against the (mapped) text
feature; the score-weighted token average, normalized by token count instead
of a softmax, passes through a learned square output map to give one cross
feature per depth. The four cross features concatenate with the face feature.
"""

from __future__ import annotations

from typing import List

import numpy as np
import torch
from torch import nn


def _param(rng: np.random.Generator, shape, scale: float) -> nn.Parameter:
    return nn.Parameter(torch.from_numpy(rng.standard_normal(shape) * scale))


class CrossModalFusion(nn.Module):
    def __init__(
        self,
        rng: np.random.Generator,
        n_depths: int = 4,
        c_image: int = 64,
        c_text: int = 64,
        c_fusion: int = 64,
        c_face: int = 32,
    ):
        super().__init__()
        self.n_depths = n_depths
        self.c_image = c_image
        self.c_text = c_text
        self.c_fusion = c_fusion
        self.c_face = c_face
        self.rect_maps = nn.ParameterList(
            [_param(rng, (c_fusion, c_image), 1.0 / np.sqrt(c_image)) for _ in range(n_depths)]
        )
        self.text_query = _param(rng, (c_fusion, c_text), 1.0 / np.sqrt(c_text))
        # gain keeps cross features near unit scale after the token average
        self.out_map = _param(rng, (c_fusion, c_fusion), 3.0 / np.sqrt(c_fusion))

    @property
    def fusion_dim(self) -> int:
        return self.n_depths * self.c_fusion + self.c_face

    def rectify(self, tap_hwc: torch.Tensor, depth: int) -> torch.Tensor:
        """Flatten an (H,W,C) tap to (H*W, c_fusion) tokens through the depth's map."""
        if tap_hwc.shape[-1] != self.c_image:
            raise ValueError(f"tap channel dim {tap_hwc.shape[-1]} != {self.c_image}")
        tokens = tap_hwc.reshape(-1, self.c_image)
        return tokens @ self.rect_maps[depth].T

    def cross_fuse(self, tokens: torch.Tensor, text_feature: torch.Tensor) -> torch.Tensor:
        """Score-weighted token average against the text feature, then output map."""
        if text_feature.shape[-1] != self.c_text:
            raise ValueError(f"text feature dim {text_feature.shape[-1]} != {self.c_text}")
        query = self.text_query @ text_feature
        scores = tokens @ query
        pooled = (scores.unsqueeze(-1) * tokens).sum(dim=0) / tokens.shape[0]
        return self.out_map @ pooled

    def cross_features(self, taps: List[torch.Tensor], text_feature: torch.Tensor) -> List[torch.Tensor]:
        if len(taps) != self.n_depths:
            raise ValueError(f"expected {self.n_depths} taps, got {len(taps)}")
        return [self.cross_fuse(self.rectify(tap, i), text_feature) for i, tap in enumerate(taps)]

    def fuse(
        self,
        taps: List[torch.Tensor],
        text_feature: torch.Tensor,
        face_feature: torch.Tensor,
    ) -> torch.Tensor:
        """Concatenate the per-depth cross features with the face feature."""
        if face_feature.shape[-1] != self.c_face:
            raise ValueError(f"face feature dim {face_feature.shape[-1]} != {self.c_face}")
        parts = self.cross_features(taps, text_feature) + [face_feature]
        return torch.cat(parts, dim=-1)

    def cross_slice(self, fused: torch.Tensor, depth: int) -> torch.Tensor:
        return fused[..., depth * self.c_fusion : (depth + 1) * self.c_fusion]

    def face_slice(self, fused: torch.Tensor) -> torch.Tensor:
        return fused[..., self.n_depths * self.c_fusion :]
