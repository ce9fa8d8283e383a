"""Deterministic toy feature encoders.

Three small networks stand in for large pretrained backbones:
  * a 4-stage strided convolutional stack tapping multi-depth visual features,
  * a hashed bag-of-tokens text embedder with a linear projection,
  * a tiny convolutional face-crop encoder.

All parameters are float64, initialized from a named numpy substream, so every
forward pass is a pure, bit-reproducible function of (input, params).
"""

from __future__ import annotations

import hashlib
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data_model import BBox, CENTER_CROP

IMAGE_SIZE = 224


def _param(rng: np.random.Generator, shape, scale: float) -> nn.Parameter:
    return nn.Parameter(torch.from_numpy(rng.standard_normal(shape) * scale))


def preprocess(image: np.ndarray, size: int = IMAGE_SIZE) -> torch.Tensor:
    """uint8 HxWx3 image -> float64 size x size x 3 tensor scaled to [0,1]."""
    if not isinstance(image, np.ndarray) or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an HxWx3 image array")
    t = torch.from_numpy(np.ascontiguousarray(image)).to(torch.float64) / 255.0
    if t.shape[0] != size or t.shape[1] != size:
        nchw = t.permute(2, 0, 1).unsqueeze(0)
        nchw = F.interpolate(nchw, size=(size, size), mode="bilinear", align_corners=False)
        t = nchw.squeeze(0).permute(1, 2, 0).contiguous()
    return t


class ImageEncoder(nn.Module):
    """4-stage conv stack over a 224x224x3 input.

    Stem stride 4 then three stride-2 stages, tanh activations, so taps come
    out at spatial sizes 56, 28, 14, 7 with a shared channel width.
    """

    def __init__(self, rng: np.random.Generator, channels: int = 64, image_size: int = IMAGE_SIZE):
        super().__init__()
        self.channels = channels
        self.image_size = image_size
        self.stem_weight = _param(rng, (channels, 3, 4, 4), 1.0 / np.sqrt(3 * 16))
        self.stem_bias = _param(rng, (channels,), 0.2)
        self.stage_weights = nn.ParameterList(
            [_param(rng, (channels, channels, 3, 3), 1.0 / np.sqrt(channels * 9)) for _ in range(3)]
        )
        self.stage_biases = nn.ParameterList([_param(rng, (channels,), 0.2) for _ in range(3)])

    @property
    def tap_sizes(self) -> List[int]:
        s = self.image_size // 4
        return [s, (s + 1) // 2, ((s + 1) // 2 + 1) // 2, (((s + 1) // 2 + 1) // 2 + 1) // 2]

    def forward(self, image_hwc: torch.Tensor) -> List[torch.Tensor]:
        if image_hwc.shape != (self.image_size, self.image_size, 3):
            raise ValueError(
                f"expected {self.image_size}x{self.image_size}x3 input, got {tuple(image_hwc.shape)}"
            )
        x = (image_hwc.to(torch.float64) - 0.5) * 2.0
        x = x.permute(2, 0, 1).unsqueeze(0)
        taps = []
        x = torch.tanh(F.conv2d(x, self.stem_weight, self.stem_bias, stride=4))
        taps.append(x)
        for w, b in zip(self.stage_weights, self.stage_biases):
            x = torch.tanh(F.conv2d(x, w, b, stride=2, padding=1))
            taps.append(x)
        return [t.squeeze(0).permute(1, 2, 0) for t in taps]


def token_bucket(token: str, n_buckets: int) -> int:
    digest = hashlib.blake2s(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n_buckets


def tokenize(text: str) -> List[str]:
    # whitespace + lowercase only, by design
    return text.lower().split()


class TextEncoder(nn.Module):
    """Hashed bag-of-tokens embedding average followed by a linear projection.

    Token order never matters: embeddings are summed in sorted bucket order so
    permuted headlines produce bitwise identical features.
    """

    def __init__(self, rng: np.random.Generator, dim: int = 64, n_buckets: int = 512):
        super().__init__()
        self.dim = dim
        self.n_buckets = n_buckets
        self.table = _param(rng, (n_buckets, dim), 1.0)
        self.proj = _param(rng, (dim, dim), 1.0 / np.sqrt(dim))

    def forward(self, text: str) -> torch.Tensor:
        tokens = tokenize(text)
        if not tokens:
            raise ValueError("cannot encode empty text")
        buckets = sorted(token_bucket(t, self.n_buckets) for t in tokens)
        total = torch.zeros(self.dim, dtype=torch.float64)
        for b in buckets:
            total = total + self.table[b]
        return self.proj @ (total / len(buckets))


class FaceEncoder(nn.Module):
    """Small conv net over a pooled face crop.

    The crop comes from the box hint when present, otherwise from the central
    half of the image (test-time rule).
    """

    def __init__(self, rng: np.random.Generator, dim: int = 32, crop_size: int = 32):
        super().__init__()
        self.dim = dim
        self.crop_size = crop_size
        mid = max(dim // 2, 4)
        self.conv1_w = _param(rng, (mid, 3, 3, 3), 1.0 / np.sqrt(27))
        self.conv1_b = _param(rng, (mid,), 0.2)
        self.conv2_w = _param(rng, (dim, mid, 3, 3), 1.0 / np.sqrt(mid * 9))
        self.conv2_b = _param(rng, (dim,), 0.2)
        self.out_w = _param(rng, (dim, 2 * dim), 2.0 / np.sqrt(2 * dim))
        self.out_b = _param(rng, (dim,), 0.2)

    def extract_crop(self, image_hwc: torch.Tensor, bbox: Optional[BBox]) -> torch.Tensor:
        """Crop the (hinted or central) face region and pool it to a fixed size."""
        if bbox is None:
            bbox = CENTER_CROP
        if bbox.x2 <= bbox.x1 or bbox.y2 <= bbox.y1:
            raise ValueError("degenerate face bbox with zero area")
        h, w = image_hwc.shape[0], image_hwc.shape[1]
        x1, y1, x2, y2 = bbox.to_pixels(w, h)
        crop = image_hwc[y1:y2, x1:x2, :].permute(2, 0, 1).unsqueeze(0)
        crop = F.adaptive_avg_pool2d(crop, (self.crop_size, self.crop_size))
        return crop.squeeze(0)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        """(B,3,S,S) crop batch -> (B, dim) face features."""
        x = (crops - 0.5) * 2.0
        x = torch.tanh(F.conv2d(x, self.conv1_w, self.conv1_b, stride=2, padding=1))
        x = torch.tanh(F.conv2d(x, self.conv2_w, self.conv2_b, stride=2, padding=1))
        # first and second spatial moments: the energy term keeps texture
        # patterns visible after pooling, and stays smooth for gradient checks
        pooled = torch.cat([x.mean(dim=(2, 3)), (x * x).mean(dim=(2, 3))], dim=1)
        return pooled @ self.out_w.T + self.out_b

    def encode(self, image_hwc: torch.Tensor, bbox: Optional[BBox] = None) -> torch.Tensor:
        return self.forward(self.extract_crop(image_hwc, bbox).unsqueeze(0)).squeeze(0)
