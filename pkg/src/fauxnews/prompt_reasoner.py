"""Prediction head, hybrid prompt learner, and the toy reasoning decoder.

The prompt learner emits prefix embeddings from three sources: a converter fed
by the fusion feature plus gradient-stopped head outputs, a semantic map over
the pooled deepest visual tap, and free adaptive embeddings. A 2-layer GRU
over a byte-level vocabulary stands in for the language model; it consumes the
prefix rows, the embedded headline bytes, and then decodes greedily.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259

LOG_CLAMP = 1e-12


def encode_bytes(text: str) -> List[int]:
    return list(text.encode("utf-8"))


def decode_tokens(tokens: Sequence[int]) -> str:
    data = bytes(t for t in tokens if 0 <= t < 256)
    return data.decode("utf-8", errors="replace")


def _param(rng: np.random.Generator, shape, scale: float) -> nn.Parameter:
    return nn.Parameter(torch.from_numpy(rng.standard_normal(shape) * scale))


@dataclass
class HeadOutput:
    """Fake probability and predicted box (corner form), plus raw internals."""

    p: torch.Tensor          # (B,) in (0,1), probability of the fake class
    bbox: torch.Tensor       # (B,4) corners x1,y1,x2,y2, always validly ordered
    raw_box: torch.Tensor    # (B,4) squashed cx,cy,w,h before corner conversion
    logit: torch.Tensor      # (B,) pre-sigmoid authenticity logit


class PredictionHead(nn.Module):
    """Head on the fusion feature: fake probability + box.

    A linear path plus a small tanh branch; the linear path is what lets
    plain SGD at small learning rates make classification progress quickly.
    The box is produced as squashed (cx, cy, w, h) and converted to corners
    via x1 = cx*(1-w), x2 = x1 + w (same for y), which keeps x1 < x2 and
    y1 < y2 inside [0,1] without clamping.
    """

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int = 64):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = hidden
        # classification branch: linear skip + tanh hidden. The skip lane lets
        # the self-damping logistic loss exploit the large-norm fusion features
        # at small learning rates; the L1 box objective would ring there, so
        # the box branch gets its own bounded tanh trunk instead.
        self.skip_w = _param(rng, (in_dim,), 0.1 / np.sqrt(in_dim))
        self.skip_b = _param(rng, (1,), 0.0)
        self.cls_w1 = _param(rng, (hidden, in_dim), 2.5 / np.sqrt(in_dim))
        self.cls_b1 = _param(rng, (hidden,), 0.0)
        self.cls_w2 = _param(rng, (1, hidden), 0.5 / np.sqrt(hidden))
        self.cls_b2 = _param(rng, (1,), 0.0)
        self.box_w1 = _param(rng, (hidden, in_dim), 2.5 / np.sqrt(in_dim))
        self.box_b1 = _param(rng, (hidden,), 0.0)
        self.box_w2 = _param(rng, (4, hidden), 0.5 / np.sqrt(hidden))
        self.box_b2 = _param(rng, (4,), 0.0)

    def forward(self, fused: torch.Tensor) -> HeadOutput:
        single = fused.dim() == 1
        x = fused.unsqueeze(0) if single else fused
        hc = torch.tanh(x @ self.cls_w1.T + self.cls_b1)
        logit = (x @ self.skip_w + self.skip_b) + (hc @ self.cls_w2.T + self.cls_b2).squeeze(-1)
        hb = torch.tanh(x @ self.box_w1.T + self.box_b1)
        raw_box = hb @ self.box_w2.T + self.box_b2
        raw = torch.cat([logit.unsqueeze(1), raw_box], dim=1)
        p = torch.sigmoid(raw[:, 0])
        # steeper squash doubles the box-lane gradient without changing the
        # zero-input value (0.5) or the (0,1) range
        boxed = torch.sigmoid(2.0 * raw[:, 1:5])
        cx, cy, w, hgt = boxed[:, 0], boxed[:, 1], boxed[:, 2], boxed[:, 3]
        x1 = cx * (1.0 - w)
        y1 = cy * (1.0 - hgt)
        corners = torch.stack([x1, y1, x1 + w, y1 + hgt], dim=1)
        if single:
            return HeadOutput(p=p[0], bbox=corners[0], raw_box=boxed[0], logit=raw[0, 0])
        return HeadOutput(p=p, bbox=corners, raw_box=boxed, logit=raw[:, 0])

    def zero_(self) -> "PredictionHead":
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self


class PromptLearner(nn.Module):
    """Builds the prefix embedding matrix for the decoder.

    Row layout is fixed: converter rows, semantic rows, adaptive rows. The
    head outputs that guide the converter enter with gradients stopped, so the
    head is trained only by its own supervision.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        fusion_dim: int,
        c_image: int,
        embed_dim: int = 128,
        k_converter: int = 4,
        k_semantic: int = 4,
        k_adaptive: int = 8,
        head_hidden: int = 64,
        converter_hidden: int = 256,
    ):
        super().__init__()
        self.fusion_dim = fusion_dim
        self.embed_dim = embed_dim
        self.k_converter = k_converter
        self.k_semantic = k_semantic
        self.k_adaptive = k_adaptive
        self.head = PredictionHead(rng, fusion_dim, hidden=head_hidden)
        in_dim = fusion_dim + 5
        self.conv_w1 = _param(rng, (converter_hidden, in_dim), 1.0 / np.sqrt(in_dim))
        self.conv_b1 = _param(rng, (converter_hidden,), 0.0)
        self.conv_w2 = _param(rng, (k_converter * embed_dim, converter_hidden), 1.0 / np.sqrt(converter_hidden))
        self.conv_b2 = _param(rng, (k_converter * embed_dim,), 0.0)
        self.sem_w = _param(rng, (k_semantic * embed_dim, c_image), 1.0 / np.sqrt(c_image))
        self.sem_b = _param(rng, (k_semantic * embed_dim,), 0.0)
        self.adaptive = _param(rng, (k_adaptive, embed_dim), 0.1)

    @property
    def n_rows(self) -> int:
        return self.k_converter + self.k_semantic + self.k_adaptive

    def forward(self, fused: torch.Tensor, pooled_deep: torch.Tensor) -> tuple:
        """(B,fusion_dim),(B,c_image) -> ((B,K,D) prompt rows, HeadOutput)."""
        single = fused.dim() == 1
        x = fused.unsqueeze(0) if single else fused
        pooled = pooled_deep.unsqueeze(0) if pooled_deep.dim() == 1 else pooled_deep
        head_out = self.head(x)
        guidance = torch.cat([head_out.p.unsqueeze(1), head_out.bbox], dim=1).detach()
        conv_in = torch.cat([x, guidance], dim=1)
        h = torch.tanh(conv_in @ self.conv_w1.T + self.conv_b1)
        conv_rows = (h @ self.conv_w2.T + self.conv_b2).reshape(-1, self.k_converter, self.embed_dim)
        sem_rows = (pooled @ self.sem_w.T + self.sem_b).reshape(-1, self.k_semantic, self.embed_dim)
        ada_rows = self.adaptive.unsqueeze(0).expand(x.shape[0], -1, -1)
        prompt = torch.cat([conv_rows, sem_rows, ada_rows], dim=1)
        if single:
            return prompt[0], HeadOutput(
                p=head_out.p[0], bbox=head_out.bbox[0], raw_box=head_out.raw_box[0], logit=head_out.logit[0]
            )
        return prompt, head_out


@dataclass
class ReasoningOutput:
    """Greedy decode result: token ids, decoded text, chosen-token probabilities."""

    tokens: List[int]
    text: str
    probs: List[float]
    ended: bool  # True when the end token fired before the length cap


def token_nll(probs: Sequence[float]) -> float:
    """Mean negative log-likelihood of a per-token probability sequence."""
    if len(probs) == 0:
        raise ValueError("empty probability sequence")
    arr = np.clip(np.asarray(probs, dtype=np.float64), LOG_CLAMP, None)
    return float(-np.mean(np.log(arr)))


class ToyDecoder(nn.Module):
    """2-layer GRU over byte tokens, driven by prompt-row prefix embeddings."""

    def __init__(
        self,
        rng: np.random.Generator,
        embed_dim: int = 128,
        hidden: int = 128,
        vocab_size: int = VOCAB_SIZE,
        num_layers: int = 2,
    ):
        super().__init__()
        if vocab_size < 1:
            raise ValueError("vocabulary must be non-empty")
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.vocab_size = vocab_size
        self.num_layers = num_layers
        self.embedding = _param(rng, (vocab_size, embed_dim), 1.0)
        self.gru = nn.GRU(embed_dim, hidden, num_layers=num_layers).to(torch.float64)
        with torch.no_grad():
            for name, p in self.gru.named_parameters():
                fan_in = p.shape[-1] if p.dim() > 1 else hidden
                p.copy_(torch.from_numpy(rng.standard_normal(tuple(p.shape)) / np.sqrt(fan_in)))
        self.out_w = _param(rng, (vocab_size, hidden), 1.0 / np.sqrt(hidden))
        self.out_b = _param(rng, (vocab_size,), 0.0)

    def _embed(self, tokens: Sequence[int]) -> torch.Tensor:
        if any(t < 0 or t >= self.vocab_size for t in tokens):
            raise ValueError("token outside vocabulary")
        if not tokens:
            return torch.zeros((0, self.embed_dim), dtype=torch.float64)
        idx = torch.as_tensor(list(tokens), dtype=torch.long)
        return self.embedding[idx]

    def _logits(self, states: torch.Tensor) -> torch.Tensor:
        return states @ self.out_w.T + self.out_b

    def teacher_forced_loss(
        self,
        prompt_rows: torch.Tensor,
        target_tokens: Sequence[int],
        context_tokens: Sequence[int] = (),
    ) -> torch.Tensor:
        """Mean per-token NLL of the target under teacher forcing.

        Input sequence: prompt rows, embedded context, BOS, then the target
        shifted right. Differentiable to the prompt rows and all decoder
        parameters.
        """
        if len(target_tokens) == 0:
            raise ValueError("empty target sequence")
        target = list(target_tokens)
        inputs = torch.cat(
            [
                prompt_rows.reshape(-1, self.embed_dim),
                self._embed(context_tokens),
                self._embed([BOS % self.vocab_size]),
                self._embed(target[:-1]),
            ],
            dim=0,
        )
        out, _ = self.gru(inputs.unsqueeze(1))
        n_prefix = prompt_rows.reshape(-1, self.embed_dim).shape[0] + len(context_tokens)
        states = out[n_prefix : n_prefix + len(target), 0, :]
        logits = self._logits(states)
        logp = F.log_softmax(logits, dim=-1)
        idx = torch.as_tensor(target, dtype=torch.long)
        return -logp[torch.arange(len(target)), idx].mean()

    def batch_teacher_loss(
        self,
        prompt_rows: torch.Tensor,
        contexts: List[List[int]],
        targets: List[List[int]],
    ) -> torch.Tensor:
        """Batch mean of per-sample teacher-forced losses (padded, masked)."""
        batch = prompt_rows.shape[0]
        if batch != len(contexts) or batch != len(targets):
            raise ValueError("batch size mismatch")
        k = prompt_rows.shape[1]
        lengths = [k + len(c) + 1 + max(len(t) - 1, 0) for c, t in zip(contexts, targets)]
        max_len = max(lengths)
        inputs = torch.zeros((max_len, batch, self.embed_dim), dtype=torch.float64)
        for j, (ctx, tgt) in enumerate(zip(contexts, targets)):
            if len(tgt) == 0:
                raise ValueError("empty target sequence")
            seq = torch.cat(
                [
                    prompt_rows[j],
                    self._embed(ctx),
                    self._embed([BOS % self.vocab_size]),
                    self._embed(tgt[:-1]),
                ],
                dim=0,
            )
            inputs[: seq.shape[0], j, :] = seq
        out, _ = self.gru(inputs)
        per_sample = []
        for j, (ctx, tgt) in enumerate(zip(contexts, targets)):
            start = k + len(ctx)
            states = out[start : start + len(tgt), j, :]
            logp = F.log_softmax(self._logits(states), dim=-1)
            idx = torch.as_tensor(tgt, dtype=torch.long)
            per_sample.append(-logp[torch.arange(len(tgt)), idx].mean())
        return torch.stack(per_sample).mean()

    @torch.no_grad()
    def generate(
        self,
        prompt_rows: torch.Tensor,
        context_tokens: Sequence[int] = (),
        max_len: int = 256,
        end_token: Optional[int] = EOS,
    ) -> ReasoningOutput:
        """Greedy decode after consuming prompt rows + context + BOS."""
        prefix = torch.cat(
            [
                prompt_rows.reshape(-1, self.embed_dim),
                self._embed(context_tokens),
                self._embed([BOS % self.vocab_size]),
            ],
            dim=0,
        )
        _, hidden = self.gru(prefix.unsqueeze(1))
        tokens: List[int] = []
        probs: List[float] = []
        ended = False
        for _ in range(max_len):
            state = hidden[-1, 0, :]
            logits = self._logits(state.unsqueeze(0)).squeeze(0)
            dist = F.softmax(logits, dim=-1)
            token = int(torch.argmax(dist).item())
            tokens.append(token)
            probs.append(float(dist[token].item()))
            if end_token is not None and token == end_token:
                ended = True
                break
            step = self._embed([token]).unsqueeze(1)
            _, hidden = self.gru(step, hidden)
        return ReasoningOutput(tokens=tokens, text=decode_tokens(tokens), probs=probs, ended=ended)
