"""Feature converter and the set-prediction captioner."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import torch
from torch import nn
from torch.nn import functional as F

from ..core import ValidationError


class Converter(nn.Module):
    """Per-width input projection followed by a residual two-layer temporal CNN.

    ``out = gelu(z + conv2(gelu(conv1(z))))`` with ``z`` the projected input.
    """

    def __init__(self, input_widths: Iterable[int], d_model: int):
        super().__init__()
        widths = sorted(set(int(w) for w in input_widths))
        if not widths:
            raise ValueError("at least one input width is required")
        self.d_model = d_model
        self.proj = nn.ModuleDict({str(w): nn.Linear(w, d_model) for w in widths})
        self.conv1 = nn.Conv1d(d_model, d_model, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(d_model, d_model, kernel_size=3, padding=1)

    @property
    def widths(self) -> list[int]:
        return sorted(int(k) for k in self.proj)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        key = str(x.shape[-1])
        if key not in self.proj:
            raise ValidationError(f"no input projection registered for width {x.shape[-1]} "
                                  f"(registered: {self.widths})")
        z = self.proj[key](x)                       # t × d_model
        h = F.gelu(self.conv1(z.T.unsqueeze(0)))
        return F.gelu(z + self.conv2(h).squeeze(0).T)


def sinusoid_table(length: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(d, dtype=torch.float64)[None, :]
    angle = pos / torch.pow(10000.0, (2 * (i // 2)) / d)
    table = torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))
    return table.to(dtype)


@dataclass
class QueryOutputs:
    """Per-video outputs of the captioner.

    ``segments`` are (center, length) in normalized time. Captions come either
    from hand-set ``caption_logits`` (N × L × V) or from ``caption_fn``, which
    maps query indices and teacher-forcing input ids (B × L) to logits.
    """

    segments: torch.Tensor
    fg_logits: torch.Tensor
    count_logits: torch.Tensor
    caption_logits: torch.Tensor | None = None
    caption_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor] | None = None

    @property
    def num_queries(self) -> int:
        return self.segments.shape[0]

    def captions(self, query_idx: torch.Tensor, tokens_in: torch.Tensor) -> torch.Tensor:
        if self.caption_logits is not None:
            return self.caption_logits[query_idx, : tokens_in.shape[1]]
        if self.caption_fn is None:
            raise ValueError("outputs carry no caption head")
        return self.caption_fn(query_idx, tokens_in)


class CaptionDecoder(nn.Module):
    """One attention block per step: causal self-attention over the caption so
    far, then cross-attention to the encoded video, windowed softly around
    the query's predicted segment."""

    def __init__(self, d_model: int, vocab_size: int, max_len: int, nhead: int):
        super().__init__()
        self.tok = nn.Embedding(vocab_size, d_model)
        self.pos = nn.Embedding(max_len, d_model)
        self.self_attn = nn.MultiheadAttention(d_model, nhead, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(d_model, nhead, batch_first=True)
        self.ffn = nn.Sequential(nn.Linear(d_model, 2 * d_model), nn.GELU(), nn.Linear(2 * d_model, d_model))
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.out = nn.Linear(d_model, vocab_size)
        self.nhead = nhead
        self.max_len = max_len

    def forward(self, tokens_in, query_feat, segments, memory):
        B, L = tokens_in.shape
        t = memory.shape[0]
        x = self.tok(tokens_in) + self.pos.weight[:L] + query_feat[:, None, :]
        causal = torch.triu(torch.full((L, L), float("-inf"), dtype=x.dtype), diagonal=1)
        x = self.norm1(x + self.self_attn(x, x, x, attn_mask=causal, need_weights=False)[0])
        # Gaussian window over normalized time, sigma = half the predicted length
        tau = (torch.arange(t, dtype=x.dtype) + 0.5) / t
        center, length = segments[:, 0:1], segments[:, 1:2]
        window = -0.5 * ((tau[None, :] - center) / (0.5 * length + 1.0 / t)) ** 2     # B × t
        bias = window[:, None, :].expand(B, L, t).repeat_interleave(self.nhead, dim=0)
        mem = memory.unsqueeze(0).expand(B, t, -1)
        x = self.norm2(x + self.cross_attn(x, mem, mem, attn_mask=bias, need_weights=False)[0])
        x = self.norm3(x + self.ffn(x))
        return self.out(x)


class CaptionerNet(nn.Module):
    def __init__(self, d_model: int, vocab_size: int, num_queries: int = 10, k_max: int = 12,
                 max_caption_len: int = 12, nhead: int = 4, enc_layers: int = 1, dec_layers: int = 1):
        super().__init__()
        self.d_model = d_model
        self.k_max = k_max
        self.max_caption_len = max_caption_len
        enc = nn.TransformerEncoderLayer(d_model, nhead, 2 * d_model, dropout=0.0, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc, enc_layers, enable_nested_tensor=False)
        dec = nn.TransformerDecoderLayer(d_model, nhead, 2 * d_model, dropout=0.0, batch_first=True)
        self.decoder = nn.TransformerDecoder(dec, dec_layers)
        self.queries = nn.Parameter(torch.randn(num_queries, d_model))
        self.loc_head = nn.Sequential(nn.Linear(d_model, d_model), nn.ReLU(), nn.Linear(d_model, 2))
        self.fg_head = nn.Linear(d_model, 1)
        self.count_head = nn.Linear(d_model, k_max)
        self.caption = CaptionDecoder(d_model, vocab_size, max_caption_len + 1, nhead)

    @property
    def num_queries(self) -> int:
        return self.queries.shape[0]

    def forward(self, H: torch.Tensor) -> QueryOutputs:
        t = H.shape[0]
        memory = self.encoder((H + sinusoid_table(t, self.d_model, H.dtype)).unsqueeze(0))
        q = self.decoder(self.queries.unsqueeze(0), memory).squeeze(0)
        memory = memory.squeeze(0)
        segments = torch.sigmoid(self.loc_head(q))
        fg = self.fg_head(q).squeeze(-1)
        count = self.count_head(q.max(dim=0).values)

        def caption_fn(idx, tokens_in):
            return self.caption(tokens_in, q[idx], segments[idx], memory)

        return QueryOutputs(segments, fg, count, caption_fn=caption_fn)


def convert(converter: Converter, X) -> torch.Tensor:
    """Converter output for one video's frame features (numpy or tensor)."""
    x = torch.as_tensor(X.frames if hasattr(X, "frames") else X)
    dtype = next(converter.parameters()).dtype
    return converter(x.to(dtype))


def forward_captioner(net: CaptionerNet, H: torch.Tensor) -> QueryOutputs:
    if not torch.all(torch.isfinite(H)):
        raise ValidationError("converter output contains non-finite values")
    return net(H)

