"""Report decoder: teacher-forced training path and greedy generation.

The decoder cross-attends over the memory sequence [global; locals] of a
representation. During training a fraction of local rows is dropped: the rows
are zeroed AND removed from the cross-attention key mask, so a dropped row
cannot leak through bias terms. The global row is never dropped. Ablation
flags can exclude either the global row or all local rows from the memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .encoders import MultiHeadAttention, FeedForward, Representation, sinusoidal_positions
from .textkit import BOS, EOS, MASK, PAD, TokenSeq


@dataclass(frozen=True)
class GenerationConfig:
    """Greedy decoding bounds; ``max_len`` counts all ids including BOS/EOS."""

    max_len: int = 40

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")


def drop_locals(
    rep: Representation,
    p: float,
    rng: np.random.Generator,
    training: bool,
) -> Representation:
    """Independently drop each local row with probability ``p`` (training only).

    Dropped rows are zeroed and cleared from the mask so downstream attention
    ignores them entirely. The global vector is untouched. In inference mode
    this is the identity.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("dropout probability must lie in [0, 1]")
    if not training or p == 0.0:
        return rep
    draw = rng.random(tuple(rep.mask.shape))
    keep = torch.from_numpy(draw >= p).to(rep.mask.device) & rep.mask
    locals_ = rep.locals_ * keep.unsqueeze(-1).to(rep.locals_.dtype)
    return Representation(
        locals_=locals_, global_=rep.global_, attn_weights=rep.attn_weights, mask=keep
    )


class DecoderLayer(nn.Module):
    """Pre-norm transformer decoder layer: causal self-attention, memory
    cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim)

    def forward(
        self,
        x: Tensor,
        memory: Tensor,
        memory_mask: Tensor | None,
        memory_may_be_empty: bool,
    ) -> Tensor:
        h = self.norm1(x)
        # suffix padding means causality alone hides PAD keys from valid queries
        x = x + self.self_attn(h, h, h, is_causal=True)
        h = self.norm2(x)
        x = x + self.cross_attn(
            h, memory, memory, key_mask=memory_mask, allow_empty=memory_may_be_empty
        )
        return x + self.ff(self.norm3(x))


class ReportDecoder(nn.Module):
    """Stack of decoder layers over a shared token embedding.

    ``embed`` is the report encoder's embedding module; the output projection
    to vocabulary logits is separate.
    """

    def __init__(
        self,
        embed: nn.Embedding,
        dim: int = 64,
        layers: int = 3,
        heads: int = 4,
        ff_dim: int = 128,
        decode_global: bool = True,
        decode_local: bool = True,
        use_positional: bool = True,
    ):
        super().__init__()
        if not decode_global and not decode_local:
            raise ValueError("at least one of global/local memory must be enabled")
        self.embed = embed
        self.dim = dim
        self.decode_global = decode_global
        self.decode_local = decode_local
        self.use_positional = use_positional
        self.layers = nn.ModuleList(DecoderLayer(dim, heads, ff_dim) for _ in range(layers))
        self.final_norm = nn.LayerNorm(dim)
        self.out_proj = nn.Linear(dim, embed.num_embeddings)

    def build_memory(self, rep: Representation) -> tuple[Tensor, Tensor]:
        """Memory rows [global; locals] and their visibility mask."""
        memory = torch.cat([rep.global_.unsqueeze(1), rep.locals_], dim=1)
        global_vis = torch.full_like(rep.mask[:, :1], self.decode_global)
        local_vis = rep.mask if self.decode_local else torch.zeros_like(rep.mask)
        return memory, torch.cat([global_vis, local_vis], dim=1)

    def forward(self, rep: Representation, input_ids: Tensor) -> Tensor:
        """Teacher-forcing forward: logits (B, T, V) for the next token at
        each input position. ``input_ids`` must be non-empty."""
        if input_ids.dim() != 2 or input_ids.shape[1] < 1:
            raise ValueError("decoder input must be a non-empty (batch, time) tensor")
        t = input_ids.shape[1]
        memory, memory_mask = self.build_memory(rep)
        x = self.embed(input_ids) * math.sqrt(self.dim)
        if self.use_positional:
            x = x + sinusoidal_positions(t, self.dim, x.dtype, x.device)
        # memory can only be fully hidden when the global row is excluded
        may_be_empty = not self.decode_global
        for layer in self.layers:
            x = layer(x, memory, memory_mask, may_be_empty)
        return self.out_proj(self.final_norm(x))


def decode_teacher_forced(rep: Representation, target_ids: Tensor, decoder: ReportDecoder) -> Tensor:
    """Logits aligned with ``target_ids[:, 1:]`` given inputs ``target_ids[:, :-1]``.

    ``target_ids`` are canonical PAD-padded sequences (BOS ... EOS PAD*).
    """
    if target_ids.dim() == 1:
        target_ids = target_ids.unsqueeze(0)
    if target_ids.shape[1] < 2:
        raise ValueError("teacher forcing needs sequences of length >= 2")
    return decoder(rep, target_ids[:, :-1])


@torch.no_grad()
def generate(
    rep: Representation,
    decoder: ReportDecoder,
    config: GenerationConfig = GenerationConfig(),
) -> list[TokenSeq]:
    """Greedy decoding from BOS until EOS or the length cap, per sample.

    Control ids (PAD, BOS, MASK) are excluded from the argmax; a sequence that
    hits the cap is closed with EOS so every output is canonical.
    """
    b = rep.batch_size
    device = rep.locals_.device
    ids = torch.full((b, 1), BOS, dtype=torch.long, device=device)
    finished = torch.zeros(b, dtype=torch.bool, device=device)
    forbidden = torch.tensor([PAD, BOS, MASK], device=device)
    for _ in range(config.max_len - 2):
        logits = decoder(rep, ids)[:, -1]
        logits.index_fill_(1, forbidden, float("-inf"))
        nxt = logits.argmax(dim=-1)
        nxt = torch.where(finished, torch.full_like(nxt, PAD), nxt)
        ids = torch.cat([ids, nxt.unsqueeze(1)], dim=1)
        finished |= nxt == EOS
        if bool(finished.all()):
            break
    sequences = []
    for row in ids.tolist():
        out = [t for t in row if t != PAD]
        if EOS in out:
            out = out[: out.index(EOS) + 1]
        else:
            out.append(EOS)
        sequences.append(TokenSeq(tuple(out)))
    return sequences
