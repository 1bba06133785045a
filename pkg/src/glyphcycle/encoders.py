"""Image and report encoders producing joint local + global representations.

Both encoders share the same skeleton: an input embedding (token table for
reports, linear patch projection for images), sinusoidal positions, a stack
of pre-norm transformer layers, and an attention pooling head that forms the
global vector as a weighted sum of the local rows. Padded rows are excluded
from attention keys and from pooling, so a sample's representation does not
depend on how much padding its batch carries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .textkit import PAD, TokenSeq

NEG_INF = -1.0e9  # additive mask level; exp(NEG_INF - max) underflows to exactly 0


@dataclass
class Representation:
    """Batched local/global representation.

    ``locals_`` is (B, n, d), ``global_`` (B, d), ``attn_weights`` (B, n) and
    ``mask`` (B, n) with True marking usable rows. Fresh encoder outputs
    satisfy: weights nonnegative, masked weights exactly zero, valid weights
    summing to one, and ``global_`` equal to the weight-averaged locals.
    Mapped or dropout-masked representations keep the fields but no longer
    satisfy the pooling identity.
    """

    locals_: Tensor
    global_: Tensor
    attn_weights: Tensor
    mask: Tensor

    @property
    def batch_size(self) -> int:
        return self.locals_.shape[0]

    @property
    def width(self) -> int:
        return self.locals_.shape[-1]

    def detach(self) -> "Representation":
        return Representation(
            self.locals_.detach(), self.global_.detach(), self.attn_weights.detach(), self.mask
        )

    def single(self, index: int = 0) -> "Representation":
        """One sample with padded rows trimmed away (batch dim kept at 1)."""
        keep = self.mask[index]
        return Representation(
            locals_=self.locals_[index : index + 1, keep],
            global_=self.global_[index : index + 1],
            attn_weights=self.attn_weights[index : index + 1, keep],
            mask=self.mask[index : index + 1, keep],
        )


def pooling_residuals(rep: Representation) -> tuple[float, float, float]:
    """(max |sum(weights) - 1|, max |global - sum(w*locals)|, min weight)."""
    wsum = rep.attn_weights.sum(dim=1)
    recombined = (rep.attn_weights.unsqueeze(-1) * rep.locals_).sum(dim=1)
    return (
        (wsum - 1.0).abs().max().item(),
        (recombined - rep.global_).abs().max().item(),
        rep.attn_weights.min().item(),
    )


def masked_softmax(scores: Tensor, mask: Tensor | None, dim: int = -1) -> Tensor:
    """Softmax that ignores masked entries; fully-masked rows come out zero."""
    if mask is None:
        return torch.softmax(scores, dim=dim)
    scores = scores.masked_fill(~mask, NEG_INF)
    return torch.softmax(scores, dim=dim) * mask.to(scores.dtype)


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32, device=None) -> Tensor:
    """Fixed sin/cos position table, (length, dim)."""
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype, device=device)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq)
    return table


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with optional key mask and causal mode.

    The common cases go through the fused kernel. ``allow_empty=True`` selects
    a fallback that tolerates samples whose key set is entirely masked: those
    queries return exactly zero instead of NaN.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("head count must divide the model width")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        key_mask: Tensor | None = None,
        is_causal: bool = False,
        allow_empty: bool = False,
    ) -> Tensor:
        """query (B, Tq, d); key/value (B, Tk, d); key_mask (B, Tk) True=visible."""
        b, tq, _ = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        if allow_empty and key_mask is not None:
            # additive-bias path: softmax over an all-masked row is uniform,
            # then the whole output row is zeroed, so nothing leaks
            bias = torch.zeros(b, 1, 1, tk, dtype=q.dtype, device=q.device)
            bias.masked_fill_(~key_mask.view(b, 1, 1, tk), NEG_INF)
            scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim) + bias
            out = torch.softmax(scores, dim=-1) @ v
            out = out * key_mask.any(dim=1).view(b, 1, 1, 1).to(q.dtype)
        else:
            mask = None if key_mask is None else key_mask.view(b, 1, 1, tk)
            out = torch.nn.functional.scaled_dot_product_attention(
                q, k, v, attn_mask=mask, is_causal=is_causal
            )
        out = out.transpose(1, 2).reshape(b, tq, self.dim)
        return self.out_proj(out)

    def zero_value_path(self) -> None:
        """Make the attention branch output exactly zero (identity-residual setup)."""
        with torch.no_grad():
            self.v_proj.weight.zero_()
            self.v_proj.bias.zero_()
            self.out_proj.weight.zero_()
            self.out_proj.bias.zero_()


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim)

    def forward(self, x: Tensor, key_mask: Tensor | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, key_mask=key_mask)
        return x + self.ff(self.norm2(x))


class AttentionPool(nn.Module):
    """Global vector as an attention-weighted sum of local rows.

    Position scores are w2 . tanh(W1 h); the softmax over positions gives the
    weights. A single score vector (one hop) is enough here.
    """

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.w1 = nn.Linear(dim, hidden, bias=False)
        self.w2 = nn.Linear(hidden, 1, bias=False)

    def forward(self, locals_: Tensor, mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        logits = self.w2(torch.tanh(self.w1(locals_))).squeeze(-1)
        weights = masked_softmax(logits, mask)
        pooled = (weights.unsqueeze(-1) * locals_).sum(dim=1)
        return pooled, weights


def attention_pool(locals_: Tensor, pool: AttentionPool, mask: Tensor | None = None):
    """Functional form of :class:`AttentionPool` for a single (n, d) matrix."""
    if locals_.dim() == 2:
        pooled, weights = pool(locals_.unsqueeze(0), None if mask is None else mask.unsqueeze(0))
        return pooled[0], weights[0]
    return pool(locals_, mask)


class _EncoderCore(nn.Module):
    """Shared layer stack + pooling used by both modality encoders."""

    def __init__(self, dim: int, layers: int, heads: int, ff_dim: int, pool_hidden: int):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, ff_dim) for _ in range(layers))
        self.final_norm = nn.LayerNorm(dim)
        self.pool = AttentionPool(dim, pool_hidden)

    def run(self, x: Tensor, mask: Tensor | None) -> Representation:
        for layer in self.layers:
            x = layer(x, key_mask=mask)
        x = self.final_norm(x)
        pooled, weights = self.pool(x, mask)
        if mask is None:
            mask = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        return Representation(locals_=x, global_=pooled, attn_weights=weights, mask=mask)


class ReportEncoder(nn.Module):
    """Token embedding + positions + transformer stack + attention pooling."""

    def __init__(
        self,
        vocab_size: int,
        dim: int = 64,
        layers: int = 3,
        heads: int = 4,
        ff_dim: int = 128,
        pool_hidden: int = 64,
        use_positional: bool = True,
    ):
        super().__init__()
        self.dim = dim
        self.use_positional = use_positional
        self.embed = nn.Embedding(vocab_size, dim)
        nn.init.normal_(self.embed.weight, std=dim**-0.5)
        self.core = _EncoderCore(dim, layers, heads, ff_dim, pool_hidden)

    @property
    def vocab_size(self) -> int:
        return self.embed.num_embeddings

    def forward(self, ids: Tensor, mask: Tensor | None = None) -> Representation:
        """ids (B, T) int64, PAD-padded. Padded rows are masked everywhere."""
        if ids.dim() != 2 or ids.shape[1] < 1:
            raise ValueError("expected a non-empty (batch, time) id tensor")
        if mask is None:
            mask = ids != PAD
        if not bool(mask.any(dim=1).all()):
            raise ValueError("every sequence in the batch must have at least one token")
        dtype = self.embed.weight.dtype
        x = self.embed(ids) * math.sqrt(self.dim)
        if self.use_positional:
            x = x + sinusoidal_positions(ids.shape[1], self.dim, dtype, ids.device)
        return self.core.run(x, mask)


class ImageEncoder(nn.Module):
    """Patch projection + positions + transformer stack + attention pooling."""

    def __init__(
        self,
        image_size: int = 32,
        patch_size: int = 4,
        dim: int = 64,
        layers: int = 3,
        heads: int = 4,
        ff_dim: int = 128,
        pool_hidden: int = 64,
        use_positional: bool = True,
    ):
        super().__init__()
        if image_size % patch_size != 0:
            raise ValueError("patch size must divide the image size")
        self.image_size = image_size
        self.patch_size = patch_size
        self.dim = dim
        self.use_positional = use_positional
        self.patch_proj = nn.Linear(patch_size * patch_size, dim)
        self.core = _EncoderCore(dim, layers, heads, ff_dim, pool_hidden)

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def patchify(self, images: Tensor) -> Tensor:
        b, h, w = images.shape
        if h != self.image_size or w != self.image_size:
            raise ValueError(f"expected {self.image_size}x{self.image_size} images, got {h}x{w}")
        p = self.patch_size
        x = images.view(b, h // p, p, w // p, p).permute(0, 1, 3, 2, 4)
        return x.reshape(b, (h // p) * (w // p), p * p)

    def forward(self, images: Tensor) -> Representation:
        """images (B, H, W) floats in [0, 1]."""
        x = self.patch_proj(self.patchify(images))
        if self.use_positional:
            x = x + sinusoidal_positions(x.shape[1], self.dim, x.dtype, x.device)
        return self.core.run(x, None)


def pad_batch(sequences: list[TokenSeq], device=None) -> Tensor:
    """Stack canonical sequences into a PAD-padded (B, Tmax) id tensor."""
    if not sequences:
        raise ValueError("cannot pad an empty batch")
    longest = max(seq.length for seq in sequences)
    out = torch.full((len(sequences), longest), PAD, dtype=torch.long, device=device)
    for i, seq in enumerate(sequences):
        out[i, : seq.length] = torch.tensor(seq.ids, dtype=torch.long, device=device)
    return out


def encode_report(tokens: TokenSeq, encoder: ReportEncoder) -> Representation:
    """Encode one canonical token sequence (no padding involved)."""
    device = encoder.embed.weight.device
    ids = torch.tensor([tokens.ids], dtype=torch.long, device=device)
    return encoder(ids)


def encode_image(image, encoder: ImageEncoder) -> Representation:
    """Encode one (H, W) image array or tensor."""
    dtype = encoder.patch_proj.weight.dtype
    tensor = torch.as_tensor(image, dtype=dtype).unsqueeze(0)
    return encoder(tensor)
