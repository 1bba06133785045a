"""Mapping functions between the image and report embedding spaces.

Each direction is a single pre-norm multi-head self-attention block over the
(1 + n)-row sequence [global; locals], followed by a linear output
projection. Row 0 of the output is the transformed global vector; pooling is
not re-run after mapping. A small MLP discriminator scores global vectors as
pre- vs post-mapping.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .encoders import MultiHeadAttention, Representation


class RepresentationMapper(nn.Module):
    """One-block attention mapper for a joint [global; locals] representation."""

    def __init__(self, dim: int = 64, heads: int = 8):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, rep: Representation) -> Representation:
        x = torch.cat([rep.global_.unsqueeze(1), rep.locals_], dim=1)
        key_mask = torch.cat(
            [torch.ones_like(rep.mask[:, :1]), rep.mask], dim=1
        )
        h = self.norm(x)
        x = x + self.attn(h, h, h, key_mask=key_mask)
        y = self.out_proj(x)
        return Representation(
            locals_=y[:, 1:],
            global_=y[:, 0],
            attn_weights=rep.attn_weights,
            mask=rep.mask,
        )

    def transform_global(self, rep: Representation) -> Tensor:
        """Row 0 of :meth:`forward` without computing the local rows.

        The global output still attends over every input row; only the other
        queries are skipped, so this matches the full forward's global.
        """
        x = torch.cat([rep.global_.unsqueeze(1), rep.locals_], dim=1)
        key_mask = torch.cat([torch.ones_like(rep.mask[:, :1]), rep.mask], dim=1)
        h = self.norm(x)
        g = x[:, :1] + self.attn(h[:, :1], h, h, key_mask=key_mask)
        return self.out_proj(g)[:, 0]

    def init_identity(self) -> None:
        """Configure the block as an exact identity (used by tests)."""
        self.attn.zero_value_path()
        with torch.no_grad():
            self.out_proj.weight.copy_(torch.eye(self.out_proj.weight.shape[0]))
            self.out_proj.bias.zero_()


class MapperPair(nn.Module):
    """The two directions bundled together: image-to-report and report-to-image."""

    def __init__(self, dim: int = 64, heads: int = 8):
        super().__init__()
        self.i2r = RepresentationMapper(dim, heads)
        self.r2i = RepresentationMapper(dim, heads)


def map_i2r(rep: Representation, mappers: MapperPair) -> Representation:
    return mappers.i2r(rep)


def map_r2i(rep: Representation, mappers: MapperPair) -> Representation:
    return mappers.r2i(rep)


class Discriminator(nn.Module):
    """Two-hidden-layer perceptron scoring a global vector, logistic output."""

    def __init__(self, dim: int = 64, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, 1)

    def forward(self, x: Tensor, return_logits: bool = False) -> Tensor:
        h = torch.tanh(self.fc1(x))
        h = torch.tanh(self.fc2(h))
        z = self.fc3(h).squeeze(-1)
        return z if return_logits else torch.sigmoid(z)


def discriminate(global_vec: Tensor, disc: Discriminator) -> Tensor:
    """Probability that a global vector belongs to the post-mapping class."""
    if not torch.isfinite(global_vec).all():
        raise ValueError("discriminator input must be finite")
    return disc(global_vec)
