"""Training objectives: cross-modal anchoring, cycle consistency, the
adversarial pair, report auto-encoding, and their weighted combination.

All contrastive terms share one primitive: a temperature-scaled softmax over
cosine similarities with in-batch negatives. The adversarial pair follows a
strict gradient contract: the discriminator loss treats its inputs as
constants, and the fooling loss treats the discriminator parameters as
constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor
from torch.func import functional_call

from .crossmap import Discriminator, MapperPair
from .encoders import Representation
from .textkit import PAD


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four model objectives plus the contrastive temperature."""

    cm: float = 3.0
    cyc: float = 1.0
    adv: float = 0.25
    ae: float = 1.5
    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        for name in ("cm", "cyc", "adv", "ae"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")


@dataclass
class LossReport:
    """Per-iteration loss components; ``total`` excludes the discriminator loss."""

    l_cm: float
    l_cyc: float
    l_adv: float
    l_ae: float
    l_disc: float
    total: float
    l_ae_token: float = 0.0  # per-token mean, recorded for monitoring only


def _unit_rows(x: Tensor) -> Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm vector has no cosine similarity")
    return x / norms


def contrastive(anchor: Tensor, positive: Tensor, negatives: list[Tensor], tau: float) -> Tensor:
    """Softmax-over-similarities loss for one anchor.

    Returns -log of the positive's share of exp(cos/tau) mass among the
    positive and the negatives. With no negatives the share is 1 and the
    loss is exactly zero.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    anchor = _unit_rows(anchor)
    candidates = [positive] + list(negatives)
    sims = torch.stack([(anchor * _unit_rows(c)).sum() for c in candidates]) / tau
    if len(candidates) == 1:
        return torch.zeros((), dtype=anchor.dtype, device=anchor.device)
    return torch.logsumexp(sims, dim=0) - sims[0]


def nce_grid(anchors: Tensor, candidates: Tensor, tau: float) -> Tensor:
    """Mean over rows i of contrastive(anchors[i], candidates[i], candidates[j!=i]).

    Equivalent to cross-entropy on the (B, B) cosine-similarity grid with the
    diagonal as targets.
    """
    if anchors.shape[0] < 2:
        raise ValueError("in-batch negatives require a batch of at least 2")
    sims = _unit_rows(anchors) @ _unit_rows(candidates).T / tau
    targets = torch.arange(sims.shape[0], device=sims.device)
    return F.cross_entropy(sims, targets)


def loss_cm_terms(
    mapped_image_g: Tensor,
    pseudo_g: Tensor,
    image_g: Tensor,
    mapped_pseudo_g: Tensor,
    tau: float,
) -> Tensor:
    """Core of the cross-modal loss on precomputed global vectors."""
    d_rs = nce_grid(mapped_image_g, pseudo_g, tau)
    d_is = nce_grid(image_g, mapped_pseudo_g, tau)
    return 0.5 * (d_rs + d_is)


def loss_cm(
    image_reps: Representation,
    pseudo_reps: Representation,
    mappers: MapperPair,
    tau: float,
) -> Tensor:
    """Cross-modal anchoring between images and their pseudo-reports.

    Two directions, each contrastive with in-batch negatives: the mapped
    image global against the pseudo-report globals, and the image global
    against the mapped pseudo-report globals. The batch pairs image i with
    pseudo-report i.
    """
    if image_reps.batch_size != pseudo_reps.batch_size:
        raise ValueError("image and pseudo-report batches must be the same size")
    if image_reps.batch_size < 2:
        raise ValueError("cross-modal loss needs a batch of at least 2 for negatives")
    return loss_cm_terms(
        mappers.i2r(image_reps).global_,
        pseudo_reps.global_,
        image_reps.global_,
        mappers.r2i(pseudo_reps).global_,
        tau,
    )


def loss_cyc_terms(
    image_g: Tensor,
    image_cycle_g: Tensor,
    report_g: Tensor,
    report_cycle_g: Tensor,
    tau: float,
) -> Tensor:
    """Core of the cycle loss on precomputed global vectors."""
    return nce_grid(image_g, image_cycle_g, tau) + nce_grid(report_g, report_cycle_g, tau)


def loss_cyc(
    image_reps: Representation,
    report_reps: Representation,
    mappers: MapperPair,
    tau: float,
) -> Tensor:
    """Round-trip consistency in both directions.

    An image representation mapped to report space and back must stay closest
    to itself among the batch's reconstructions; symmetrically for reports.
    """
    if image_reps.batch_size < 2 or report_reps.batch_size < 2:
        raise ValueError("cycle loss needs at least 2 samples on each side")
    image_cycle = mappers.r2i(mappers.i2r(image_reps)).global_
    report_cycle = mappers.i2r(mappers.r2i(report_reps)).global_
    return loss_cyc_terms(image_reps.global_, image_cycle, report_reps.global_, report_cycle, tau)


def _binary_terms(
    logits_fn,
    report_globals: Tensor,
    mapped_image_globals: Tensor,
    image_globals: Tensor,
    mapped_report_globals: Tensor,
    pre_target: int,
) -> Tensor:
    """Sum of the four classification terms; ``pre_target`` is the label
    assigned to pre-mapping vectors (0 for the discriminator, 1 when fooling)."""

    def nll(x: Tensor, target: int) -> Tensor:
        z = logits_fn(x)
        # -log p(1|x) = -logsigmoid(z); -log p(0|x) = -logsigmoid(-z)
        return -F.logsigmoid(z if target == 1 else -z).mean()

    post_target = 1 - pre_target
    return (
        nll(report_globals, pre_target)
        + nll(mapped_image_globals, post_target)
        + nll(image_globals, pre_target)
        + nll(mapped_report_globals, post_target)
    )


def loss_disc(
    report_globals: Tensor,
    mapped_image_globals: Tensor,
    image_globals: Tensor,
    mapped_report_globals: Tensor,
    disc: Discriminator,
) -> Tensor:
    """Discriminator objective: pre-mapping vectors are class 0, mapped ones
    class 1. Inputs are detached, so no gradient reaches encoders or mappers."""
    return _binary_terms(
        lambda x: disc(x.detach(), return_logits=True),
        report_globals,
        mapped_image_globals,
        image_globals,
        mapped_report_globals,
        pre_target=0,
    )


def loss_adv(
    report_globals: Tensor,
    mapped_image_globals: Tensor,
    image_globals: Tensor,
    mapped_report_globals: Tensor,
    disc: Discriminator,
) -> Tensor:
    """Fooling objective: identical structure with the class labels swapped.
    The discriminator's parameters are treated as constants, so gradients flow
    only to whatever produced the input vectors."""
    frozen = {name: p.detach() for name, p in disc.named_parameters()}

    def frozen_logits(x: Tensor) -> Tensor:
        return functional_call(disc, frozen, (x,), {"return_logits": True})

    return _binary_terms(
        frozen_logits,
        report_globals,
        mapped_image_globals,
        image_globals,
        mapped_report_globals,
        pre_target=1,
    )


def loss_ae(logits: Tensor, targets: Tensor) -> Tensor:
    """Reconstruction cross-entropy, summed per report, averaged over the batch.

    ``logits`` is (B, T, V) or (T, V) aligned with ``targets`` (B, T) or (T,),
    the teacher-forcing targets shifted one step ahead of the decoder input.
    PAD targets contribute nothing.
    """
    if logits.dim() == 2:
        logits, targets = logits.unsqueeze(0), targets.unsqueeze(0)
    if logits.shape[:2] != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} do not align with targets {tuple(targets.shape)}")
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    keep = (targets != PAD).to(nll.dtype)
    return (nll * keep).sum(dim=1).mean()


def token_mean_ae(logits: Tensor, targets: Tensor) -> float:
    """Per-token mean of the reconstruction cross-entropy (monitoring)."""
    if logits.dim() == 2:
        logits, targets = logits.unsqueeze(0), targets.unsqueeze(0)
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    keep = targets != PAD
    return float((nll[keep]).mean().item()) if bool(keep.any()) else 0.0


def total_loss(report: LossReport, weights: LossWeights) -> float:
    """Weighted sum of the four model objectives; the discriminator loss is a
    separate optimization target and is excluded."""
    parts = {
        "l_cm": report.l_cm,
        "l_cyc": report.l_cyc,
        "l_adv": report.l_adv,
        "l_ae": report.l_ae,
    }
    for name, value in parts.items():
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss component {name}={value}")
    return (
        weights.cm * report.l_cm
        + weights.cyc * report.l_cyc
        + weights.adv * report.l_adv
        + weights.ae * report.l_ae
    )
