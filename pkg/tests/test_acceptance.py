"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The suite is self
contained but heavy: criteria 5-8 train real models (two full default runs
plus seven reduced ablation rows) and together take a few hours on a single
CPU core; the wall-clock budget of criterion 6 is stated for an 8-core CPU
and is prorated when fewer cores are available.
"""

import dataclasses
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from glyphcycle.crossmap import Discriminator
from glyphcycle.decoder import GenerationConfig, decode_teacher_forced, drop_locals, generate
from glyphcycle.encoders import AttentionPool, pad_batch, pooling_residuals
from glyphcycle.evalkit import (
    bleu,
    ce_metrics,
    corpus_bleu,
    extract_labels,
    meteor_simplified,
    rouge_l,
    score_texts,
)
from glyphcycle.glyphworld import GenerationSpec, generate_dataset, render_report
from glyphcycle.objectives import (
    contrastive,
    loss_adv,
    loss_ae,
    loss_cm,
    loss_cyc,
    loss_disc,
)
from glyphcycle.textkit import build_vocab, default_template_set, tokenize
from glyphcycle.trainer import Trainer, TrainConfig, build_model, evaluate_checkpoint, load_checkpoint
from glyphcycle.evalkit import generate_reports

import oracles
from conftest import micro_model_config

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-9


def _report(criterion: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS ({detail})")


# ---------------------------------------------------------------------------
# criterion 1: gradient gate
# ---------------------------------------------------------------------------


class MicroWorld:
    """d=8 single-layer model with a tiny batch, all in float64."""

    def __init__(self):
        texts = [
            "there is edema .",
            "no pleural effusion is seen .",
            "focal consolidation is present .",
        ]
        templates = default_template_set()
        self.vocab = build_vocab(texts)
        config = TrainConfig(master_seed=1, model=micro_model_config())
        self.model, self.disc = build_model(len(self.vocab), config)
        self.model.double()
        self.disc.double()
        self.tau = 0.1
        g = torch.Generator().manual_seed(0)
        self.images = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
        self.report_ids = pad_batch([tokenize(t, self.vocab) for t in texts[:2]])
        self.pseudo_ids = pad_batch([tokenize("there is edema .", self.vocab),
                                     tokenize("no edema .", self.vocab)])

    def image_reps(self):
        return self.model.image_encoder(self.images)

    def report_reps(self):
        return self.model.report_encoder(self.report_ids)

    def pseudo_reps(self):
        return self.model.report_encoder(self.pseudo_ids)

    def adv_inputs(self):
        image_reps = self.image_reps()
        report_reps = self.report_reps()
        return (
            report_reps.global_,
            self.model.mappers.i2r(image_reps).global_,
            image_reps.global_,
            self.model.mappers.r2i(report_reps).global_,
        )


def _gate_case(world: MicroWorld):
    """(name, loss_fn, parameter list) per loss; closures re-run the forward."""
    model, disc = world.model, world.disc
    encoder_params = (
        list(model.image_encoder.parameters())
        + list(model.report_encoder.parameters())
        + list(model.mappers.parameters())
    )

    def cm():
        return loss_cm(world.image_reps(), world.pseudo_reps(), model.mappers, world.tau)

    def cyc():
        return loss_cyc(world.image_reps(), world.report_reps(), model.mappers, world.tau)

    def adv():
        return loss_adv(*world.adv_inputs(), disc)

    def dsc():
        return loss_disc(*world.adv_inputs(), disc)

    def ae():
        rep = world.report_reps()
        dropped = drop_locals(rep, 0.5, np.random.default_rng(42), training=True)
        logits = decode_teacher_forced(dropped, world.report_ids, model.decoder)
        return loss_ae(logits, world.report_ids[:, 1:])

    decoder_only = [
        p for p in model.decoder.parameters() if p is not model.report_encoder.embed.weight
    ]
    ae_params = list(model.report_encoder.parameters()) + decoder_only
    return [
        ("L_cm", cm, encoder_params),
        ("L_cyc", cyc, encoder_params),
        ("L_adv", adv, encoder_params),
        ("L_disc", dsc, list(disc.parameters())),
        ("L_ae", ae, ae_params),
    ]


def test_criterion_1_gradient_gate():
    start = time.time()
    world = MicroWorld()
    worst = {}
    for name, loss_fn, params in _gate_case(world):
        value = loss_fn()
        analytic = torch.autograd.grad(value, params, allow_unused=True)
        numeric = oracles.finite_diff_grads(loss_fn, params, step=1e-5)
        err = oracles.max_rel_error(analytic, numeric)
        worst[name] = err
        assert err < GRAD_TOL, f"{name}: max relative gradient error {err:.3e}"
    elapsed = time.time() - start
    assert elapsed < 120, f"gradient gate took {elapsed:.0f}s"
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    _report("criterion 1 (gradient gate)", f"{detail}; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 2: loss oracles
# ---------------------------------------------------------------------------


def test_criterion_2_loss_oracles():
    rng = np.random.default_rng(7)
    torch.manual_seed(7)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 8))
        tau = float(rng.uniform(0.05, 2.0))
        anchor = rng.normal(size=d)
        positive = rng.normal(size=d)
        negatives = [rng.normal(size=d) for _ in range(int(rng.integers(0, 5)))]
        got = contrastive(
            torch.tensor(anchor), torch.tensor(positive), [torch.tensor(c) for c in negatives], tau
        ).item()
        worst = max(worst, abs(got - oracles.contrastive_value(anchor, positive, negatives, tau)))

        disc = Discriminator(dim=4, hidden=5).double()
        xs = [torch.tensor(rng.normal(size=(int(rng.integers(1, 5)), 4))) for _ in range(4)]
        probs = [disc(x).tolist() for x in xs]
        worst = max(
            worst,
            abs(
                loss_disc(*xs, disc).item()
                - oracles.binary_terms_value((probs[0], probs[2]), (probs[1], probs[3]), 0)
            ),
            abs(
                loss_adv(*xs, disc).item()
                - oracles.binary_terms_value((probs[0], probs[2]), (probs[1], probs[3]), 1)
            ),
        )

        b, t, v = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(5, 11))
        logits = rng.normal(size=(b, t, v)) * 3
        targets = rng.integers(0, v, size=(b, t))
        worst = max(
            worst,
            abs(
                loss_ae(torch.tensor(logits), torch.tensor(targets)).item()
                - oracles.ae_value(logits.tolist(), targets.tolist())
            ),
        )
    assert worst < ORACLE_TOL

    # label-swap identity, exact
    disc = Discriminator(dim=4, hidden=5).double()
    xs = [torch.tensor(rng.normal(size=(3, 4))) for _ in range(4)]
    swapped = loss_disc(xs[1], xs[0], xs[3], xs[2], disc).item()
    assert loss_adv(*xs, disc).item() == swapped

    # chance discriminator
    half = Discriminator(dim=4, hidden=5).double()
    with torch.no_grad():
        half.fc3.weight.zero_()
        half.fc3.bias.zero_()
    chance = loss_disc(*xs, half).item()
    assert abs(chance - 4 * math.log(2)) < 1e-6
    assert abs(chance - 2.77258872) < 1e-6
    _report("criterion 2 (loss oracles)", f"max |diff|={worst:.2e}, chance={chance:.6f}")


# ---------------------------------------------------------------------------
# criterion 3: metric oracles
# ---------------------------------------------------------------------------


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(50):
        cand = tuple(int(x) + 5 for x in rng.integers(0, 10, size=rng.integers(1, 15)))
        ref = tuple(int(x) + 5 for x in rng.integers(0, 10, size=rng.integers(1, 15)))
        for n in range(1, 5):
            worst = max(worst, abs(bleu(cand, ref, n) - oracles.bleu_value([cand], [ref], n)))
        lcs = oracles.lcs_value(cand, ref)
        if lcs:
            p, r = lcs / len(cand), lcs / len(ref)
            want = p * r * (r**2 + p**2) / (r**3 + p**3)
        else:
            want = 0.0
        worst = max(worst, abs(rouge_l(cand, ref) - want))
        worst = max(worst, abs(meteor_simplified(cand, ref) - oracles.meteor_value(cand, ref)))
    assert worst < ORACLE_TOL
    seq = (5, 6, 7, 8, 9)
    assert bleu(seq, seq, 4) == pytest.approx(1.0, abs=1e-12)
    assert rouge_l(seq, seq) == pytest.approx(1.0, abs=1e-12)
    _report("criterion 3 (metric oracles)", f"max |diff|={worst:.2e}, identity scores 1.0")


# ---------------------------------------------------------------------------
# criterion 4: extractor exactness
# ---------------------------------------------------------------------------


def test_criterion_4_extractor_exactness():
    templates = default_template_set()
    rng = np.random.default_rng(29)
    predicted = np.empty((10_000, 8), dtype=np.uint8)
    truth = np.empty((10_000, 8), dtype=np.uint8)
    for i in range(10_000):
        labels = (rng.random(8) < rng.uniform(0.1, 0.6)).astype(np.uint8)
        text = render_report(labels, templates, rng)
        predicted[i] = extract_labels(text, templates)
        truth[i] = labels
    _, _, f1 = ce_metrics(predicted, truth)
    assert f1 == 1.0
    _report("criterion 4 (extractor exactness)", "micro-F1 = 1.000 on 10^4 reports")


# ---------------------------------------------------------------------------
# criterion 9: pooling invariants
# ---------------------------------------------------------------------------


def test_criterion_9_pooling_invariants():
    torch.manual_seed(31)
    pool = AttentionPool(16, hidden=12)
    worst_sum, worst_recombine, min_weight = 0.0, 0.0, 1.0
    g = torch.Generator().manual_seed(77)
    for _ in range(1000):
        n = int(torch.randint(1, 20, (1,), generator=g))
        locals_ = torch.randn(1, n, 16, generator=g) * 3
        pooled, weights = pool(locals_)
        worst_sum = max(worst_sum, abs(weights.sum().item() - 1.0))
        recombined = (weights.unsqueeze(-1) * locals_).sum(dim=1)
        worst_recombine = max(worst_recombine, (recombined - pooled).abs().max().item())
        min_weight = min(min_weight, weights.min().item())
    assert worst_sum < 1e-6
    assert worst_recombine < 1e-5
    assert min_weight >= 0.0
    _report(
        "criterion 9 (pooling invariants)",
        f"max|sum-1|={worst_sum:.2e}, max|recombine|={worst_recombine:.2e}, min w={min_weight:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 10: dropout statistics
# ---------------------------------------------------------------------------


def test_criterion_10_dropout_statistics():
    torch.manual_seed(33)
    locals_ = torch.randn(100, 1000, 8)
    weights = torch.softmax(torch.randn(100, 1000), dim=1)
    global_ = (weights.unsqueeze(-1) * locals_).sum(dim=1)
    rep_mask = torch.ones(100, 1000, dtype=torch.bool)
    from glyphcycle.encoders import Representation

    rep = Representation(locals_, global_, weights, rep_mask)
    out = drop_locals(rep, 0.9, np.random.default_rng(55), training=True)
    fraction = 1.0 - out.mask.float().mean().item()
    assert abs(fraction - 0.9) <= 0.005
    assert torch.equal(out.global_, rep.global_)
    zeroed = out.locals_[~out.mask]
    assert torch.all(zeroed == 0)
    _report("criterion 10 (dropout statistics)", f"masked fraction {fraction:.4f}, global intact")
