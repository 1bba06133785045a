import numpy as np
import pytest
import torch

from glyphcycle.decoder import (
    GenerationConfig,
    ReportDecoder,
    decode_teacher_forced,
    drop_locals,
    generate,
)
from glyphcycle.encoders import Representation, ReportEncoder, pad_batch
from glyphcycle.objectives import loss_ae
from glyphcycle.textkit import BOS, EOS, TokenSeq, build_vocab, tokenize

from oracles import finite_diff_grads, max_rel_error


def random_rep(b, n, d, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    locals_ = torch.randn(b, n, d, generator=g, dtype=dtype)
    weights = torch.softmax(torch.randn(b, n, generator=g, dtype=dtype), dim=1)
    global_ = (weights.unsqueeze(-1) * locals_).sum(dim=1)
    return Representation(locals_, global_, weights, torch.ones(b, n, dtype=torch.bool))


def small_decoder(vocab_size, dim=16, dtype=torch.float32, **kwargs):
    torch.manual_seed(0)
    embed = torch.nn.Embedding(vocab_size, dim)
    dec = ReportDecoder(embed, dim=dim, layers=2, heads=2, ff_dim=32, **kwargs)
    return dec.to(dtype)


class TestDropLocals:
    def test_p_zero_is_identity(self, rng):
        rep = random_rep(2, 6, 8)
        out = drop_locals(rep, 0.0, rng, training=True)
        assert out is rep

    def test_inference_mode_is_identity(self, rng):
        rep = random_rep(2, 6, 8)
        out = drop_locals(rep, 0.9, rng, training=False)
        assert out is rep

    def test_p_one_zeroes_locals_keeps_global(self, rng):
        rep = random_rep(2, 6, 8)
        out = drop_locals(rep, 1.0, rng, training=True)
        assert torch.all(out.locals_ == 0)
        assert not out.mask.any()
        assert torch.equal(out.global_, rep.global_)

    def test_mask_fraction_monte_carlo(self):
        # 10^5 rows at the configured rate
        rep = random_rep(100, 1000, 4)
        out = drop_locals(rep, 0.9, np.random.default_rng(7), training=True)
        dropped = 1.0 - out.mask.float().mean().item()
        assert abs(dropped - 0.9) <= 0.005
        assert torch.equal(out.global_, rep.global_)

    def test_already_masked_rows_stay_masked(self, rng):
        rep = random_rep(1, 6, 8)
        rep.mask[0, 4:] = False
        out = drop_locals(rep, 0.5, rng, training=True)
        assert not out.mask[0, 4:].any()

    def test_invalid_p_rejected(self, rng):
        with pytest.raises(ValueError):
            drop_locals(random_rep(1, 2, 4), 1.5, rng, training=True)


class TestTeacherForcing:
    def test_causal_contract(self, vocab):
        dec = small_decoder(len(vocab), dtype=torch.float64)
        rep = random_rep(1, 5, 16, dtype=torch.float64)
        ids = pad_batch([tokenize("no effusion is seen .", vocab)])
        logits = decode_teacher_forced(rep, ids, dec)
        # altering a future token must not change logits at earlier positions
        altered = ids.clone()
        altered[0, 4] = 9
        logits_altered = decode_teacher_forced(rep, altered, dec)
        assert torch.allclose(logits[0, :3], logits_altered[0, :3], atol=1e-12)
        assert not torch.allclose(logits[0, 4:], logits_altered[0, 4:], atol=1e-9)

    def test_dropped_rows_cannot_leak(self, vocab):
        dec = small_decoder(len(vocab), dtype=torch.float64)
        rep = random_rep(1, 6, 16, dtype=torch.float64)
        dropped = drop_locals(rep, 0.5, np.random.default_rng(3), training=True)
        assert dropped.mask.sum() < rep.mask.sum()
        ids = pad_batch([tokenize("there is edema .", vocab)])
        base = decode_teacher_forced(dropped, ids, dec)
        # poison the hidden rows: outputs must be bit-identical
        poisoned = Representation(
            dropped.locals_.clone(), dropped.global_, dropped.attn_weights, dropped.mask
        )
        poisoned.locals_[:, ~dropped.mask[0]] = 1e6
        again = decode_teacher_forced(poisoned, ids, dec)
        assert torch.equal(base, again)

    def test_global_only_memory_ignores_locals(self, vocab):
        dec = small_decoder(len(vocab), dtype=torch.float64, decode_local=False)
        rep = random_rep(1, 6, 16, dtype=torch.float64)
        ids = pad_batch([tokenize("no edema .", vocab)])
        base = decode_teacher_forced(rep, ids, dec)
        other = Representation(
            torch.randn_like(rep.locals_), rep.global_, rep.attn_weights, rep.mask
        )
        assert torch.equal(base, decode_teacher_forced(other, ids, dec))

    def test_local_only_memory_ignores_global(self, vocab):
        dec = small_decoder(len(vocab), dtype=torch.float64, decode_global=False)
        rep = random_rep(1, 6, 16, dtype=torch.float64)
        ids = pad_batch([tokenize("no edema .", vocab)])
        base = decode_teacher_forced(rep, ids, dec)
        other = Representation(
            rep.locals_, torch.randn_like(rep.global_), rep.attn_weights, rep.mask
        )
        assert torch.equal(base, decode_teacher_forced(other, ids, dec))

    def test_local_only_with_everything_dropped_is_finite(self, vocab):
        dec = small_decoder(len(vocab), decode_global=False)
        rep = random_rep(2, 6, 16)
        dropped = drop_locals(rep, 1.0, np.random.default_rng(0), training=True)
        ids = pad_batch([tokenize("no edema .", vocab)] * 2)
        logits = decode_teacher_forced(dropped, ids, dec)
        assert torch.isfinite(logits).all()

    def test_both_flags_off_rejected(self, vocab):
        with pytest.raises(ValueError):
            small_decoder(len(vocab), decode_global=False, decode_local=False)

    def test_short_target_rejected(self, vocab):
        dec = small_decoder(len(vocab))
        with pytest.raises(ValueError):
            decode_teacher_forced(random_rep(1, 3, 16), torch.tensor([[BOS]]), dec)

    def test_gradients_match_finite_differences(self, vocab):
        torch.manual_seed(4)
        embed = torch.nn.Embedding(12, 8).double()
        dec = ReportDecoder(embed, dim=8, layers=1, heads=2, ff_dim=16).double()
        rep = random_rep(2, 3, 8, dtype=torch.float64)
        ids = torch.tensor([[BOS, 6, 7, EOS], [BOS, 8, EOS, 0]])

        def loss_fn():
            logits = decode_teacher_forced(rep, ids, dec)
            return loss_ae(logits, ids[:, 1:])

        params = list(dec.parameters())
        analytic = torch.autograd.grad(loss_fn(), params)
        numeric = finite_diff_grads(loss_fn, params)
        assert max_rel_error(analytic, numeric) < 1e-4


class TestGeneration:
    def test_deterministic(self, vocab):
        dec = small_decoder(len(vocab))
        rep = random_rep(3, 5, 16)
        a = generate(rep, dec, GenerationConfig(max_len=12))
        b = generate(rep, dec, GenerationConfig(max_len=12))
        assert [s.ids for s in a] == [s.ids for s in b]

    def test_terminates_within_cap(self, vocab):
        dec = small_decoder(len(vocab))
        rep = random_rep(4, 5, 16, seed=9)
        for seq in generate(rep, dec, GenerationConfig(max_len=9)):
            assert seq.length <= 9
            assert seq.ids[0] == BOS and seq.ids[-1] == EOS

    def test_outputs_are_canonical(self, vocab):
        dec = small_decoder(len(vocab), dim=16)
        rep = random_rep(2, 4, 16, seed=5)
        for seq in generate(rep, dec, GenerationConfig(max_len=20)):
            TokenSeq(seq.ids)  # canonical-form validation

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GenerationConfig(max_len=1)


class TestAutoEncoderOverfit:
    def test_memorizes_small_corpus(self, small_bundle):
        """Pure auto-encoding must reconstruct a 50-report corpus when the
        decoder sees the clean (undropped) representation at inference."""
        texts = small_bundle.report_texts[:50]
        vocab = build_vocab(texts)
        seqs = [tokenize(t, vocab) for t in texts]
        ids = pad_batch(seqs)

        torch.manual_seed(0)
        enc = ReportEncoder(len(vocab), dim=32, layers=1, heads=2, ff_dim=64, pool_hidden=16)
        dec = ReportDecoder(enc.embed, dim=32, layers=1, heads=2, ff_dim=64)
        # the decoder shares the encoder's embedding; dedup for the optimizer
        params = {id(p): p for p in [*enc.parameters(), *dec.parameters()]}
        opt = torch.optim.AdamW(params.values(), lr=3e-3, weight_decay=0.0)
        rng = np.random.default_rng(0)
        for step in range(350):
            rep = enc(ids)
            dropped = drop_locals(rep, 0.5, rng, training=True)
            logits = decode_teacher_forced(dropped, ids, dec)
            loss = loss_ae(logits, ids[:, 1:])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()

        with torch.no_grad():
            rep = enc(ids)
        outputs = generate(rep, dec, GenerationConfig(max_len=ids.shape[1] + 2))
        exact = sum(out.ids == seq.ids for out, seq in zip(outputs, seqs))
        assert exact >= 45  # >= 90% reproduced exactly
