import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphcycle.evalkit import (
    MetricsReport,
    bleu,
    ce_metrics,
    corpus_bleu,
    extract_labels,
    meteor_simplified,
    per_class_ce,
    rouge_l,
    score_texts,
    _lcs_length,
)
from glyphcycle.textkit import build_vocab, default_template_set, tokenize

import oracles


def random_pair(rng, vocab_size=12, max_len=14):
    cand = tuple(int(x) + 5 for x in rng.integers(0, vocab_size, size=rng.integers(1, max_len)))
    ref = tuple(int(x) + 5 for x in rng.integers(0, vocab_size, size=rng.integers(1, max_len)))
    return cand, ref


class TestBleu:
    def test_identity_scores_one_for_all_orders(self):
        seq = (5, 6, 7, 8, 9, 10)
        for n in range(1, 5):
            assert bleu(seq, seq, n) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_vocabulary_scores_zero(self):
        assert bleu((5, 6, 7), (8, 9, 10), 4) < 0.05
        assert bleu((5, 6, 7), (8, 9, 10), 1) < 0.05

    def test_matches_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for case in range(20):
            cands, refs = [], []
            for _ in range(rng.integers(1, 4)):
                c, r = random_pair(rng)
                cands.append(c)
                refs.append(r)
            for n in range(1, 5):
                got = corpus_bleu(cands, refs, n)
                want = oracles.bleu_value(cands, refs, n)
                assert abs(got - want) < 1e-9, f"case {case} order {n}"

    def test_order_validated(self):
        with pytest.raises(ValueError):
            bleu((5,), (5,), 0)
        with pytest.raises(ValueError):
            bleu((5,), (5,), 5)

    def test_empty_candidate_rejected_per_pair(self):
        with pytest.raises(ValueError):
            bleu((), (5,), 1)

    @given(st.lists(st.integers(5, 12), min_size=2, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_prefix_extension_monotone_in_bleu1(self, ref):
        ref = tuple(ref)
        scores = [corpus_bleu([ref[:k]], [ref], 1) for k in range(1, len(ref) + 1)]
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


class TestRougeL:
    def test_identity(self):
        seq = (5, 6, 7, 8)
        assert rouge_l(seq, seq) == pytest.approx(1.0, abs=1e-12)

    def test_no_overlap(self):
        assert rouge_l((5, 6), (7, 8)) == 0.0

    def test_lcs_matches_recursive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            cand, ref = random_pair(rng, vocab_size=6)
            assert _lcs_length(cand, ref) == oracles.lcs_value(cand, ref)

    def test_formula_on_known_case(self):
        cand, ref = (5, 6, 7, 9), (5, 6, 8, 7, 10)
        lcs = 3
        p, r = lcs / len(cand), lcs / len(ref)
        want = p * r * (r**2 + p**2) / (r**3 + p**3)
        assert rouge_l(cand, ref) == pytest.approx(want, abs=1e-12)


class TestMeteor:
    def test_identity_five_tokens(self):
        seq = (5, 6, 7, 8, 9)
        assert meteor_simplified(seq, seq) == pytest.approx(0.996, abs=1e-12)

    def test_zero_matches(self):
        assert meteor_simplified((5, 6), (7, 8)) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for case in range(50):
            cand, ref = random_pair(rng, vocab_size=7)
            got = meteor_simplified(cand, ref)
            want = oracles.meteor_value(cand, ref)
            assert abs(got - want) < 1e-9, f"case {case}"

    def test_chunk_penalty_direction(self):
        # same matches, more fragmentation, lower score
        contiguous = meteor_simplified((5, 6, 7, 8), (5, 6, 7, 8, 9, 10))
        fragmented = meteor_simplified((5, 9, 7, 10), (5, 6, 7, 8, 9, 10))
        assert contiguous > fragmented


class TestExtractor:
    def test_positive_mention(self, templates):
        labels = extract_labels("there is cardiomegaly .", templates)
        assert labels[0] == 1 and labels.sum() == 1

    def test_negated_mention(self, templates):
        labels = extract_labels("no pleural effusion .", templates)
        assert labels[1] == 0 and labels.sum() == 0

    def test_negative_for_bigram(self, templates):
        assert extract_labels("negative for consolidation .", templates)[5] == 0

    def test_cue_outside_window_does_not_negate(self, templates):
        text = "no change of the stable known cardiomegaly ."
        assert extract_labels(text, templates)[0] == 1

    def test_negation_scoped_to_sentence(self, templates):
        text = "no pleural effusion . there is edema ."
        labels = extract_labels(text, templates)
        assert labels[1] == 0 and labels[2] == 1

    def test_without_cue(self, templates):
        assert extract_labels("without visible fracture .", templates)[6] == 0

    def test_exact_on_generated_eval_reports(self, small_bundle):
        templates = small_bundle.templates
        predicted = np.stack([extract_labels(t, templates) for t in small_bundle.eval_texts])
        mentioned = np.zeros_like(predicted)
        for i, text in enumerate(small_bundle.eval_texts):
            for k, kw in enumerate(templates.keywords):
                mentioned[i, k] = kw in text
        # on mentioned findings the extraction equals the generating labels
        assert np.array_equal(predicted[mentioned == 1], small_bundle.eval_labels[mentioned == 1])
        assert np.all(predicted[mentioned == 0] == 0)


class TestCeMetrics:
    def test_identity(self):
        labels = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.uint8)
        assert ce_metrics(labels, labels) == (1.0, 1.0, 1.0)

    def test_all_negative_predictions(self):
        predicted = np.zeros((3, 2), dtype=np.uint8)
        truth = np.array([[1, 0], [0, 0], [1, 1]], dtype=np.uint8)
        assert ce_metrics(predicted, truth) == (0.0, 0.0, 0.0)

    def test_hand_computed_confusion(self):
        predicted = np.array([[1, 0], [1, 1], [0, 0], [0, 1]], dtype=np.uint8)
        truth = np.array([[1, 0], [0, 1], [0, 0], [1, 1]], dtype=np.uint8)
        p, r, f1 = ce_metrics(predicted, truth)
        assert (p, r, f1) == (0.75, 0.75, 0.75)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ce_metrics(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_per_class_breakdown(self):
        predicted = np.array([[1, 0], [1, 0]], dtype=np.uint8)
        truth = np.array([[1, 1], [0, 1]], dtype=np.uint8)
        per = per_class_ce(predicted, truth, ["a", "b"])
        assert per["a"] == (0.5, 1.0, pytest.approx(2 / 3))
        assert per["b"] == (0.0, 0.0, 0.0)


class TestScoreTexts:
    def test_ground_truth_against_itself(self, small_bundle):
        refs = small_bundle.eval_texts
        metrics = score_texts(refs, refs, small_bundle.eval_labels, small_bundle.templates)
        assert metrics.bleu1 == pytest.approx(1.0, abs=1e-9)
        assert metrics.bleu4 == pytest.approx(1.0, abs=1e-9)
        assert metrics.rouge_l == pytest.approx(1.0, abs=1e-9)
        assert metrics.ce_f1 == pytest.approx(1.0, abs=1e-12)

    def test_metrics_live_in_unit_interval(self, small_bundle):
        candidates = ["there is edema ." for _ in small_bundle.eval_texts]
        m = score_texts(
            candidates, small_bundle.eval_texts, small_bundle.eval_labels, small_bundle.templates
        )
        for value in (m.bleu1, m.bleu2, m.bleu3, m.bleu4, m.meteor, m.rouge_l, m.ce_precision, m.ce_recall, m.ce_f1):
            assert 0.0 <= value <= 1.0

    def test_alignment_validated(self, small_bundle):
        with pytest.raises(ValueError):
            score_texts(["a ."], small_bundle.eval_texts, small_bundle.eval_labels, small_bundle.templates)

    def test_report_roundtrip_through_file(self, tmp_path, small_bundle):
        refs = small_bundle.eval_texts
        metrics = score_texts(refs, refs, small_bundle.eval_labels, small_bundle.templates)
        metrics.save(tmp_path / "metrics.txt")
        text = (tmp_path / "metrics.txt").read_text()
        assert "bleu1=" in text and "ce_f1.cardiomegaly=" in text
        assert "ce_f1=" in metrics.summary() or "ce_f1" in metrics.summary()


class TestTokenizationInvariance:
    def test_metrics_computed_on_ids_not_strings(self, templates):
        # two vocabularies assign different ids; scores must agree
        texts_a = ["there is edema .", "no pleural effusion ."]
        texts_b = ["no pleural effusion .", "there is edema ."]
        vocab_a = build_vocab(texts_a)
        vocab_b = build_vocab(texts_b + ["zzz unrelated filler"])
        for cand_text, ref_text in zip(texts_a, texts_b):
            pair_a = (tokenize(cand_text, vocab_a), tokenize(ref_text, vocab_a))
            pair_b = (tokenize(cand_text, vocab_b), tokenize(ref_text, vocab_b))
            assert bleu(*pair_a, 2) == pytest.approx(bleu(*pair_b, 2), abs=1e-12)
            assert rouge_l(*pair_a) == pytest.approx(rouge_l(*pair_b), abs=1e-12)
            assert meteor_simplified(*pair_a) == pytest.approx(meteor_simplified(*pair_b), abs=1e-12)
