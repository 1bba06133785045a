"""Language-quality metrics and label-based efficacy metrics.

Metrics operate on token ids, never on raw strings, so scores are invariant
to how the surface text is re-tokenized. Label extraction is rule-based and,
by template design, exact on generated text: a finding counts as positive
when its keyword occurs with no negation cue within the four preceding
tokens of the same sentence.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import math

import numpy as np
import torch

from .decoder import GenerationConfig, generate
from .textkit import TemplateSet, TokenSeq, Vocabulary, build_vocab, detokenize, split_tokens, tokenize

NEGATION_CUES = ("no", "without")
NEGATION_BIGRAM = ("negative", "for")
NEGATION_WINDOW = 4
SENTENCE_END = "."


@dataclass
class MetricsReport:
    """Language and clinical-efficacy scores for one evaluation run."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    ce_precision: float
    ce_recall: float
    ce_f1: float
    per_class: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def summary(self) -> str:
        return (
            f"bleu1={self.bleu1:.4f} bleu2={self.bleu2:.4f} bleu3={self.bleu3:.4f} "
            f"bleu4={self.bleu4:.4f} meteor={self.meteor:.4f} rouge_l={self.rouge_l:.4f} "
            f"ce_p={self.ce_precision:.4f} ce_r={self.ce_recall:.4f} ce_f1={self.ce_f1:.4f}"
        )

    def save(self, path) -> None:
        lines = [
            f"bleu1={self.bleu1!r}",
            f"bleu2={self.bleu2!r}",
            f"bleu3={self.bleu3!r}",
            f"bleu4={self.bleu4!r}",
            f"meteor={self.meteor!r}",
            f"rouge_l={self.rouge_l!r}",
            f"ce_precision={self.ce_precision!r}",
            f"ce_recall={self.ce_recall!r}",
            f"ce_f1={self.ce_f1!r}",
        ]
        for name in sorted(self.per_class):
            p, r, f1 = self.per_class[name]
            lines.append(f"ce_precision.{name}={p!r}")
            lines.append(f"ce_recall.{name}={r!r}")
            lines.append(f"ce_f1.{name}={f1!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _body(seq) -> tuple[int, ...]:
    if isinstance(seq, TokenSeq):
        return seq.body()
    return tuple(seq)


def _ngrams(tokens: tuple[int, ...], n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: list, references: list, n: int = 4) -> float:
    """Corpus-level BLEU-n: clipped n-gram precision aggregated over all
    pairs, uniform weights over orders 1..n, brevity penalty, add-one
    smoothing on orders >= 2. An order-zero total yields a zero score."""
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must lie in 1..4")
    if len(candidates) != len(references):
        raise ValueError("candidate and reference counts differ")
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = _body(cand), _body(ref)
        if not ref:
            raise ValueError("empty reference sequence")
        cand_len += len(cand)
        ref_len += len(ref)
        for k in range(1, n + 1):
            cand_counts = _ngrams(cand, k)
            ref_counts = _ngrams(ref, k)
            total[k - 1] += max(len(cand) - k + 1, 0)
            matched[k - 1] += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    log_sum = 0.0
    for k in range(1, n + 1):
        m, t = matched[k - 1], total[k - 1]
        if k >= 2:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    if cand_len == 0:
        return 0.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_sum / n)


def bleu(candidate, reference, n: int = 4) -> float:
    """BLEU-n for a single candidate/reference pair."""
    if not _body(candidate):
        raise ValueError("empty candidate sequence")
    return corpus_bleu([candidate], [reference], n)


def _lcs_length(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """Longest-common-subsequence F-measure with the beta = P/R convention."""
    cand, ref = _body(candidate), _body(reference)
    if not ref:
        raise ValueError("empty reference sequence")
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    # F = (1 + beta^2) R P / (R + beta^2 P) with beta = P / R
    return precision * recall * (recall**2 + precision**2) / (recall**3 + precision**3)


def _greedy_alignment(cand: tuple[int, ...], ref: tuple[int, ...]) -> list[tuple[int, int]]:
    """Left-to-right exact unigram alignment: each candidate token takes the
    earliest unmatched reference position holding the same token."""
    taken = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, r in enumerate(ref):
            if not taken[j] and r == tok:
                taken[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor_simplified(candidate, reference) -> float:
    """Exact-match unigram score with the canonical constants.

    F_mean = 10PR / (R + 9P); penalty = 0.5 (chunks / matches)^3;
    score = F_mean (1 - penalty); zero when nothing matches.
    """
    cand, ref = _body(candidate), _body(reference)
    if not ref:
        raise ValueError("empty reference sequence")
    pairs = _greedy_alignment(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    precision = m / len(cand)
    recall = m / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def extract_labels(text: str, templates: TemplateSet) -> np.ndarray:
    """Rule-based finding extraction from report text.

    A finding is positive iff some occurrence of its keyword has no negation
    cue ("no", "without", "negative for") within the preceding four tokens of
    its sentence. Negated-only or absent keywords extract as 0.
    """
    tokens = split_tokens(text)
    sentences: list[list[str]] = [[]]
    for tok in tokens:
        sentences[-1].append(tok)
        if tok == SENTENCE_END:
            sentences.append([])
    labels = np.zeros(templates.num_findings, dtype=np.uint8)
    for k, keyword in enumerate(templates.keywords):
        for sent in sentences:
            for i, tok in enumerate(sent):
                if tok != keyword:
                    continue
                window = sent[max(0, i - NEGATION_WINDOW) : i]
                negated = any(c in window for c in NEGATION_CUES)
                for j in range(max(0, i - NEGATION_WINDOW), i - 1):
                    if sent[j] == NEGATION_BIGRAM[0] and sent[j + 1] == NEGATION_BIGRAM[1]:
                        negated = True
                if not negated:
                    labels[k] = 1
    return labels


def ce_metrics(
    predicted: np.ndarray, truth: np.ndarray
) -> tuple[float, float, float]:
    """Micro-averaged precision/recall/F1 over all (sample, class) cells.
    Undefined ratios (no positive predictions or no positive truths) are 0."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"prediction shape {predicted.shape} != truth shape {truth.shape}")
    tp = int(np.sum((predicted == 1) & (truth == 1)))
    fp = int(np.sum((predicted == 1) & (truth == 0)))
    fn = int(np.sum((predicted == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def per_class_ce(
    predicted: np.ndarray, truth: np.ndarray, names: list[str]
) -> dict[str, tuple[float, float, float]]:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    return {
        name: ce_metrics(predicted[:, k : k + 1], truth[:, k : k + 1])
        for k, name in enumerate(names)
    }


def score_texts(
    candidates: list[str],
    references: list[str],
    true_labels: np.ndarray,
    templates: TemplateSet,
) -> MetricsReport:
    """Score candidate report texts against references and ground-truth labels.

    Texts are tokenized against a vocabulary built from both corpora plus the
    template sentences, so identical surface forms share ids.
    """
    if len(candidates) != len(references) or len(references) != len(true_labels):
        raise ValueError("candidates, references and labels must align")
    vocab = build_vocab(list(candidates) + list(references) + templates.all_sentences())
    cand_ids = [tokenize(t, vocab) for t in candidates]
    ref_ids = [tokenize(t, vocab) for t in references]
    bleus = [corpus_bleu(cand_ids, ref_ids, n) for n in (1, 2, 3, 4)]
    rouge = float(np.mean([rouge_l(c, r) for c, r in zip(cand_ids, ref_ids)]))
    meteor = float(np.mean([meteor_simplified(c, r) for c, r in zip(cand_ids, ref_ids)]))
    predicted = np.stack([extract_labels(t, templates) for t in candidates])
    precision, recall, f1 = ce_metrics(predicted, true_labels)
    return MetricsReport(
        bleu1=bleus[0],
        bleu2=bleus[1],
        bleu3=bleus[2],
        bleu4=bleus[3],
        meteor=meteor,
        rouge_l=rouge,
        ce_precision=precision,
        ce_recall=recall,
        ce_f1=f1,
        per_class=per_class_ce(predicted, true_labels, templates.findings),
    )


def generate_reports(
    model,
    images: np.ndarray,
    vocab: Vocabulary,
    config: GenerationConfig = GenerationConfig(),
    chunk_size: int = 64,
) -> list[str]:
    """Greedy report text for each image; deterministic given the model."""
    model_dtype = next(model.image_encoder.parameters()).dtype
    texts: list[str] = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(images), chunk_size):
            chunk = torch.as_tensor(images[start : start + chunk_size], dtype=model_dtype)
            rep = model.mappers.i2r(model.image_encoder(chunk))
            for seq in generate(rep, model.decoder, config):
                texts.append(detokenize(seq, vocab))
    if was_training:
        model.train()
    return texts


def evaluate_model(
    model,
    eval_images: np.ndarray,
    eval_texts: list[str],
    eval_labels: np.ndarray,
    vocab: Vocabulary,
    templates: TemplateSet,
    config: GenerationConfig = GenerationConfig(),
) -> MetricsReport:
    """Generate a report per eval image and score against the paired truth."""
    candidates = generate_reports(model, eval_images, vocab, config)
    return score_texts(candidates, eval_texts, eval_labels, templates)
