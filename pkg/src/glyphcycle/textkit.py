"""Tokenization, vocabulary and template machinery for synthetic reports.

The text side of the pipeline is deliberately closed-world: every report is
assembled from a fixed template set, so a lowercase whitespace/punctuation
tokenizer with an exact vocabulary is sufficient. Special tokens occupy the
first five ids in a fixed order.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, BOS, EOS, UNK, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<mask>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def split_tokens(text: str) -> list[str]:
    """Lowercase and split into word tokens, punctuation standing alone."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    """Canonical surface form: lowercased tokens joined by single spaces."""
    return " ".join(split_tokens(text))


@dataclass(frozen=True)
class TokenSeq:
    """Canonical integer-coded report: BOS first, EOS last, no padding."""

    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise ValueError("token sequence must start with BOS and end with EOS")
        if EOS in self.ids[:-1]:
            raise ValueError("EOS must appear exactly once, at the end")

    @property
    def length(self) -> int:
        return len(self.ids)

    def body(self) -> tuple[int, ...]:
        """Ids with specials stripped."""
        return tuple(i for i in self.ids if i not in (PAD, BOS, EOS, MASK))


class Vocabulary:
    """Bijective token/id mapping with reserved special ids 0..4."""

    def __init__(self, tokens: list[str]):
        if list(tokens[: len(SPECIAL_TOKENS)]) != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary must begin with the special tokens")
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if idx < 0 or idx >= len(self.id_to_token):
            raise ValueError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self.id_to_token[idx]

    def save(self, path) -> None:
        """One token per line; the id is the line index."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens)


def build_vocab(corpus: list[str]) -> Vocabulary:
    """Build a vocabulary from raw texts.

    Ordering is deterministic: specials first, then corpus tokens by
    descending frequency with lexicographic tie-break.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for text in corpus:
        counts.update(split_tokens(text))
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(SPECIAL_TOKENS) + [tok for tok, _ in ordered])


def tokenize(text: str, vocab: Vocabulary) -> TokenSeq:
    """Canonical token sequence for a text; unknown words map to UNK."""
    ids = [vocab.id_of(tok) for tok in split_tokens(text)]
    return TokenSeq(tuple([BOS] + ids + [EOS]))


def detokenize(seq: TokenSeq | tuple[int, ...] | list[int], vocab: Vocabulary) -> str:
    """Inverse of :func:`tokenize` on normalized text; specials are dropped."""
    ids = seq.ids if isinstance(seq, TokenSeq) else tuple(seq)
    words = [vocab.token_of(i) for i in ids if i not in (PAD, BOS, EOS, MASK)]
    return " ".join(words)


@dataclass
class TemplateSet:
    """Sentence templates for one synthetic world.

    ``findings`` fixes the canonical finding order; ``keywords[k]`` is the
    single token that identifies finding k and may not occur in any other
    finding's sentences. ``positive``/``negative`` hold the styled report
    variants (at least two each), ``pseudo_positive``/``pseudo_negative`` the
    single rigid form used for pseudo-reports. ``fillers[0]`` is the fixed
    sentence emitted when a pseudo-report would otherwise be empty.
    """

    findings: list[str]
    keywords: list[str]
    positive: dict[str, list[str]]
    negative: dict[str, list[str]]
    pseudo_positive: dict[str, str]
    pseudo_negative: dict[str, str]
    fillers: list[str] = field(default_factory=list)

    @property
    def num_findings(self) -> int:
        return len(self.findings)

    def all_sentences(self) -> list[str]:
        out: list[str] = []
        for f in self.findings:
            out.extend(self.positive[f])
            out.extend(self.negative[f])
            out.append(self.pseudo_positive[f])
            out.append(self.pseudo_negative[f])
        out.extend(self.fillers)
        return out

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on violation."""
        if len(self.keywords) != len(self.findings):
            raise ValueError("one keyword per finding required")
        for f in self.findings:
            if len(self.positive[f]) < 2 or len(self.negative[f]) < 2:
                raise ValueError(f"finding {f!r} needs >=2 positive and negative variants")
            report_sents = set(self.positive[f]) | set(self.negative[f])
            if self.pseudo_positive[f] in report_sents or self.pseudo_negative[f] in report_sents:
                raise ValueError(f"pseudo templates for {f!r} must differ from report templates")
        if not self.fillers:
            raise ValueError("at least one filler sentence required")
        for k, kw in enumerate(self.keywords):
            own = self._sentences_of(k)
            for other in range(len(self.findings)):
                if other == k:
                    for s in own:
                        if kw not in split_tokens(s):
                            raise ValueError(f"keyword {kw!r} missing from own template: {s!r}")
                else:
                    for s in self._sentences_of(other):
                        if kw in split_tokens(s):
                            raise ValueError(f"keyword {kw!r} leaks into {self.findings[other]!r}")
            for s in self.fillers:
                if kw in split_tokens(s):
                    raise ValueError(f"keyword {kw!r} occurs in filler {s!r}")

    def _sentences_of(self, k: int) -> list[str]:
        f = self.findings[k]
        return (
            self.positive[f]
            + self.negative[f]
            + [self.pseudo_positive[f], self.pseudo_negative[f]]
        )

    def save(self, path) -> None:
        payload = {
            "findings": self.findings,
            "keywords": self.keywords,
            "positive": self.positive,
            "negative": self.negative,
            "pseudo_positive": self.pseudo_positive,
            "pseudo_negative": self.pseudo_negative,
            "fillers": self.fillers,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TemplateSet":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(**payload)


DEFAULT_FINDINGS = [
    "cardiomegaly",
    "effusion",
    "edema",
    "atelectasis",
    "pneumothorax",
    "consolidation",
    "fracture",
    "opacity",
]


def default_template_set() -> TemplateSet:
    """Template set for the default eight-finding world.

    Positive report sentences never contain a negation cue; negative report
    sentences place their cue within four tokens before the keyword, which is
    what makes rule-based label extraction exact on generated text.
    """
    positive = {
        "cardiomegaly": [
            "the heart is enlarged with cardiomegaly .",
            "persistent cardiomegaly is again noted .",
            "moderate cardiomegaly remains .",
        ],
        "effusion": [
            "a small pleural effusion is present .",
            "pleural effusion is seen on the left .",
            "there is a layering pleural effusion .",
        ],
        "edema": [
            "mild pulmonary edema is present .",
            "interstitial edema has developed .",
        ],
        "atelectasis": [
            "bibasilar atelectasis is noted .",
            "patchy atelectasis persists at the bases .",
        ],
        "pneumothorax": [
            "a small apical pneumothorax is present .",
            "pneumothorax is identified on the right .",
        ],
        "consolidation": [
            "focal consolidation is present .",
            "dense consolidation obscures the lower lobe .",
        ],
        "fracture": [
            "an acute rib fracture is visible .",
            "a displaced fracture is identified .",
        ],
        "opacity": [
            "a rounded opacity projects over the lung .",
            "increased opacity is seen at the base .",
        ],
    }
    negative = {
        "cardiomegaly": [
            "no cardiomegaly is evident .",
            "the heart is normal without cardiomegaly .",
        ],
        "effusion": [
            "no pleural effusion is seen .",
            "negative for pleural effusion .",
        ],
        "edema": [
            "no pulmonary edema is present .",
            "there is no edema .",
        ],
        "atelectasis": [
            "no atelectasis is seen .",
            "lungs are clear without atelectasis .",
        ],
        "pneumothorax": [
            "no pneumothorax is seen .",
            "there is no pneumothorax .",
        ],
        "consolidation": [
            "no focal consolidation is seen .",
            "negative for consolidation .",
        ],
        "fracture": [
            "no acute fracture is identified .",
            "without visible fracture .",
        ],
        "opacity": [
            "no suspicious opacity is seen .",
            "there is no focal opacity .",
        ],
    }
    pseudo_names = {
        "cardiomegaly": "cardiomegaly",
        "effusion": "pleural effusion",
        "edema": "edema",
        "atelectasis": "atelectasis",
        "pneumothorax": "pneumothorax",
        "consolidation": "consolidation",
        "fracture": "fracture",
        "opacity": "opacity",
    }
    templates = TemplateSet(
        findings=list(DEFAULT_FINDINGS),
        keywords=list(DEFAULT_FINDINGS),
        positive=positive,
        negative=negative,
        pseudo_positive={f: f"there is {pseudo_names[f]} ." for f in DEFAULT_FINDINGS},
        pseudo_negative={f: f"no {pseudo_names[f]} ." for f in DEFAULT_FINDINGS},
        fillers=[
            "the study is unremarkable .",
            "the mediastinal contours are stable .",
            "lung volumes are low .",
            "surgical clips are again seen .",
        ],
    )
    templates.validate()
    return templates


def make_pseudo_report(
    labels: np.ndarray,
    templates: TemplateSet,
    rng: np.random.Generator,
    include_prob: float = 0.8,
    negation_subset_size: int = 2,
) -> str:
    """Render the rigid pseudo-report for a label vector.

    Positive findings are each mentioned independently with probability
    ``include_prob`` via the canonical positive form; exactly
    ``negation_subset_size`` negative findings (clamped to availability) are
    mentioned via the canonical negative form. Sentences follow the canonical
    finding order, positives first, so the style is intentionally rigid and
    the content intentionally partial.
    """
    if not 0.0 <= include_prob <= 1.0:
        raise ValueError("include_prob must lie in [0, 1]")
    labels = np.asarray(labels)
    if labels.shape != (templates.num_findings,):
        raise ValueError("label vector length must match the template findings")

    pos_idx = [k for k in range(templates.num_findings) if labels[k]]
    neg_idx = [k for k in range(templates.num_findings) if not labels[k]]

    mentioned_pos = [k for k in pos_idx if rng.random() < include_prob]
    subset = negation_subset_size
    if subset > len(neg_idx):
        warnings.warn(
            f"negation subset size {subset} exceeds {len(neg_idx)} negative findings; clamping",
            stacklevel=2,
        )
        subset = len(neg_idx)
    mentioned_neg = sorted(rng.choice(len(neg_idx), size=subset, replace=False)) if subset else []

    sentences = [templates.pseudo_positive[templates.findings[k]] for k in mentioned_pos]
    sentences += [templates.pseudo_negative[templates.findings[neg_idx[j]]] for j in mentioned_neg]
    if not sentences:
        sentences = [templates.fillers[0]]
    return " ".join(sentences)
