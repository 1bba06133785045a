#!/usr/bin/env python3
"""Language metrics, clinical-efficacy metrics, and the ablation harness.

Scores a few candidate reports against references by hand, then shows how
the CLI strings the same pieces together (synth -> train -> generate ->
evaluate -> ablate).
"""

import numpy as np

from glyphcycle import bleu, build_vocab, default_template_set, extract_labels, tokenize
from glyphcycle.evalkit import ce_metrics, meteor_simplified, rouge_l, score_texts

templates = default_template_set()

reference = "persistent cardiomegaly is again noted . no pleural effusion is seen ."
good = "moderate cardiomegaly remains . no pleural effusion is seen ."
bad = "the study is unremarkable ."

vocab = build_vocab([reference, good, bad] + templates.all_sentences())
ref_ids = tokenize(reference, vocab)
for name, cand in (("good", good), ("bad", bad)):
    ids = tokenize(cand, vocab)
    print(
        f"{name:5s} candidate: bleu1={bleu(ids, ref_ids, 1):.3f} "
        f"rouge_l={rouge_l(ids, ref_ids):.3f} meteor={meteor_simplified(ids, ref_ids):.3f}"
    )

print()
print("clinical efficacy from extracted labels:")
truth = np.stack([extract_labels(reference, templates)])
for name, cand in (("good", good), ("bad", bad)):
    predicted = np.stack([extract_labels(cand, templates)])
    p, r, f1 = ce_metrics(predicted, truth)
    print(f"  {name:5s}: precision={p:.2f} recall={r:.2f} f1={f1:.2f}")

print()
print("corpus-level scoring of aligned text lists:")
refs = [reference, bad]
cands = [good, bad]
labels = np.stack([extract_labels(t, templates) for t in refs])
print(" ", score_texts(cands, refs, labels, templates).summary())

print()
print("the same pipeline from the command line:")
print("  glyphcycle synth --out world")
print("  glyphcycle train --config config.txt")
print("  glyphcycle generate --checkpoint run/checkpoint.pt --images world/eval/images.bin --out cands.txt")
print("  glyphcycle evaluate --candidates cands.txt --eval-dir world --out metrics.txt")
print("  glyphcycle ablate --config config.txt --out ablation/")
