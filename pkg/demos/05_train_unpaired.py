#!/usr/bin/env python3
"""Train the full unpaired pipeline on a small world and watch it learn.

This is a scaled-down run (small corpus, few iterations) meant to finish in
a few minutes on a laptop core; the defaults in TrainConfig reproduce the
full desk-scale run. No image ever meets its report during training: the
model sees images with labels on one side, reports on the other, and aligns
the two spaces through pseudo-reports, cycles and the adversarial game.
"""

import time

from glyphcycle import GenerationSpec, TrainConfig, Trainer, generate_dataset
from glyphcycle.trainer import evaluate_checkpoint

bundle = generate_dataset(GenerationSpec(n_images=512, n_reports=512, n_eval=64, master_seed=0))

config = TrainConfig(
    out_dir="demo_run",
    iterations=600,
    batch_size=64,
    eval_every=150,
    eval_samples=32,
    master_seed=0,
)
trainer = Trainer(config, bundle)

bleu1, ce_f1 = trainer.eval_slice()
print(f"before training: bleu1={bleu1:.3f} ce_f1={ce_f1:.3f}")
print("training 600 iterations ...")

start = time.time()
history, ckpt = trainer.fit()
print(f"done in {(time.time() - start) / 60:.1f} min")

for i in (0, 149, 299, 449, 599):
    h = history[i]
    print(
        f"  iter {i:4d}: cm={h.l_cm:6.3f} cyc={h.l_cyc:6.3f} adv={h.l_adv:6.3f} "
        f"ae={h.l_ae:7.3f} disc={h.l_disc:6.3f}"
    )

metrics = evaluate_checkpoint(ckpt, bundle)
print()
print("after training:", metrics.summary())
print()
print("sample generations vs ground truth:")
from glyphcycle.evalkit import generate_reports

texts = generate_reports(trainer.model, bundle.eval_images[:3], trainer.vocab)
for text, truth in zip(texts, bundle.eval_texts[:3]):
    print("  generated:", text)
    print("  reference:", truth)
    print()
