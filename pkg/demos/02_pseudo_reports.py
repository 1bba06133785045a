#!/usr/bin/env python3
"""Pseudo-reports: the cross-modality anchor.

A pseudo-report is rendered from an image's label vector alone. It is
deliberately rigid (one canonical sentence per finding, fixed order) and
deliberately partial (each positive finding is mentioned with probability
below one), so it resembles a real report in content but not in style.
"""

import numpy as np

from glyphcycle import default_template_set, make_pseudo_report
from glyphcycle.evalkit import extract_labels
from glyphcycle.glyphworld import render_report

templates = default_template_set()
labels = np.array([1, 0, 1, 1, 0, 0, 0, 0], dtype=np.uint8)
named = [f for f, bit in zip(templates.findings, labels) if bit]
print("labels say:", ", ".join(named))
print()

rng = np.random.default_rng(0)
print("three pseudo-reports for the same labels (partial by design):")
for _ in range(3):
    print("  ", make_pseudo_report(labels, templates, rng, include_prob=0.8))

print()
print("three styled reports for the same labels (what the model must produce):")
for _ in range(3):
    print("  ", render_report(labels, templates, rng))

print()
print("the rule-based extractor recovers labels from either style:")
pseudo = make_pseudo_report(labels, templates, np.random.default_rng(1), include_prob=1.0)
report = render_report(labels, templates, np.random.default_rng(2))
print("  pseudo ->", extract_labels(pseudo, templates))
print("  report ->", extract_labels(report, templates))
print("  truth  ->", labels)
