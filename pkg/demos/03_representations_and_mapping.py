#!/usr/bin/env python3
"""Local/global representations, attention pooling, and the space mappers.

Both encoders output one local row per position plus a global vector that is
an attention-weighted sum of the locals, so the global is differentiable
through the weights and every loss on it reaches the locals too. The mappers
transform a whole [global; locals] representation between the two spaces.
"""

import torch

from glyphcycle import GenerationSpec, generate_dataset, build_vocab, tokenize
from glyphcycle.crossmap import MapperPair
from glyphcycle.encoders import ImageEncoder, ReportEncoder, pad_batch, pooling_residuals

torch.manual_seed(0)

bundle = generate_dataset(GenerationSpec(n_images=8, n_reports=8, n_eval=2, master_seed=3))
vocab = build_vocab(bundle.report_texts + bundle.templates.all_sentences())

image_encoder = ImageEncoder(image_size=32, patch_size=4, dim=64)
report_encoder = ReportEncoder(len(vocab), dim=64)

images = torch.as_tensor(bundle.images[:4])
image_rep = image_encoder(images)
print("image representation:")
print("  locals :", tuple(image_rep.locals_.shape), "(one row per 4x4 patch)")
print("  global :", tuple(image_rep.global_.shape))
wsum, recombine, min_w = pooling_residuals(image_rep)
print(f"  pooling identity: |sum(w)-1| <= {wsum:.1e}, |global - sum(w*locals)| <= {recombine:.1e}")

ids = pad_batch([tokenize(t, vocab) for t in bundle.report_texts[:4]])
report_rep = report_encoder(ids)
print("report representation:")
print("  locals :", tuple(report_rep.locals_.shape), "(one row per token, PAD masked)")

top = report_rep.attn_weights[0].topk(3).indices.tolist()
tokens = [vocab.token_of(int(i)) for i in ids[0]]
print("  highest-weight tokens of report 0:", [tokens[i] for i in top])

mappers = MapperPair(dim=64, heads=8)
mapped = mappers.i2r(image_rep)
cycled = mappers.r2i(mapped)
print()
print("mapping image -> report space -> back:")
print("  mapped locals:", tuple(mapped.locals_.shape), "(same shape, new space)")
cos = torch.nn.functional.cosine_similarity(cycled.global_, image_rep.global_)
print("  cycle cosine before any training:", [round(c, 3) for c in cos.tolist()])
print("  (training pushes these toward 1; see demo 05)")
