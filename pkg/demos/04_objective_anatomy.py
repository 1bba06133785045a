#!/usr/bin/env python3
"""The four model objectives and the discriminator objective, by hand.

Shows the closed-form sanity points: a chance discriminator costs exactly
4 log 2 on both sides of the adversarial game, identity mappers make the
cycle loss hit its floor, and the total is the weighted sum with the
discriminator excluded.
"""

import math

import torch

from glyphcycle import LossReport, LossWeights, contrastive, total_loss
from glyphcycle.crossmap import Discriminator, MapperPair
from glyphcycle.encoders import Representation
from glyphcycle.objectives import loss_adv, loss_cyc, loss_disc, nce_grid

torch.manual_seed(1)


def rep_from(globals_):
    b, d = globals_.shape
    locals_ = globals_.unsqueeze(1).repeat(1, 4, 1)
    weights = torch.full((b, 4), 0.25)
    return Representation(locals_, globals_, weights, torch.ones(b, 4, dtype=torch.bool))


print("contrastive primitive:")
anchor = torch.tensor([1.0, 0.0])
ortho = torch.tensor([0.0, 1.0])
print("  no negatives          ->", contrastive(anchor, anchor, [], tau=1.0).item())
print("  one orthogonal, tau=1 ->", round(contrastive(anchor, anchor, [ortho], tau=1.0).item(), 5),
      " (closed form -log(e/(e+1)) =", round(-math.log(math.e / (math.e + 1)), 5), ")")

print()
print("cycle loss floor with identity mappers:")
mappers = MapperPair(dim=8, heads=2)
mappers.i2r.init_identity()
mappers.r2i.init_identity()
image_g = torch.randn(6, 8)
report_g = torch.randn(6, 8)
value = loss_cyc(rep_from(image_g), rep_from(report_g), mappers, tau=0.1)
floor = nce_grid(image_g, image_g, 0.1) + nce_grid(report_g, report_g, 0.1)
print(f"  loss_cyc = {value.item():.6f}, floor with positives at cosine 1 = {floor.item():.6f}")

print()
print("adversarial pair at chance:")
disc = Discriminator(dim=8)
with torch.no_grad():
    disc.fc3.weight.zero_()
    disc.fc3.bias.zero_()
xs = [torch.randn(5, 8) for _ in range(4)]
print(f"  loss_disc = {loss_disc(*xs, disc).item():.6f}")
print(f"  loss_adv  = {loss_adv(*xs, disc).item():.6f}")
print(f"  4 log 2   = {4 * math.log(2):.6f}")

print()
print("total objective at the default weights (discriminator excluded):")
weights = LossWeights()
report = LossReport(l_cm=1.0, l_cyc=1.0, l_adv=1.0, l_ae=1.0, l_disc=99.0, total=0.0)
print(f"  gammas ({weights.cm}, {weights.cyc}, {weights.adv}, {weights.ae}) on unit components ->",
      total_loss(report, weights))
