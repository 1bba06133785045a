"""Unpaired image-to-report generation on a deterministic synthetic world.

The package learns to describe glyph images in report language without ever
seeing an (image, report) pair: separately encoded embedding spaces are tied
together by cycle-consistent mapping functions, anchored by pseudo-reports
rendered from image labels, regularized adversarially, and decoded by a
report auto-encoder.
"""

from .decoder import GenerationConfig, drop_locals, generate
from .encoders import Representation, encode_image, encode_report
from .evalkit import MetricsReport, bleu, ce_metrics, extract_labels, meteor_simplified, rouge_l
from .glyphworld import DatasetBundle, GenerationSpec, generate_dataset, read_dataset, write_dataset
from .objectives import LossReport, LossWeights, contrastive, total_loss
from .textkit import (
    TemplateSet,
    TokenSeq,
    Vocabulary,
    build_vocab,
    default_template_set,
    detokenize,
    make_pseudo_report,
    tokenize,
)
from .trainer import ModelConfig, TrainConfig, Trainer, load_checkpoint

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "GenerationConfig",
    "GenerationSpec",
    "LossReport",
    "LossWeights",
    "MetricsReport",
    "ModelConfig",
    "Representation",
    "TemplateSet",
    "TokenSeq",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "bleu",
    "build_vocab",
    "ce_metrics",
    "contrastive",
    "default_template_set",
    "detokenize",
    "drop_locals",
    "encode_image",
    "encode_report",
    "extract_labels",
    "generate",
    "generate_dataset",
    "load_checkpoint",
    "make_pseudo_report",
    "meteor_simplified",
    "read_dataset",
    "rouge_l",
    "tokenize",
    "total_loss",
    "write_dataset",
]
