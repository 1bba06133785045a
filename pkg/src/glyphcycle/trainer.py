"""Alternating optimization loop, configuration and checkpointing.

Every source of randomness is derived from the master seed through named
streams, and batch order is a pure function of (seed, stream, iteration), so
runs are reproducible to the byte and training can resume from a checkpoint
without any carried RNG state. Each iteration performs one discriminator
update followed by one model update on freshly sampled unpaired batches;
pseudo-reports are rendered once per image from its labels and reused.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .crossmap import Discriminator, MapperPair
from .decoder import GenerationConfig, ReportDecoder, decode_teacher_forced, drop_locals
from .encoders import ImageEncoder, ReportEncoder, Representation, pad_batch
from .evalkit import MetricsReport, evaluate_model
from .glyphworld import DatasetBundle
from .objectives import (
    LossReport,
    LossWeights,
    loss_adv,
    loss_ae,
    loss_cm_terms,
    loss_cyc_terms,
    loss_disc,
    total_loss,
)
from .textkit import TemplateSet, Vocabulary, build_vocab, make_pseudo_report, tokenize

CHECKPOINT_VERSION = 1

STREAM_PSEUDO = 3
STREAM_IMAGE_ORDER = 4
STREAM_REPORT_ORDER = 5
STREAM_DROPOUT = 6


class TrainingDiverged(RuntimeError):
    """Raised when a loss component stops being finite; names the component."""

    def __init__(self, component: str, iteration: int):
        super().__init__(f"non-finite loss component {component} at iteration {iteration}")
        self.component = component
        self.iteration = iteration


@dataclass
class ModelConfig:
    """Architecture sizes; defaults are the desk-scale configuration."""

    dim: int = 64
    enc_layers: int = 3
    dec_layers: int = 3
    heads: int = 4
    mapper_heads: int = 8
    ff_dim: int = 128
    pool_hidden: int = 64
    disc_hidden: int = 64
    image_size: int = 32
    patch_size: int = 4
    max_len: int = 40


@dataclass
class TrainConfig:
    """Everything a training run depends on, including ablation switches."""

    dataset_dir: str = ""
    out_dir: str = ""
    iterations: int = 6000
    batch_size: int = 128
    lr_model: float = 1e-4
    lr_disc: float = 1e-4
    weight_decay: float = 0.01
    gamma_cm: float = 3.0
    gamma_cyc: float = 1.0
    gamma_adv: float = 0.25
    gamma_ae: float = 1.5
    tau: float = 0.1
    dropout_p: float = 0.9
    include_prob: float = 0.8
    negation_subset: int = 2
    master_seed: int = 0
    eval_every: int = 1000
    eval_samples: int = 64
    use_cm: bool = True
    use_cyc: bool = True
    use_adv: bool = True
    use_ae: bool = True
    decode_global: bool = True
    decode_local: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            cm=self.gamma_cm, cyc=self.gamma_cyc, adv=self.gamma_adv, ae=self.gamma_ae, tau=self.tau
        )

    def problems(self) -> list[str]:
        bad = []
        if self.batch_size < 2:
            bad.append("batch_size must be at least 2")
        if self.iterations < 0:
            bad.append("iterations must be nonnegative")
        for name in ("lr_model", "lr_disc"):
            if getattr(self, name) <= 0:
                bad.append(f"{name} must be positive")
        if not 0.0 <= self.dropout_p <= 1.0:
            bad.append("dropout_p must lie in [0, 1]")
        if not 0.0 <= self.include_prob <= 1.0:
            bad.append("include_prob must lie in [0, 1]")
        if self.tau <= 0:
            bad.append("tau must be positive")
        if min(self.gamma_cm, self.gamma_cyc, self.gamma_adv, self.gamma_ae) < 0:
            bad.append("loss weights must be nonnegative")
        if not self.decode_global and not self.decode_local:
            bad.append("decode_global and decode_local cannot both be off")
        return bad


def _coerce(value: str, kind):
    if kind is bool:
        lowered = value.lower()
        if lowered not in ("true", "false"):
            raise ValueError(f"expected true/false, got {value!r}")
        return lowered == "true"
    return kind(value)


def save_config(config: TrainConfig, path) -> None:
    """Flat key=value file; model fields carry a ``model_`` prefix."""
    lines = []
    for f in dataclasses.fields(TrainConfig):
        if f.name == "model":
            continue
        lines.append(f"{f.name}={getattr(config, f.name)}")
    for f in dataclasses.fields(ModelConfig):
        lines.append(f"model_{f.name}={getattr(config.model, f.name)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing config file {path}")
    entries = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line {path}:{ln}: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()

    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "model"}
    model_fields = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    kwargs, model_kwargs = {}, {}
    for key, value in entries.items():
        if key.startswith("model_") and key[len("model_") :] in model_fields:
            name = key[len("model_") :]
            model_kwargs[name] = _coerce(value, types[model_fields[name]])
        elif key in train_fields:
            kwargs[key] = _coerce(value, types[train_fields[key]])
        else:
            raise ValueError(f"unknown config key {key!r} in {path}")
    return TrainConfig(model=ModelConfig(**model_kwargs), **kwargs)


class GenerationModel(nn.Module):
    """All trainable pieces of the report generator (discriminator excluded)."""

    def __init__(
        self,
        vocab_size: int,
        cfg: ModelConfig,
        decode_global: bool = True,
        decode_local: bool = True,
    ):
        super().__init__()
        self.cfg = cfg
        self.report_encoder = ReportEncoder(
            vocab_size, cfg.dim, cfg.enc_layers, cfg.heads, cfg.ff_dim, cfg.pool_hidden
        )
        self.image_encoder = ImageEncoder(
            cfg.image_size,
            cfg.patch_size,
            cfg.dim,
            cfg.enc_layers,
            cfg.heads,
            cfg.ff_dim,
            cfg.pool_hidden,
        )
        self.mappers = MapperPair(cfg.dim, cfg.mapper_heads)
        self.decoder = ReportDecoder(
            self.report_encoder.embed,
            cfg.dim,
            cfg.dec_layers,
            cfg.heads,
            cfg.ff_dim,
            decode_global,
            decode_local,
        )


def build_model(vocab_size: int, config: TrainConfig) -> tuple[GenerationModel, Discriminator]:
    """Seeded construction; identical (vocab_size, config) gives identical init."""
    torch.manual_seed(config.master_seed)
    model = GenerationModel(
        vocab_size, config.model, config.decode_global, config.decode_local
    )
    disc = Discriminator(config.model.dim, config.model.disc_hidden)
    return model, disc


def batch_order(seed: int, stream: int, count: int, batch_size: int, iteration: int) -> np.ndarray:
    """Indices of the batch served at ``iteration``: a fresh permutation per
    epoch, partial trailing batches dropped, epochs cycling forever."""
    per_epoch = count // batch_size
    if per_epoch == 0:
        raise ValueError(f"batch size {batch_size} exceeds corpus size {count}")
    epoch, slot = divmod(iteration, per_epoch)
    perm = np.random.default_rng([seed, stream, epoch]).permutation(count)
    return perm[slot * batch_size : (slot + 1) * batch_size]


def _history_line(iteration: int, report: LossReport) -> str:
    return (
        f"iter={iteration} l_cm={report.l_cm:.9e} l_cyc={report.l_cyc:.9e} "
        f"l_adv={report.l_adv:.9e} l_ae={report.l_ae:.9e} l_ae_token={report.l_ae_token:.9e} "
        f"l_disc={report.l_disc:.9e} total={report.total:.9e}"
    )


def parse_history_line(line: str) -> dict[str, float]:
    out = {}
    for chunk in line.split():
        key, value = chunk.split("=", 1)
        out[key] = float(value)
    return out


class Trainer:
    """Owns the model pair, the optimizers and the deterministic data feeds."""

    def __init__(self, config: TrainConfig, bundle: DatasetBundle):
        problems = config.problems()
        if problems:
            raise ValueError("invalid train config: " + "; ".join(problems))
        if bundle.manifest.image_size != config.model.image_size:
            raise ValueError(
                f"dataset images are {bundle.manifest.image_size}px, "
                f"model expects {config.model.image_size}px"
            )
        if config.batch_size > min(len(bundle.images), len(bundle.report_texts)):
            raise ValueError("batch_size exceeds a training split")
        self.config = config
        self.bundle = bundle
        self.templates: TemplateSet = bundle.templates
        self.vocab: Vocabulary = build_vocab(
            list(bundle.report_texts) + self.templates.all_sentences()
        )
        self.model, self.disc = build_model(len(self.vocab), config)
        self.opt_model = torch.optim.AdamW(
            self.model.parameters(), lr=config.lr_model, weight_decay=config.weight_decay
        )
        self.opt_disc = torch.optim.AdamW(
            self.disc.parameters(), lr=config.lr_disc, weight_decay=config.weight_decay
        )
        self.iteration = 0

        self.images = torch.as_tensor(bundle.images, dtype=torch.float32)
        self.report_seqs = [tokenize(t, self.vocab) for t in bundle.report_texts]
        self.pseudo_seqs = []
        for i, labels in enumerate(bundle.image_labels):
            rng = np.random.default_rng([config.master_seed, STREAM_PSEUDO, i])
            text = make_pseudo_report(
                labels, self.templates, rng, config.include_prob, config.negation_subset
            )
            self.pseudo_seqs.append(tokenize(text, self.vocab))

    # -- single iteration ---------------------------------------------------

    def train_step(self) -> LossReport:
        cfg = self.config
        t = self.iteration
        weights = cfg.weights
        zero = torch.zeros(())

        img_idx = batch_order(
            cfg.master_seed, STREAM_IMAGE_ORDER, len(self.images), cfg.batch_size, t
        )
        rep_idx = batch_order(
            cfg.master_seed, STREAM_REPORT_ORDER, len(self.report_seqs), cfg.batch_size, t
        )

        mappers = self.model.mappers
        need_images = cfg.use_cm or cfg.use_cyc or cfg.use_adv
        image_reps = self.model.image_encoder(self.images[img_idx]) if need_images else None

        report_ids = pad_batch([self.report_seqs[i] for i in rep_idx])
        report_reps = self.model.report_encoder(report_ids)
        pseudo_reps = None
        if cfg.use_cm:
            pseudo_ids = pad_batch([self.pseudo_seqs[i] for i in img_idx])
            pseudo_reps = self.model.report_encoder(pseudo_ids)

        # full mapper passes only where the mapped locals are consumed again;
        # elsewhere only the transformed global row is computed
        mapped_images = mappers.i2r(image_reps) if cfg.use_cyc else None
        mapped_image_g = mapped_images.global_ if cfg.use_cyc else (
            mappers.i2r.transform_global(image_reps) if need_images else None
        )
        mapped_reports = mappers.r2i(report_reps) if cfg.use_cyc else None
        mapped_report_g = mapped_reports.global_ if cfg.use_cyc else (
            mappers.r2i.transform_global(report_reps) if cfg.use_adv else None
        )

        l_disc_t = zero
        l_adv_t = zero
        if cfg.use_adv:
            l_disc_t = loss_disc(
                report_reps.global_, mapped_image_g, image_reps.global_, mapped_report_g, self.disc
            )
            self.opt_disc.zero_grad(set_to_none=True)
            l_disc_t.backward()
            self.opt_disc.step()
            l_adv_t = loss_adv(
                report_reps.global_, mapped_image_g, image_reps.global_, mapped_report_g, self.disc
            )

        l_cm_t = zero
        if cfg.use_cm:
            l_cm_t = loss_cm_terms(
                mapped_image_g,
                pseudo_reps.global_,
                image_reps.global_,
                mappers.r2i.transform_global(pseudo_reps),
                cfg.tau,
            )
        l_cyc_t = zero
        if cfg.use_cyc:
            l_cyc_t = loss_cyc_terms(
                image_reps.global_,
                mappers.r2i.transform_global(mapped_images),
                report_reps.global_,
                mappers.i2r.transform_global(mapped_reports),
                cfg.tau,
            )

        l_ae_t = zero
        ae_token = 0.0
        if cfg.use_ae:
            rng = np.random.default_rng([cfg.master_seed, STREAM_DROPOUT, t])
            dropped = drop_locals(report_reps, cfg.dropout_p, rng, training=True)
            logits = decode_teacher_forced(dropped, report_ids, self.model.decoder)
            targets = report_ids[:, 1:]
            l_ae_t = loss_ae(logits, targets)
            token_count = int((targets != 0).sum())
            ae_token = float(l_ae_t.item()) * cfg.batch_size / token_count

        for name, tensor in (
            ("l_cm", l_cm_t),
            ("l_cyc", l_cyc_t),
            ("l_adv", l_adv_t),
            ("l_ae", l_ae_t),
            ("l_disc", l_disc_t),
        ):
            if not bool(torch.isfinite(tensor)):
                raise TrainingDiverged(name, t)

        total_t = (
            weights.cm * l_cm_t + weights.cyc * l_cyc_t + weights.adv * l_adv_t + weights.ae * l_ae_t
        )
        self.opt_model.zero_grad(set_to_none=True)
        total_t.backward()
        self.opt_model.step()

        report = LossReport(
            l_cm=float(l_cm_t.item()),
            l_cyc=float(l_cyc_t.item()),
            l_adv=float(l_adv_t.item()),
            l_ae=float(l_ae_t.item()),
            l_disc=float(l_disc_t.item()),
            total=0.0,
            l_ae_token=ae_token,
        )
        report.total = total_loss(report, weights)
        self.iteration += 1
        return report

    # -- evaluation slice ---------------------------------------------------

    def eval_slice(self) -> tuple[float, float]:
        """(bleu1, ce_f1) on the head of the paired eval split."""
        n = min(self.config.eval_samples, len(self.bundle.eval_images))
        metrics = evaluate_model(
            self.model,
            self.bundle.eval_images[:n],
            self.bundle.eval_texts[:n],
            self.bundle.eval_labels[:n],
            self.vocab,
            self.templates,
            GenerationConfig(self.config.model.max_len),
        )
        return metrics.bleu1, metrics.ce_f1

    # -- full run -----------------------------------------------------------

    def fit(self, out_dir=None) -> tuple[list[LossReport], Path]:
        """Run to ``config.iterations``, streaming history and eval logs, then
        write the final checkpoint. Returns (history, checkpoint path)."""
        out = Path(out_dir if out_dir is not None else self.config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_config(self.config, out / "config.txt")
        self.vocab.save(out / "vocab.txt")
        history: list[LossReport] = []
        mode = "a" if self.iteration > 0 else "w"
        with open(out / "history.log", mode, encoding="utf-8") as hist_fh, open(
            out / "eval.log", mode, encoding="utf-8"
        ) as eval_fh:
            while self.iteration < self.config.iterations:
                report = self.train_step()
                history.append(report)
                hist_fh.write(_history_line(self.iteration - 1, report) + "\n")
                if self.config.eval_every and self.iteration % self.config.eval_every == 0:
                    bleu1, ce_f1 = self.eval_slice()
                    eval_fh.write(
                        f"iter={self.iteration} bleu1={bleu1:.9e} ce_f1={ce_f1:.9e}\n"
                    )
        ckpt = out / "checkpoint.pt"
        self.save_checkpoint(ckpt)
        return history, ckpt

    # -- persistence ----------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "iteration": self.iteration,
            "config": _config_dict(self.config),
            "vocab": list(self.vocab.id_to_token),
            "templates": _template_dict(self.templates),
            "model_state": self.model.state_dict(),
            "disc_state": self.disc.state_dict(),
            "opt_model_state": self.opt_model.state_dict(),
            "opt_disc_state": self.opt_disc.state_dict(),
        }
        torch.save(payload, path)

    @classmethod
    def from_checkpoint(cls, path, bundle: DatasetBundle) -> "Trainer":
        """Rebuild a trainer mid-run; the dataset must match the one trained on."""
        loaded = load_checkpoint(path)
        trainer = cls(loaded.config, bundle)
        if trainer.vocab.id_to_token != loaded.vocab.id_to_token:
            raise ValueError("dataset vocabulary does not match the checkpoint")
        trainer.model.load_state_dict(loaded.model.state_dict())
        trainer.disc.load_state_dict(loaded.disc.state_dict())
        trainer.opt_model.load_state_dict(loaded.opt_model_state)
        trainer.opt_disc.load_state_dict(loaded.opt_disc_state)
        trainer.iteration = loaded.iteration
        return trainer


def _config_dict(config: TrainConfig) -> dict:
    out = dataclasses.asdict(config)
    return out


def _config_from_dict(payload: dict) -> TrainConfig:
    payload = dict(payload)
    model = ModelConfig(**payload.pop("model"))
    return TrainConfig(model=model, **payload)


def _template_dict(templates: TemplateSet) -> dict:
    return {
        "findings": templates.findings,
        "keywords": templates.keywords,
        "positive": templates.positive,
        "negative": templates.negative,
        "pseudo_positive": templates.pseudo_positive,
        "pseudo_negative": templates.pseudo_negative,
        "fillers": templates.fillers,
    }


@dataclass
class LoadedCheckpoint:
    """A checkpoint restored for inference or resumption."""

    model: GenerationModel
    disc: Discriminator
    vocab: Vocabulary
    templates: TemplateSet
    config: TrainConfig
    iteration: int
    opt_model_state: dict
    opt_disc_state: dict

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig(self.config.model.max_len)


def load_checkpoint(path, expected_vocab_size: int | None = None) -> LoadedCheckpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    payload = torch.load(path, weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r} in {path}")
    config = _config_from_dict(payload["config"])
    vocab = Vocabulary(payload["vocab"])
    if expected_vocab_size is not None and expected_vocab_size != len(vocab):
        raise ValueError(
            f"checkpoint vocabulary has {len(vocab)} tokens, expected {expected_vocab_size}"
        )
    templates = TemplateSet(**payload["templates"])
    model = GenerationModel(
        len(vocab), config.model, config.decode_global, config.decode_local
    )
    model.load_state_dict(payload["model_state"])
    disc = Discriminator(config.model.dim, config.model.disc_hidden)
    disc.load_state_dict(payload["disc_state"])
    return LoadedCheckpoint(
        model=model,
        disc=disc,
        vocab=vocab,
        templates=templates,
        config=config,
        iteration=payload["iteration"],
        opt_model_state=payload["opt_model_state"],
        opt_disc_state=payload["opt_disc_state"],
    )


def evaluate_checkpoint(path, bundle: DatasetBundle) -> MetricsReport:
    """Full paired-eval metrics for a stored checkpoint."""
    loaded = load_checkpoint(path)
    return evaluate_model(
        loaded.model,
        bundle.eval_images,
        bundle.eval_texts,
        bundle.eval_labels,
        loaded.vocab,
        loaded.templates,
        loaded.generation_config(),
    )
