"""Deterministic synthetic multimodal world: glyph images and template reports.

Each finding has a fixed 6x6 glyph stamped into its own anchor region of the
image, so the label signal is local and learnable by construction. Image and
report training splits are generated from disjoint seed streams with
different label prevalences (genuinely unpaired); the evaluation split pairs
an image and a report rendered from one shared label draw.

Per-sample randomness comes from ``default_rng([master_seed, stream, index])``
so any sample can be regenerated in isolation and the two training splits can
never share a seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textkit import TemplateSet, default_template_set

STREAM_IMAGES = 0
STREAM_REPORTS = 1
STREAM_EVAL = 2

GLYPH_SIZE = 6
REGION_SIZE = 10
BACKGROUND = 0.08

DATASET_FORMAT_VERSION = 1


def _glyph_patterns() -> np.ndarray:
    """Eight dense 6x6 binary glyphs, distinct by their hole placement."""
    g = np.ones((8, GLYPH_SIZE, GLYPH_SIZE), dtype=np.uint8)
    g[0, 2:4, 2:4] = 0  # center hole
    g[1, 0, :] = 0  # open top
    g[2, :, 0] = 0  # open left
    g[3, [0, -1], :] = 0  # horizontal band
    g[4, :, [0, -1]] = 0  # vertical band
    g[5, 0::2, 0] = 0
    g[5, 1::2, -1] = 0  # notched edges
    g[6, 0, 0:3] = 0
    g[6, -1, 3:6] = 0  # opposing corner cuts
    g[7, 2:4, 0:2] = 0
    g[7, 2:4, 4:6] = 0  # side slots
    return g


GLYPHS = _glyph_patterns()

# Anchor top-left corners on a 3x3 grid; eight of the nine slots are used.
ANCHORS = [(r, c) for r in (1, 11, 21) for c in (1, 11, 21)][:8]


def sample_labels(prevalence: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli draw per finding."""
    prevalence = np.asarray(prevalence, dtype=np.float64)
    if np.any(prevalence < 0) or np.any(prevalence > 1):
        raise ValueError("prevalence entries must lie in [0, 1]")
    return (rng.random(prevalence.shape) < prevalence).astype(np.uint8)


def render_image(
    labels: np.ndarray,
    rng: np.random.Generator,
    noise_level: float = 0.15,
    image_size: int = 32,
) -> np.ndarray:
    """Render one image: noisy background plus one glyph per positive finding.

    Glyphs are stamped at their finding's anchor with +-2 px positional jitter
    and jittered intensity; pixels are clipped to [0, 1]. ``noise_level=0``
    with all-negative labels yields a uniform background.
    """
    if not 0.0 <= noise_level < 1.0:
        raise ValueError("noise_level must lie in [0, 1)")
    labels = np.asarray(labels)
    pixels = np.full((image_size, image_size), BACKGROUND, dtype=np.float64)
    if noise_level > 0.0:
        pixels += noise_level * (rng.random((image_size, image_size)) - 0.5)
    for k in np.flatnonzero(labels):
        r0, c0 = ANCHORS[k]
        jr, jc = rng.integers(0, REGION_SIZE - GLYPH_SIZE + 1, size=2)
        amplitude = rng.uniform(0.85, 1.0)
        patch = pixels[r0 + jr : r0 + jr + GLYPH_SIZE, c0 + jc : c0 + jc + GLYPH_SIZE]
        patch += amplitude * GLYPHS[k]
    return np.clip(pixels, 0.0, 1.0).astype(np.float32)


def render_report(
    labels: np.ndarray,
    templates: TemplateSet,
    rng: np.random.Generator,
    max_negation_mentions: int = 2,
    filler_prob: float = 0.5,
) -> str:
    """Render one ground-truth style report.

    Every positive finding gets a randomly chosen positive sentence; a random
    subset of negative findings gets a negation sentence; a filler may be
    appended; sentence order is shuffled. Unlike pseudo-reports the style
    varies, but mentioned findings always agree with the labels.
    """
    labels = np.asarray(labels)
    sentences: list[str] = []
    for k in np.flatnonzero(labels):
        variants = templates.positive[templates.findings[k]]
        sentences.append(variants[rng.integers(len(variants))])
    neg_idx = np.flatnonzero(labels == 0)
    n_neg = int(rng.integers(0, max_negation_mentions + 1))
    n_neg = min(n_neg, len(neg_idx))
    if n_neg:
        for k in sorted(rng.choice(neg_idx, size=n_neg, replace=False)):
            variants = templates.negative[templates.findings[k]]
            sentences.append(variants[rng.integers(len(variants))])
    if rng.random() < filler_prob:
        sentences.append(templates.fillers[rng.integers(len(templates.fillers))])
    if not sentences:
        sentences.append(templates.fillers[rng.integers(len(templates.fillers))])
    order = rng.permutation(len(sentences))
    return " ".join(sentences[i] for i in order)


@dataclass
class GenerationSpec:
    """Manifest describing one dataset; generation is a pure function of it."""

    master_seed: int = 0
    n_images: int = 4000
    n_reports: int = 4000
    n_eval: int = 500
    image_size: int = 32
    noise_level: float = 0.15
    image_prevalence: tuple[float, ...] = (0.35,) * 8
    report_prevalence: tuple[float, ...] = (0.25,) * 8
    eval_prevalence: tuple[float, ...] = (0.35,) * 8

    def problems(self) -> list[str]:
        bad = []
        for name in ("n_images", "n_reports", "n_eval"):
            if getattr(self, name) <= 0:
                bad.append(f"{name} must be positive")
        if self.image_size % 4 != 0 or self.image_size <= 0:
            bad.append("image_size must be a positive multiple of 4")
        if not 0.0 <= self.noise_level < 1.0:
            bad.append("noise_level must lie in [0, 1)")
        k = len(self.image_prevalence)
        for name in ("image_prevalence", "report_prevalence", "eval_prevalence"):
            vec = getattr(self, name)
            if len(vec) != k:
                bad.append(f"{name} length {len(vec)} != {k}")
            if any(not 0.0 <= p <= 1.0 for p in vec):
                bad.append(f"{name} entries must lie in [0, 1]")
        return bad

    @property
    def num_findings(self) -> int:
        return len(self.image_prevalence)


@dataclass
class DatasetBundle:
    """In-memory dataset: two unpaired training splits plus a paired eval split."""

    manifest: GenerationSpec
    templates: TemplateSet
    images: np.ndarray  # (n_images, H, W) float32
    image_labels: np.ndarray  # (n_images, K) uint8
    report_texts: list[str]
    report_labels: np.ndarray  # (n_reports, K) uint8
    eval_images: np.ndarray
    eval_texts: list[str]
    eval_labels: np.ndarray


def sample_rng(master_seed: int, stream: int, index: int) -> np.random.Generator:
    """Per-sample generator; the (stream, index) pair is the counter scheme."""
    return np.random.default_rng([master_seed, stream, index])


def generate_dataset(spec: GenerationSpec, templates: TemplateSet | None = None) -> DatasetBundle:
    """Generate the full bundle for a manifest; byte-stable across runs."""
    problems = spec.problems()
    if problems:
        raise ValueError("invalid generation spec: " + "; ".join(problems))
    templates = templates or default_template_set()
    if templates.num_findings != spec.num_findings:
        raise ValueError("template findings do not match prevalence length")

    images = np.empty((spec.n_images, spec.image_size, spec.image_size), dtype=np.float32)
    image_labels = np.empty((spec.n_images, spec.num_findings), dtype=np.uint8)
    for i in range(spec.n_images):
        rng = sample_rng(spec.master_seed, STREAM_IMAGES, i)
        image_labels[i] = sample_labels(spec.image_prevalence, rng)
        images[i] = render_image(image_labels[i], rng, spec.noise_level, spec.image_size)

    report_texts = []
    report_labels = np.empty((spec.n_reports, spec.num_findings), dtype=np.uint8)
    for i in range(spec.n_reports):
        rng = sample_rng(spec.master_seed, STREAM_REPORTS, i)
        report_labels[i] = sample_labels(spec.report_prevalence, rng)
        report_texts.append(render_report(report_labels[i], templates, rng))

    eval_images = np.empty((spec.n_eval, spec.image_size, spec.image_size), dtype=np.float32)
    eval_texts = []
    eval_labels = np.empty((spec.n_eval, spec.num_findings), dtype=np.uint8)
    for i in range(spec.n_eval):
        rng = sample_rng(spec.master_seed, STREAM_EVAL, i)
        eval_labels[i] = sample_labels(spec.eval_prevalence, rng)
        eval_images[i] = render_image(eval_labels[i], rng, spec.noise_level, spec.image_size)
        eval_texts.append(render_report(eval_labels[i], templates, rng))

    return DatasetBundle(
        manifest=spec,
        templates=templates,
        images=images,
        image_labels=image_labels,
        report_texts=report_texts,
        report_labels=report_labels,
        eval_images=eval_images,
        eval_texts=eval_texts,
        eval_labels=eval_labels,
    )


def write_manifest(spec: GenerationSpec, path) -> None:
    lines = [
        f"format_version={DATASET_FORMAT_VERSION}",
        f"master_seed={spec.master_seed}",
        f"n_images={spec.n_images}",
        f"n_reports={spec.n_reports}",
        f"n_eval={spec.n_eval}",
        f"image_size={spec.image_size}",
        f"noise_level={spec.noise_level!r}",
        "image_prevalence=" + ",".join(repr(p) for p in spec.image_prevalence),
        "report_prevalence=" + ",".join(repr(p) for p in spec.report_prevalence),
        "eval_prevalence=" + ",".join(repr(p) for p in spec.eval_prevalence),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> GenerationSpec:
    fields = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, value = line.split("=", 1)
            fields[key] = value
    version = int(fields.pop("format_version"))
    if version != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {version} in {path}")
    vec = lambda s: tuple(float(x) for x in s.split(","))
    return GenerationSpec(
        master_seed=int(fields["master_seed"]),
        n_images=int(fields["n_images"]),
        n_reports=int(fields["n_reports"]),
        n_eval=int(fields["n_eval"]),
        image_size=int(fields["image_size"]),
        noise_level=float(fields["noise_level"]),
        image_prevalence=vec(fields["image_prevalence"]),
        report_prevalence=vec(fields["report_prevalence"]),
        eval_prevalence=vec(fields["eval_prevalence"]),
    )


def write_images(images: np.ndarray, bin_path, hdr_path) -> None:
    blob = np.ascontiguousarray(images, dtype=np.float32).tobytes()
    bin_path.write_bytes(blob)
    checksum = hashlib.sha256(blob).hexdigest()
    n, h, w = images.shape
    hdr_path.write_text(
        f"dtype=float32\norder=C\nshape={n} {h} {w}\nchecksum=sha256:{checksum}\n",
        encoding="utf-8",
    )


def read_images(bin_path, hdr_path) -> np.ndarray:
    if not hdr_path.exists():
        raise FileNotFoundError(f"missing image header {hdr_path}")
    if not bin_path.exists():
        raise FileNotFoundError(f"missing image blob {bin_path}")
    fields = dict(
        line.split("=", 1) for line in hdr_path.read_text(encoding="utf-8").splitlines() if line
    )
    n, h, w = (int(x) for x in fields["shape"].split())
    blob = bin_path.read_bytes()
    expected = n * h * w * 4
    if len(blob) != expected:
        raise ValueError(f"corrupt image blob {bin_path}: {len(blob)} bytes, expected {expected}")
    checksum = "sha256:" + hashlib.sha256(blob).hexdigest()
    if checksum != fields["checksum"]:
        raise ValueError(f"corrupt image blob {bin_path}: checksum mismatch")
    return np.frombuffer(blob, dtype=np.float32).reshape(n, h, w).copy()


def write_labels(labels: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in labels:
            fh.write(" ".join(str(int(b)) for b in row) + "\n")


def read_labels(path, k: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing label file {path}")
    rows = []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        bits = line.split()
        if len(bits) != k or any(b not in ("0", "1") for b in bits):
            raise ValueError(f"corrupt label record at {path}:{ln}")
        rows.append([int(b) for b in bits])
    return np.asarray(rows, dtype=np.uint8)


def write_reports(texts: list[str], labels: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row, text in zip(labels, texts):
            bits = "".join(str(int(b)) for b in row)
            fh.write(f"{bits}\t{text}\n")


def read_reports(path, k: int) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise FileNotFoundError(f"missing report file {path}")
    texts, rows = [], []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if "\t" not in line:
            raise ValueError(f"corrupt report record at {path}:{ln}")
        bits, text = line.split("\t", 1)
        if len(bits) != k or any(b not in "01" for b in bits):
            raise ValueError(f"corrupt report record at {path}:{ln}")
        rows.append([int(b) for b in bits])
        texts.append(text)
    return texts, np.asarray(rows, dtype=np.uint8)


def write_dataset(bundle: DatasetBundle, root) -> None:
    """Write the documented directory layout; see README for the format."""
    root = Path(root)
    (root / "eval").mkdir(parents=True, exist_ok=True)
    write_manifest(bundle.manifest, root / "manifest")
    bundle.templates.save(root / "templates.json")
    write_images(bundle.images, root / "images.bin", root / "images.hdr")
    write_labels(bundle.image_labels, root / "labels.txt")
    write_reports(bundle.report_texts, bundle.report_labels, root / "reports.txt")
    write_images(bundle.eval_images, root / "eval" / "images.bin", root / "eval" / "images.hdr")
    write_labels(bundle.eval_labels, root / "eval" / "labels.txt")
    write_reports(bundle.eval_texts, bundle.eval_labels, root / "eval" / "reports.txt")


def read_dataset(root) -> DatasetBundle:
    """Inverse of :func:`write_dataset`; validates checksums and counts."""
    root = Path(root)
    manifest_path = root / "manifest"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing manifest {manifest_path}")
    spec = read_manifest(manifest_path)
    templates = TemplateSet.load(root / "templates.json")
    k = spec.num_findings

    images = read_images(root / "images.bin", root / "images.hdr")
    image_labels = read_labels(root / "labels.txt", k)
    report_texts, report_labels = read_reports(root / "reports.txt", k)
    eval_images = read_images(root / "eval" / "images.bin", root / "eval" / "images.hdr")
    eval_labels = read_labels(root / "eval" / "labels.txt", k)
    eval_texts, eval_report_labels = read_reports(root / "eval" / "reports.txt", k)

    counts = {
        "images.bin": (len(images), spec.n_images),
        "labels.txt": (len(image_labels), spec.n_images),
        "reports.txt": (len(report_texts), spec.n_reports),
        "eval/images.bin": (len(eval_images), spec.n_eval),
        "eval/labels.txt": (len(eval_labels), spec.n_eval),
        "eval/reports.txt": (len(eval_texts), spec.n_eval),
    }
    for name, (got, want) in counts.items():
        if got != want:
            raise ValueError(f"corrupt dataset: {name} holds {got} records, manifest says {want}")
    if not np.array_equal(eval_labels, eval_report_labels):
        raise ValueError("corrupt dataset: eval/reports.txt labels disagree with eval/labels.txt")

    return DatasetBundle(
        manifest=spec,
        templates=templates,
        images=images,
        image_labels=image_labels,
        report_texts=report_texts,
        report_labels=report_labels,
        eval_images=eval_images,
        eval_texts=eval_texts,
        eval_labels=eval_labels,
    )
