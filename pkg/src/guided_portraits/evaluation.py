"""Detection-rate benchmark over eight prompt categories.

Each category becomes a synthetic data model: a Gaussian mixture whose
component means sit between the canonical face raster and a category
specific distractor texture.  The abstractness ``d`` sets how far towards
the distractor the means sit.  Portraits are sampled with and without
landmark guidance and scored by the template detector.

Distractors are band-pass DCT textures (mid spatial frequencies) scaled by a
per-component contrast ladder.  Each texture is orthogonalized against the
face under the detector's blur, so distractors lower correlation with the
face without cancelling it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.fft import idctn

from . import cfgfile
from .diffusion import GaussianMixture, NoiseSchedule, PosteriorMeanDenoiser, sample
from .errors import ContractViolation, ValidationError
from .face import DetectorConfig, Detector, gaussian_blur, oval_bbox
from .guidance import GuidanceConfig, LandmarkMemory, default_memory, make_hook
from .imageio import write_pgm

CATEGORY_NAMES = ("Realistic", "Animals", "Fruits", "Plants", "OfficeAccessories", "Bags", "Clothes", "Cartoons")

DEFAULT_ABSTRACTNESS = {
    "Realistic": 0.1,
    "Animals": 0.7,
    "Fruits": 0.5,
    "Plants": 0.45,
    "OfficeAccessories": 0.5,
    "Bags": 0.45,
    "Clothes": 0.45,
    "Cartoons": 0.9,
}

PROMPT_FORMAT = "a portrait of a {}, fine face."

PIXEL_STD = 0.25
DISTRACTOR_LEVEL = 0.5
DISTRACTOR_BAND = (8.0, 13.0)
DISTRACTOR_CONTRASTS = (0.1, 0.2, 0.68, 0.70, 0.72, 0.74, 0.76, 0.78, 0.80, 2.0, 2.4, 2.6)

SWEEP_WEIGHTS = (0.0, 0.25, 0.5, 0.75, 1.0)

_NOUNS_FILE = Path(__file__).with_name("data") / "prompt_nouns.cfg"


@dataclass(frozen=True)
class CategorySpec:
    name: str
    abstractness: float
    prompt_nouns: tuple[str, ...]

    def __post_init__(self):
        if self.name not in CATEGORY_NAMES:
            raise ValidationError(f"unknown category {self.name!r}; expected one of {', '.join(CATEGORY_NAMES)}")
        if not 0.0 <= self.abstractness <= 1.0:
            raise ValidationError(f"{self.name}: abstractness must lie in [0, 1]")
        nouns = tuple(n.strip() for n in self.prompt_nouns if n.strip())
        if not nouns:
            raise ValidationError(f"{self.name}: at least one prompt noun is required")
        object.__setattr__(self, "prompt_nouns", nouns)


def default_categories() -> tuple[CategorySpec, ...]:
    nouns = {s.require("name"): tuple(s.get_list("nouns")) for s in cfgfile.sections_named(cfgfile.load(_NOUNS_FILE), "category")}
    return tuple(CategorySpec(n, DEFAULT_ABSTRACTNESS[n], nouns[n]) for n in CATEGORY_NAMES)


def sample_seed(base_seed: int, category: str, index: int) -> int:
    """Stable 64-bit seed for one sample."""
    key = f"{base_seed}/{category}/{index}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _texture_seed(style: str, k: int) -> int:
    return int.from_bytes(hashlib.blake2b(f"{style}/{k}".encode(), digest_size=8).digest(), "little")


def distractor_texture(style: str, k: int, face: np.ndarray, crop, blur_std: float = 1.5) -> np.ndarray:
    """Zero-mean, unit-std band-pass texture for component ``k`` of ``style``."""
    h, w = face.shape
    rng = np.random.default_rng(_texture_seed(style, k))
    ky, kx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    radius = np.hypot(ky, kx)
    lo, hi = DISTRACTOR_BAND
    z = idctn(rng.standard_normal((h, w)) * ((radius >= lo) & (radius <= hi)), norm="ortho")
    z = (z - z.mean()) / z.std()
    # remove the part whose blur correlates with the blurred face on the oval
    r0, r1, c0, c1 = crop
    bf = gaussian_blur(face, blur_std)[r0:r1, c0:c1]
    bz = gaussian_blur(z, blur_std)[r0:r1, c0:c1]
    bf = bf - bf.mean()
    beta = float(np.sum((bz - bz.mean()) * bf) / np.sum(bf * bf))
    z = z - beta * face
    return (z - z.mean()) / z.std()


def style_data_model(style: str, abstractness: float, face: np.ndarray, crop,
                     contrasts: Sequence[float] = DISTRACTOR_CONTRASTS, pixel_std: float = PIXEL_STD) -> GaussianMixture:
    """Mixture whose means are ``(1 - d) * face + d * distractor_k``; textures are seeded by ``style``."""
    if not 0.0 <= abstractness <= 1.0:
        raise ContractViolation("abstractness must lie in [0, 1]")
    d = abstractness
    means = []
    for k, c in enumerate(contrasts):
        distractor = DISTRACTOR_LEVEL + c * distractor_texture(style, k, face, crop)
        means.append((1.0 - d) * face + d * distractor)
    return GaussianMixture.uniform(np.array(means), pixel_std)


def category_data_model(spec: CategorySpec, face: np.ndarray, crop, contrasts: Sequence[float] = DISTRACTOR_CONTRASTS,
                        pixel_std: float = PIXEL_STD) -> GaussianMixture:
    return style_data_model(spec.name, spec.abstractness, face, crop, contrasts, pixel_std)


@dataclass(frozen=True)
class CategoryPlan:
    spec: CategorySpec
    prompts: tuple[str, ...]
    seeds: tuple[int, ...]
    data_model: GaussianMixture


@dataclass(frozen=True)
class EvalSuite:
    plans: tuple[CategoryPlan, ...]
    samples_per_category: int
    base_seed: int
    variants: tuple[tuple[str, GuidanceConfig], ...]
    num_steps: int = 50
    image_size: int = 32

    def __post_init__(self):
        if self.samples_per_category < 1:
            raise ContractViolation("samples_per_category must be >= 1")
        labels = [label for label, _ in self.variants]
        if not labels:
            raise ContractViolation("suite needs at least one variant")
        if len(set(labels)) != len(labels):
            raise ContractViolation("variant labels must be unique")
        names = [p.spec.name for p in self.plans]
        if sorted(names) != sorted(CATEGORY_NAMES):
            raise ContractViolation("suite must cover each of the eight categories exactly once")

    @property
    def categories(self) -> tuple[CategorySpec, ...]:
        return tuple(p.spec for p in self.plans)

    def plan(self, name: str) -> CategoryPlan:
        for p in self.plans:
            if p.spec.name == name:
                return p
        raise ValidationError(f"unknown category {name!r}")


@dataclass
class SuiteConfig:
    samples_per_category: int = 50
    base_seed: int = 0
    variants: list[tuple[str, GuidanceConfig]] = field(
        default_factory=lambda: [("neutral", GuidanceConfig.neutral()), ("guided", GuidanceConfig())]
    )
    categories: list[CategorySpec] = field(default_factory=lambda: list(default_categories()))
    num_steps: int = 50
    image_size: int = 32
    contrasts: tuple[float, ...] = DISTRACTOR_CONTRASTS
    landmark_id: str = "auto"

    @classmethod
    def from_sections(cls, sections: list[cfgfile.Section]) -> "SuiteConfig":
        """Build from parsed config sections.

        ``[suite]`` holds samples, seed, steps, size and an optional
        ``sweep = 0, 0.5, 1`` grid; each ``[variant]`` block has a label and
        guidance keys; each ``[category]`` block overrides a category's
        ``d`` and/or ``nouns``.  Unknown keys are rejected.
        """
        cfg = cls()
        known = {"suite", "variant", "category"}
        for sec in sections:
            if sec.name not in known:
                raise ValidationError(f"unexpected section [{sec.name}] in suite config")
        explicit: list[tuple[str, GuidanceConfig]] = []
        for sec in cfgfile.sections_named(sections, "suite"):
            _reject_unknown(sec, {"samples", "seed", "steps", "size", "sweep", "landmark_id"})
            if "samples" in sec.values:
                cfg.samples_per_category = _int(sec, "samples")
            if "seed" in sec.values:
                cfg.base_seed = _int(sec, "seed")
            if "steps" in sec.values:
                cfg.num_steps = _int(sec, "steps")
            if "size" in sec.values:
                cfg.image_size = _int(sec, "size")
            if "landmark_id" in sec.values:
                cfg.landmark_id = sec.require("landmark_id")
            if "sweep" in sec.values:
                try:
                    explicit.extend(sweep_variants([float(v) for v in sec.get_list("sweep")]))
                except ValueError:
                    raise ValidationError(f"[suite] sweep = {sec.get('sweep')!r} is not a list of numbers") from None
        for sec in cfgfile.sections_named(sections, "variant"):
            _reject_unknown(sec, {"label", "injection_weight", "window_fraction", "structural_weight", "blur_std"})
            base = GuidanceConfig()
            try:
                g = GuidanceConfig(
                    injection_weight=sec.get_float("injection_weight", base.injection_weight),
                    window_fraction=sec.get_float("window_fraction", base.window_fraction),
                    structural_weight=sec.get_float("structural_weight", base.structural_weight),
                    blur_std=sec.get_float("blur_std", base.blur_std),
                )
            except ContractViolation as exc:
                raise ValidationError(f"[variant] {sec.get('label')}: {exc}") from None
            explicit.append((sec.require("label"), g))
        if explicit:
            cfg.variants = explicit
        by_name = {c.name: c for c in cfg.categories}
        for sec in cfgfile.sections_named(sections, "category"):
            _reject_unknown(sec, {"name", "d", "nouns"})
            name = sec.require("name")
            if name not in by_name:
                raise ValidationError(f"unknown category {name!r}; expected one of {', '.join(CATEGORY_NAMES)}")
            old = by_name[name]
            nouns = tuple(sec.get_list("nouns")) if "nouns" in sec.values else old.prompt_nouns
            by_name[name] = CategorySpec(name, sec.get_float("d", old.abstractness), nouns)
        cfg.categories = [by_name[n] for n in CATEGORY_NAMES]
        return cfg

    @classmethod
    def load(cls, path) -> "SuiteConfig":
        return cls.from_sections(cfgfile.load(path))


def _reject_unknown(sec: cfgfile.Section, allowed: set[str]) -> None:
    extra = sorted(set(sec.values) - allowed)
    if extra:
        raise ValidationError(f"[{sec.name}] has unknown keys: {', '.join(extra)}")


def _int(sec: cfgfile.Section, key: str) -> int:
    raw = sec.require(key)
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"[{sec.name}] {key} = {raw!r} is not an integer") from None


def sweep_variants(weights: Iterable[float] = SWEEP_WEIGHTS, window_fraction: float = 0.4,
                   structural_weight: float = 1.0) -> list[tuple[str, GuidanceConfig]]:
    """Variants varying only the injection weight."""
    return [(f"lambda={w:g}", GuidanceConfig(w, window_fraction, structural_weight)) for w in weights]


def build_suite(config: SuiteConfig | None = None, memory: LandmarkMemory | None = None) -> EvalSuite:
    config = config or SuiteConfig()
    memory = memory or default_memory(config.image_size, config.image_size)
    tpl = memory.get(config.landmark_id)
    face = tpl.raster
    crop = oval_bbox(tpl.keypoints, face.shape[1], face.shape[0])
    names = [c.name for c in config.categories]
    for n in names:
        if n not in CATEGORY_NAMES:
            raise ValidationError(f"unknown category {n!r}")
    if sorted(names) != sorted(CATEGORY_NAMES):
        raise ValidationError("suite config must list each of the eight categories once")
    n = config.samples_per_category
    plans = []
    for spec in config.categories:
        prompts = tuple(PROMPT_FORMAT.format(spec.prompt_nouns[i % len(spec.prompt_nouns)]) for i in range(n))
        seeds = tuple(sample_seed(config.base_seed, spec.name, i) for i in range(n))
        plans.append(CategoryPlan(spec, prompts, seeds, category_data_model(spec, face, crop, config.contrasts)))
    return EvalSuite(tuple(plans), n, config.base_seed, tuple(config.variants), config.num_steps, config.image_size)


@dataclass(frozen=True)
class ReportRow:
    category: str
    variant: str
    n: int
    detected: int

    def __post_init__(self):
        if not 0 <= self.detected <= self.n or self.n < 1:
            raise ContractViolation("report rows need 0 <= detected <= n and n >= 1")

    @property
    def rate(self) -> float:
        return self.detected / self.n


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ReportRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        keys = [(r.category, r.variant) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ContractViolation("duplicate (category, variant) rows")

    @property
    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.rows))

    @property
    def categories(self) -> list[str]:
        present = {r.category for r in self.rows}
        return [c for c in CATEGORY_NAMES if c in present] + sorted(present - set(CATEGORY_NAMES))

    def row(self, category: str, variant: str) -> ReportRow:
        for r in self.rows:
            if r.category == category and r.variant == variant:
                return r
        raise KeyError((category, variant))

    def rate(self, category: str, variant: str) -> float:
        return self.row(category, variant).rate

    def average(self, variant: str) -> float:
        """Unweighted mean of per-category rates."""
        rates = [r.rate for r in self.rows if r.variant == variant]
        if not rates:
            raise KeyError(variant)
        return float(sum(rates) / len(rates))

    @property
    def averages(self) -> dict[str, float]:
        return {v: self.average(v) for v in self.variants}


def _run_chunk(args) -> list[tuple[str, int, str, bool, float]]:
    plan, variants, indices, num_steps, portraits_dir, detector_bank, detector_cfg, memory, landmark_id = args
    sched = NoiseSchedule.cosine(num_steps)
    detector = Detector(detector_bank, detector_cfg)
    denoiser = PosteriorMeanDenoiser(plan.data_model, sched)
    out = []
    for label, cfg in variants:
        hook = make_hook(cfg if landmark_id == "auto" else _with_landmark(cfg, landmark_id), memory, sched)
        for i in indices:
            x = sample(denoiser, sched, plan.seeds[i], hook)
            det = detector.detect(x)
            out.append((plan.spec.name, i, label, det.found, det.confidence))
            if portraits_dir is not None:
                write_pgm(Path(portraits_dir) / f"{plan.spec.name}_{_slug(label)}_{i:03d}.pgm", x)
    return out


def _with_landmark(cfg: GuidanceConfig, landmark_id: str) -> GuidanceConfig:
    from dataclasses import replace

    return cfg if cfg.landmark_id != "auto" else replace(cfg, landmark_id=landmark_id)


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-." else "_" for ch in label)


def default_jobs() -> int:
    return os.cpu_count() or 1


def run_eval(suite: EvalSuite, bank=None, detector_cfg: DetectorConfig | None = None, *, jobs: int = 1,
             memory: LandmarkMemory | None = None, portraits_dir=None, landmark_id: str = "auto",
             chunk_size: int = 25) -> EvalReport:
    """Sample, detect and count every (category, sample, variant).

    Work is split into chunks of sample indices; results are keyed by
    ``(category, index, variant)`` so the report does not depend on ``jobs``.
    """
    memory = memory or default_memory(suite.image_size, suite.image_size)
    bank = bank if bank is not None else memory
    detector_cfg = detector_cfg or DetectorConfig()
    if portraits_dir is not None:
        Path(portraits_dir).mkdir(parents=True, exist_ok=True)
    tasks = []
    n = suite.samples_per_category
    for plan in suite.plans:
        for start in range(0, n, chunk_size):
            idx = tuple(range(start, min(n, start + chunk_size)))
            tasks.append((plan, suite.variants, idx, suite.num_steps, portraits_dir, bank, detector_cfg,
                          memory, landmark_id))
    if jobs <= 1:
        results = [r for t in tasks for r in _run_chunk(t)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for chunk in pool.map(_run_chunk, tasks) for r in chunk]
    found = {(c, i, v): f for c, i, v, f, _ in results}
    rows = []
    for plan in suite.plans:
        for label, _ in suite.variants:
            hits = sum(found[(plan.spec.name, i, label)] for i in range(n))
            rows.append(ReportRow(plan.spec.name, label, n, int(hits)))
    return EvalReport(tuple(rows))


CSV_HEADER = ("category", "variant", "n", "detected", "rate")


def _pct(rate: float) -> str:
    return f"{100.0 * rate:.1f}"


def emit_report(report: EvalReport, format: str = "markdown") -> str:
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in report.rows:
            w.writerow((r.category, r.variant, r.n, r.detected, _pct(r.rate)))
        return buf.getvalue()
    if format == "markdown":
        cats = report.categories
        lines = ["| Categories | " + " | ".join(cats) + " | Avg. |",
                 "|" + "---|" * (len(cats) + 2)]
        first = report.variants[0]
        counts = [str(report.row(c, first).n) for c in cats]
        mean_n = sum(report.row(c, first).n for c in cats) / len(cats)
        lines.append("| #Samples | " + " | ".join(counts) + f" | {mean_n:g} |")
        for v in report.variants:
            cells = [_pct(report.rate(c, v)) for c in cats]
            lines.append(f"| {v} | " + " | ".join(cells) + f" | {_pct(report.average(v))} |")
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown report format {format!r}; use csv or markdown")


def parse_report_csv(text: str) -> EvalReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValidationError(f"report CSV header must be {','.join(CSV_HEADER)}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        if len(rec) != 5:
            raise ValidationError(f"malformed report row {rec!r}")
        try:
            row = ReportRow(rec[0], rec[1], int(rec[2]), int(rec[3]))
        except (ValueError, ContractViolation) as exc:
            raise ValidationError(f"malformed report row {rec!r}: {exc}") from None
        if rec[4] != _pct(row.rate):
            raise ValidationError(f"rate column {rec[4]!r} disagrees with {row.detected}/{row.n}")
        rows.append(row)
    return EvalReport(tuple(rows))
