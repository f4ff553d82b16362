"""Landmark guidance for the reverse diffusion chain.

Two mechanisms are combined:

* hard injection: the starting noise carries a q-sampled copy of a landmark
  raster, and during the first (high-noise) fraction of steps the predicted
  clean image is blended towards that raster;
* structural control: at every step the predicted clean image takes one
  gradient step on ``||B(x) - B(raster)||^2`` where ``B`` is a Gaussian blur.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule, as_latent
from .errors import ContractViolation, UnknownEntryError
from .face import CANONICAL_LANDMARKS, LANDMARK_NAMES, LandmarkSet, gaussian_blur, rasterize

# Window membership tolerance; keeps t > T * (1 - f) exact for decimal f.
_WINDOW_EPS = 1e-9


@dataclass(frozen=True)
class LandmarkTemplate:
    id: str
    keypoints: LandmarkSet
    raster: np.ndarray
    tags: tuple[str, ...] = ()

    @classmethod
    def build(cls, id: str, keypoints, width: int = 32, height: int = 32, tags=()) -> "LandmarkTemplate":
        if not isinstance(keypoints, LandmarkSet):
            keypoints = LandmarkSet(keypoints)
        raster = rasterize(keypoints, width, height)
        raster.setflags(write=False)
        return cls(id, keypoints, raster, tuple(tags))


@dataclass(frozen=True)
class LandmarkMemory:
    """Ordered pool of landmark templates; the first one is the default."""

    templates: tuple[LandmarkTemplate, ...]

    def __post_init__(self):
        templates = tuple(self.templates)
        object.__setattr__(self, "templates", templates)
        if not templates:
            raise ContractViolation("landmark memory must hold at least one template")
        ids = [t.id for t in templates]
        if len(set(ids)) != len(ids):
            raise ContractViolation("landmark template ids must be unique")

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.templates]

    @property
    def shape(self) -> tuple[int, int]:
        return self.templates[0].raster.shape

    def get(self, landmark_id: str = "auto") -> LandmarkTemplate:
        if landmark_id == "auto":
            return self.templates[0]
        for tpl in self.templates:
            if tpl.id == landmark_id:
                return tpl
        raise UnknownEntryError(f"unknown landmark id {landmark_id!r}; available: {', '.join(self.ids)}")

    @classmethod
    def load(cls, directory, width: int = 32, height: int = 32) -> "LandmarkMemory":
        """Read every ``*.csv`` in ``directory`` (sorted by name) as a template.

        Each file lists ``name,x,y`` rows; a ``# tags: a, b`` comment line is
        optional.  Rasters are regenerated at ``width`` x ``height``.
        """
        directory = Path(directory)
        files = sorted(directory.glob("*.csv"))
        if not files:
            raise ContractViolation(f"no landmark templates in {directory}")
        return cls(tuple(read_template(f, width, height) for f in files))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for tpl in self.templates:
            write_template(tpl, directory / f"{tpl.id}.csv")


def read_template(path, width: int = 32, height: int = 32) -> LandmarkTemplate:
    path = Path(path)
    points, tags = {}, ()
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("tags:"):
                    tags = tuple(t.strip() for t in body[5:].split(",") if t.strip())
                continue
            name, x, y = next(csv.reader([line]))
            if name == "name":
                continue
            points[name.strip()] = (float(x), float(y))
    return LandmarkTemplate.build(path.stem, LandmarkSet.from_mapping(points), width, height, tags)


def write_template(tpl: LandmarkTemplate, path) -> None:
    lines = []
    if tpl.tags:
        lines.append("# tags: " + ", ".join(tpl.tags))
    lines.append("name,x,y")
    for name, (x, y) in zip(LANDMARK_NAMES, tpl.keypoints.points):
        lines.append(f"{name},{x:.9g},{y:.9g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_memory(width: int = 32, height: int = 32) -> LandmarkMemory:
    """Built-in pool: a canonical frontal layout and two proportion variants."""
    c = CANONICAL_LANDMARKS.points
    wide = c.copy()
    wide[[0, 3], 0] -= 0.02
    wide[[1, 4], 0] += 0.02
    long = c.copy()
    long[[3, 4], 1] += 0.04
    return LandmarkMemory(
        (
            LandmarkTemplate.build("canonical", c, width, height, ("frontal", "neutral")),
            LandmarkTemplate.build("wide", wide, width, height, ("frontal", "wide")),
            LandmarkTemplate.build("long", long, width, height, ("frontal", "long")),
        )
    )


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance strengths.

    ``injection_weight`` scales the landmark in the starting noise and inside
    the conditioning window; ``window_fraction`` is the fraction of early
    steps that are conditioned; ``structural_weight`` is the step size of the
    blurred-structure pull applied at every step.
    """

    injection_weight: float = 0.6
    window_fraction: float = 0.4
    structural_weight: float = 1.0
    blur_std: float = 1.5
    landmark_id: str = "auto"

    def __post_init__(self):
        if not 0.0 <= self.injection_weight <= 1.0:
            raise ContractViolation("injection_weight must lie in [0, 1]")
        if not 0.0 <= self.window_fraction <= 1.0:
            raise ContractViolation("window_fraction must lie in [0, 1]")
        if self.structural_weight < 0:
            raise ContractViolation("structural_weight must be non-negative")
        if self.blur_std <= 0:
            raise ContractViolation("blur_std must be positive")
        if not self.landmark_id:
            raise ContractViolation("landmark_id must be non-empty")

    @classmethod
    def neutral(cls) -> "GuidanceConfig":
        return cls(0.0, 0.0, 0.0)

    def escalated(self, d_injection: float = 0.2, d_structural: float = 0.5,
                  caps: tuple[float, float] = (1.0, 3.0)) -> "GuidanceConfig":
        # rounding keeps decimal steps decimal (0.1 + 0.2 -> 0.3)
        return replace(
            self,
            injection_weight=min(round(self.injection_weight + d_injection, 12), caps[0]),
            structural_weight=min(round(self.structural_weight + d_structural, 12), caps[1]),
        )


def _check_broadcast(x: np.ndarray, raster: np.ndarray, what: str) -> None:
    if x.shape[-2:] != raster.shape:
        raise ContractViolation(f"{what}: raster shape {raster.shape} does not match image shape {x.shape[-2:]}")


def inject_initial(raster: np.ndarray, sched: NoiseSchedule, weight: float, noise: np.ndarray) -> np.ndarray:
    """Starting state ``alpha[T] * weight * raster + sigma[T] * noise``."""
    raster = as_latent(raster)
    noise = np.asarray(noise, dtype=np.float64)
    _check_broadcast(noise, raster, "inject_initial")
    if not 0.0 <= weight <= 1.0:
        raise ContractViolation("injection weight must lie in [0, 1]")
    if weight == 0.0:
        return sched.sigma[-1] * noise
    return sched.alpha[-1] * (weight * raster) + sched.sigma[-1] * noise


def in_window(t: int, num_steps: int, window_fraction: float) -> bool:
    """True when ``t`` is one of the first ``window_fraction`` reverse steps."""
    return t - num_steps * (1.0 - window_fraction) > _WINDOW_EPS


def window_blend(x0_hat: np.ndarray, raster: np.ndarray, t: int, sched: NoiseSchedule,
                 cfg: GuidanceConfig) -> np.ndarray:
    """Blend the clean estimate towards ``raster`` inside the early window."""
    _check_broadcast(x0_hat, raster, "window_blend")
    t = sched.check_step(t, low=1)
    if cfg.window_fraction == 0.0 or not in_window(t, sched.num_steps, cfg.window_fraction):
        return x0_hat
    lam = cfg.injection_weight
    if lam == 1.0:
        return np.broadcast_to(raster, x0_hat.shape).copy()
    return (1.0 - lam) * x0_hat + lam * raster


def structural_residual(x0_hat: np.ndarray, raster: np.ndarray, weight: float, blur_std: float,
                        blurred_raster: np.ndarray | None = None) -> np.ndarray:
    """One gradient step of size ``weight`` on ``||B(x0_hat) - B(raster)||^2``.

    The blur is symmetric, so the gradient is ``2 B(B(x0_hat) - B(raster))``.
    Steps with ``weight <= 1 / ||B||^2 = 1`` never increase the objective.
    """
    if weight < 0:
        raise ContractViolation("structural weight must be non-negative")
    _check_broadcast(x0_hat, raster, "structural_residual")
    if weight == 0.0:
        return x0_hat
    if blurred_raster is None:
        blurred_raster = gaussian_blur(raster, blur_std)
    return x0_hat - 2.0 * weight * gaussian_blur(gaussian_blur(x0_hat, blur_std) - blurred_raster, blur_std)


def blurred_distance(x: np.ndarray, raster: np.ndarray, blur_std: float) -> float:
    d = gaussian_blur(x, blur_std) - gaussian_blur(raster, blur_std)
    return float(np.sum(d * d))


@dataclass(frozen=True)
class LandmarkHook:
    """Sampler hook: landmark-injected start, then blend and structural pull."""

    raster: np.ndarray
    sched: NoiseSchedule
    cfg: GuidanceConfig
    blurred_raster: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        raster = np.array(as_latent(self.raster))
        raster.setflags(write=False)
        object.__setattr__(self, "raster", raster)
        blurred = gaussian_blur(raster, self.cfg.blur_std)
        blurred.setflags(write=False)
        object.__setattr__(self, "blurred_raster", blurred)

    @property
    def shape(self) -> tuple[int, int]:
        return self.raster.shape

    def initial(self, noise: np.ndarray) -> np.ndarray:
        return inject_initial(self.raster, self.sched, self.cfg.injection_weight, noise)

    def transform(self, x0_hat: np.ndarray, t: int) -> np.ndarray:
        x = window_blend(x0_hat, self.raster, t, self.sched, self.cfg)
        return structural_residual(x, self.raster, self.cfg.structural_weight, self.cfg.blur_std,
                                   self.blurred_raster)


def make_hook(cfg: GuidanceConfig, memory: LandmarkMemory, sched: NoiseSchedule) -> LandmarkHook:
    tpl = memory.get(cfg.landmark_id)
    return LandmarkHook(tpl.raster, sched, cfg)
