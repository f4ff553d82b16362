"""Synthetic faces: 5-point landmark rendering and template-matching detection.

The detector is a fixed, seedable stand-in for a learned face keypoint
detector.  An image counts as "detectable" when its blurred version
correlates with some blurred bank template at or above a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ContractViolation

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")

OVAL_LEVEL = 0.35
OVAL_X_FACTOR = 0.9
OVAL_Y_FACTOR = 1.1
BLOB_STD = 1.0
MIN_RASTER_SIDE = 16


@dataclass(frozen=True)
class LandmarkSet:
    """Five keypoints in normalized ``(x, y)`` coordinates, y pointing down."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (5, 2):
            raise ContractViolation(f"expected 5 (x, y) keypoints, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)) or np.any(pts < 0) or np.any(pts > 1):
            raise ContractViolation("keypoint coordinates must lie in [0, 1]")
        le, re, nose, ml, mr = pts
        if np.allclose(le, re):
            raise ContractViolation("eyes coincide")
        if not le[0] < re[0]:
            raise ContractViolation("left eye must be left of right eye")
        if not (max(le[1], re[1]) < nose[1] < min(ml[1], mr[1])):
            raise ContractViolation("keypoints must run eyes, nose, mouth from top to bottom")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "LandmarkSet":
        missing = [n for n in LANDMARK_NAMES if n not in mapping]
        if missing:
            raise ContractViolation(f"missing keypoints: {', '.join(missing)}")
        return cls(np.array([mapping[n] for n in LANDMARK_NAMES], dtype=np.float64))

    def as_mapping(self) -> dict:
        return {n: (float(x), float(y)) for n, (x, y) in zip(LANDMARK_NAMES, self.points)}

    def oval_center(self) -> np.ndarray:
        lo, hi = self.points.min(axis=0), self.points.max(axis=0)
        return (lo + hi) / 2

    def scaled(self, factor: float) -> "LandmarkSet":
        c = self.oval_center()
        return LandmarkSet(np.clip(c + factor * (self.points - c), 0.0, 1.0))

    def shifted(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(np.clip(self.points + np.array([dx, dy]), 0.0, 1.0))


CANONICAL_LANDMARKS = LandmarkSet(
    np.array(
        [
            [0.34, 0.38],
            [0.66, 0.38],
            [0.50, 0.54],
            [0.37, 0.68],
            [0.63, 0.68],
        ]
    )
)


def _pixel_geometry(lm: LandmarkSet, width: int, height: int):
    # pixel (i, j) has its center at ((j + 0.5) / W, (i + 0.5) / H)
    px = lm.points[:, 0] * width - 0.5
    py = lm.points[:, 1] * height - 0.5
    cx = (px.min() + px.max()) / 2
    cy = (py.min() + py.max()) / 2
    ax = OVAL_X_FACTOR * (px.max() - px.min())
    ay = OVAL_Y_FACTOR * (py.max() - py.min())
    return px, py, cx, cy, ax, ay


def oval_bbox(lm: LandmarkSet, width: int, height: int) -> tuple[int, int, int, int]:
    """Pixel bounds ``(row0, row1, col0, col1)`` (half-open) of the face oval."""
    _, _, cx, cy, ax, ay = _pixel_geometry(lm, width, height)
    r0 = max(int(math.floor(cy - ay - 1)), 0)
    r1 = min(int(math.ceil(cy + ay + 1)) + 1, height)
    c0 = max(int(math.floor(cx - ax - 1)), 0)
    c1 = min(int(math.ceil(cx + ax + 1)) + 1, width)
    return r0, r1, c0, c1


def rasterize(lm: LandmarkSet, width: int = 32, height: int = 32) -> np.ndarray:
    """Render a face: anti-aliased oval plus a unit Gaussian blob per keypoint.

    Values lie in ``[0, 1]`` and everything outside the oval's bounding box
    is exactly zero.
    """
    if width < MIN_RASTER_SIDE or height < MIN_RASTER_SIDE:
        raise ContractViolation(f"raster sides must be >= {MIN_RASTER_SIDE}")
    if not isinstance(lm, LandmarkSet):
        lm = LandmarkSet(lm)
    px, py, cx, cy, ax, ay = _pixel_geometry(lm, width, height)
    if ax <= 0 or ay <= 0:
        raise ContractViolation("degenerate landmark layout")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ux, uy = (xx - cx) / ax, (yy - cy) / ay
    rho = np.hypot(ux, uy)
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = np.hypot(ux / ax, uy / ay) / rho
        dist = (rho - 1.0) / grad
    coverage = np.where(rho < 0.5, 1.0, np.clip(0.5 - dist, 0.0, 1.0))
    blobs = np.zeros((height, width))
    for x, y in zip(px, py):
        blobs += np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * BLOB_STD**2))
    img = np.clip(np.maximum(OVAL_LEVEL * coverage, blobs), 0.0, 1.0)
    r0, r1, c0, c1 = oval_bbox(lm, width, height)
    mask = np.zeros_like(img, dtype=bool)
    mask[r0:r1, c0:c1] = True
    return np.where(mask, img, 0.0)


def canonical_face_raster(width: int = 32, height: int = 32) -> np.ndarray:
    return rasterize(CANONICAL_LANDMARKS, width, height)


def gaussian_blur(img: np.ndarray, std: float) -> np.ndarray:
    """Symmetric Gaussian blur with reflect boundaries over the last two axes."""
    img = np.asarray(img, dtype=np.float64)
    return ndimage.gaussian_filter(img, std, mode="reflect", axes=(-2, -1))


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation of two equal-shape arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return 0.0
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float = 0.6
    search_radius: int = 4
    scales: tuple[float, ...] = (0.9, 1.0, 1.1)
    blur_std: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not 0 < self.threshold < 1:
            raise ContractViolation("detector threshold must lie in (0, 1)")
        if self.search_radius < 0 or int(self.search_radius) != self.search_radius:
            raise ContractViolation("search radius must be a non-negative integer")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ContractViolation("detector scales must be positive")
        if self.blur_std <= 0:
            raise ContractViolation("detector blur_std must be positive")


@dataclass(frozen=True)
class Detection:
    found: bool
    confidence: float
    landmarks: LandmarkSet | None = None
    template_id: str | None = None
    scale: float | None = None
    shift: tuple[int, int] | None = None  # (dx, dy) in pixels

    def csv_row(self) -> str:
        """``found,confidence,x1,y1,...,x5,y5``; coordinates empty when not found."""
        cells = ["1" if self.found else "0", f"{self.confidence:.9g}"]
        if self.found and self.landmarks is not None:
            cells += [f"{v:.9g}" for v in self.landmarks.points.ravel()]
        else:
            cells += [""] * 10
        return ",".join(cells)

    @classmethod
    def from_csv_row(cls, row: str) -> "Detection":
        cells = row.strip().split(",")
        if len(cells) != 12:
            raise ContractViolation(f"detection row needs 12 fields, got {len(cells)}")
        found = cells[0] == "1"
        lm = LandmarkSet(np.array([float(v) for v in cells[2:]]).reshape(5, 2)) if found else None
        return cls(found, float(cells[1]), lm)


DETECTION_CSV_HEADER = "found,confidence," + ",".join(f"x{i},y{i}" for i in range(1, 6))


@dataclass
class _Candidate:
    template_id: str
    keypoints: LandmarkSet
    scale: float
    bbox: tuple[int, int, int, int]
    patch: np.ndarray  # zero-mean, unit-norm blurred template crop


class Detector:
    """Template-bank NCC detector; precomputes template crops per image shape."""

    def __init__(self, bank, cfg: DetectorConfig | None = None):
        templates = list(getattr(bank, "templates", bank))
        if not templates:
            raise ContractViolation("detector bank is empty")
        self.templates = templates
        self.cfg = cfg or DetectorConfig()
        self._cache: dict[tuple[int, int], list[_Candidate]] = {}

    def _candidates(self, height: int, width: int) -> list[_Candidate]:
        key = (height, width)
        if key not in self._cache:
            margin = int(math.ceil(2 * self.cfg.blur_std))
            cands = []
            for tpl in self.templates:
                for scale in self.cfg.scales:
                    kp = tpl.keypoints.scaled(scale)
                    raster = gaussian_blur(rasterize(kp, width, height), self.cfg.blur_std)
                    r0, r1, c0, c1 = oval_bbox(kp, width, height)
                    r0, c0 = max(r0 - margin, 0), max(c0 - margin, 0)
                    r1, c1 = min(r1 + margin, height), min(c1 + margin, width)
                    patch = raster[r0:r1, c0:c1]
                    patch = patch - patch.mean()
                    patch = patch / np.linalg.norm(patch)
                    cands.append(_Candidate(tpl.id, kp, scale, (r0, r1, c0, c1), patch))
            self._cache[key] = cands
        return self._cache[key]

    def detect(self, img: np.ndarray) -> Detection:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 2:
            raise ContractViolation(f"detect expects a 2-D image, got shape {img.shape}")
        height, width = img.shape
        if height < MIN_RASTER_SIDE or width < MIN_RASTER_SIDE:
            raise ContractViolation("image smaller than the detector templates")
        cfg = self.cfg
        R = int(cfg.search_radius)
        blurred = np.pad(gaussian_blur(img, cfg.blur_std), R, mode="reflect")
        best = (-np.inf, None, 0, 0)
        for cand in self._candidates(height, width):
            r0, r1, c0, c1 = cand.bbox
            region = blurred[r0 : r1 + 2 * R, c0 : c1 + 2 * R]
            windows = sliding_window_view(region, cand.patch.shape)
            centered = windows - windows.mean(axis=(-2, -1), keepdims=True)
            num = np.einsum("ijhw,hw->ij", centered, cand.patch)
            norms = np.sqrt(np.einsum("ijhw,ijhw->ij", centered, centered))
            with np.errstate(invalid="ignore", divide="ignore"):
                scores = np.where(norms > 1e-12, num / norms, 0.0)
            # row-major argmax: ties resolve to the smallest (dy, dx)
            flat = int(np.argmax(scores))
            iy, ix = divmod(flat, scores.shape[1])
            score = float(scores[iy, ix])
            if score > best[0]:
                best = (score, cand, ix - R, iy - R)
        score, cand, dx, dy = best
        score = float(np.clip(score, -1.0, 1.0))
        if score >= cfg.threshold:
            lm = cand.keypoints.shifted(dx / width, dy / height)
            return Detection(True, score, lm, cand.template_id, cand.scale, (dx, dy))
        return Detection(False, score, None, cand.template_id, cand.scale, (dx, dy))


def detect(img: np.ndarray, bank, cfg: DetectorConfig | None = None) -> Detection:
    """One-off detection; build a :class:`Detector` to reuse template crops."""
    return Detector(bank, cfg).detect(img)


def detection_rate(images: Iterable[np.ndarray], bank, cfg: DetectorConfig | None = None) -> float:
    images = list(images)
    if not images:
        raise ContractViolation("detection_rate needs at least one image")
    detector = bank if isinstance(bank, Detector) else Detector(bank, cfg)
    return sum(detector.detect(img).found for img in images) / len(images)
