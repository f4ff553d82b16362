"""Landmark-guided portrait generation with closed-form diffusion denoisers.

Submodules:

- ``diffusion``: noise schedules, Gaussian-mixture denoisers, samplers
- ``guidance``: landmark memory, injection and structural control hooks
- ``face``: landmark rasterization and the template detector
- ``router``: expert registries and description-driven selection
- ``persona``: personality prompt, voice stub, persona initialization
- ``evaluation``: detection-rate benchmark and reports
- ``cli``: command-line entry point
"""

from .diffusion import GaussianMixture, NoiseSchedule, PosteriorMeanDenoiser, posterior_mean_denoise, q_sample, sample
from .errors import (
    ContractViolation,
    GuidedPortraitsError,
    InitializationError,
    NumericDomainError,
    StepRangeError,
    UnknownEntryError,
    ValidationError,
)
from .face import Detection, DetectorConfig, LandmarkSet, detect, rasterize
from .guidance import GuidanceConfig, LandmarkMemory, LandmarkTemplate, default_memory, make_hook

__version__ = "0.1.0"
