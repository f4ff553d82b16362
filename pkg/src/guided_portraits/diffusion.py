"""Gaussian diffusion on small single-channel rasters.

Conventions
-----------
A latent image is a float64 ``numpy`` array of shape ``(H, W)``; operations
also accept a leading batch axis ``(N, H, W)`` where noted.  Step ``t = 0``
is clean data and ``t = T`` is (almost) pure noise.  The forward marginal is
``q(x_t | x_0) = N(alpha[t] x_0, sigma[t]^2 I)``.

The denoiser is the exact posterior mean of a Gaussian-mixture data model, so
every quantity produced by the sampler can be checked against an
independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ContractViolation, NumericDomainError, StepRangeError

Denoiser = Callable[[np.ndarray, int], np.ndarray]

MIN_SIDE = 4
DEFAULT_STEPS = 50
DEFAULT_SIZE = (32, 32)


def as_latent(values, *, batched: bool = False, min_side: int = MIN_SIDE) -> np.ndarray:
    """Validate and return ``values`` as a float64 latent image (or batch).

    The mixture algebra itself works for any size, so the denoiser passes
    ``min_side=1``; tiny images are what makes quadrature oracles feasible.
    """
    arr = np.asarray(values, dtype=np.float64)
    ndim = arr.ndim - (1 if batched and arr.ndim == 3 else 0)
    if ndim != 2:
        raise ContractViolation(f"latent image must be 2-D, got shape {arr.shape}")
    if arr.shape[-1] < min_side or arr.shape[-2] < min_side:
        raise ContractViolation(f"latent image sides must be >= {min_side}, got {arr.shape[-2:]}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("latent image contains non-finite values")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving ``(alpha, sigma)`` sequences indexed ``0..T``."""

    alpha: np.ndarray
    sigma: np.ndarray
    kind: str = "variance_preserving"

    def __post_init__(self):
        alpha = _frozen(self.alpha)
        sigma = _frozen(self.sigma)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)
        if alpha.ndim != 1 or alpha.shape != sigma.shape or alpha.size < 2:
            raise ContractViolation("alpha and sigma must be 1-D sequences of equal length >= 2")
        if self.kind != "variance_preserving":
            raise ContractViolation(f"unsupported schedule kind {self.kind!r}")
        if alpha[0] != 1.0 or sigma[0] != 0.0:
            raise ContractViolation("schedule must start at alpha=1, sigma=0")
        if np.any(np.diff(alpha) >= 0) or np.any(np.diff(sigma) <= 0):
            raise ContractViolation("alpha must strictly decrease and sigma strictly increase")
        if np.any(alpha <= 0) or np.any(alpha > 1) or np.any(sigma < 0) or np.any(sigma >= 1):
            raise ContractViolation("alpha must lie in (0, 1] and sigma in [0, 1)")
        if np.max(np.abs(alpha**2 + sigma**2 - 1.0)) > 1e-12:
            raise ContractViolation("variance-preserving identity alpha^2 + sigma^2 = 1 violated")
        if alpha[-1] > 0.05:
            raise ContractViolation(f"terminal alpha {alpha[-1]:.4f} exceeds 0.05")

    @property
    def num_steps(self) -> int:
        return self.alpha.size - 1

    def check_step(self, t: int, *, low: int = 0) -> int:
        if isinstance(t, bool) or int(t) != t:
            raise StepRangeError(f"step must be an integer, got {t!r}")
        t = int(t)
        if not low <= t <= self.num_steps:
            raise StepRangeError(f"step {t} outside [{low}, {self.num_steps}]")
        return t

    @classmethod
    def cosine(cls, num_steps: int = DEFAULT_STEPS, max_angle_fraction: float = 0.98) -> "NoiseSchedule":
        """``alpha[t] = cos((t/T) * (pi/2) * max_angle_fraction)``, ``sigma`` from the VP identity."""
        if num_steps < 1:
            raise ContractViolation("num_steps must be positive")
        angles = np.arange(num_steps + 1) / num_steps * (math.pi / 2) * max_angle_fraction
        # cos/sin of the same angle keeps alpha^2 + sigma^2 = 1 to rounding.
        alpha = np.cos(angles)
        sigma = np.sin(angles)
        alpha[0], sigma[0] = 1.0, 0.0
        return cls(alpha, sigma)


def q_sample(x0: np.ndarray, t: int, sched: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Draw ``x_t = alpha[t] x0 + sigma[t] noise`` (batch axis allowed)."""
    x0 = as_latent(x0, batched=True)
    noise = as_latent(noise, batched=True)
    _check_same_shape(x0, noise, "q_sample")
    t = sched.check_step(t)
    return sched.alpha[t] * x0 + sched.sigma[t] * noise


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians over images.

    Component ``k`` has weight ``weights[k]``, mean image ``means[k]`` and
    per-pixel standard deviation ``stds[k]``.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        weights = _frozen(np.atleast_1d(self.weights))
        means = _frozen(self.means)
        stds = _frozen(np.atleast_1d(self.stds))
        if means.ndim == 2:
            means = _frozen(means[None])
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        k = weights.size
        if means.ndim != 3 or means.shape[0] != k or stds.shape != (k,):
            raise ContractViolation("weights, means and stds must describe the same number of components")
        as_latent(means[0], min_side=1)
        if np.any(weights <= 0) or np.any(weights > 1) or abs(weights.sum() - 1.0) > 1e-12:
            raise ContractViolation("weights must be in (0, 1] and sum to 1")
        if np.any(stds <= 0) or not np.all(np.isfinite(means)):
            raise ContractViolation("component stds must be positive and means finite")

    @classmethod
    def single(cls, mean, std: float) -> "GaussianMixture":
        return cls(np.ones(1), np.asarray(mean)[None], np.array([std]))

    @classmethod
    def uniform(cls, means, std: float) -> "GaussianMixture":
        means = np.asarray(means, dtype=np.float64)
        k = means.shape[0]
        return cls(np.full(k, 1.0 / k), means, np.full(k, std))

    @property
    def shape(self) -> tuple[int, int]:
        return self.means.shape[1:]


def _component_variances(t: int, gm: GaussianMixture, sched: NoiseSchedule) -> np.ndarray:
    a, s = sched.alpha[t], sched.sigma[t]
    var = a * a * gm.stds**2 + s * s
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise NumericDomainError(f"degenerate marginal variance at step {t}")
    return var


def normalize_log_weights(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, computed with log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / np.sum(w, axis=-1, keepdims=True)


def responsibilities(xt: np.ndarray, t: int, gm: GaussianMixture, sched: NoiseSchedule) -> np.ndarray:
    """Posterior component probabilities given the whole image ``xt``.

    Returns shape ``(K,)`` for one image or ``(N, K)`` for a batch.
    """
    a = sched.alpha[t]
    var = _component_variances(t, gm, sched)
    n_pix = gm.means.shape[1] * gm.means.shape[2]
    diff = xt[..., None, :, :] - a * gm.means
    sq = np.sum(diff * diff, axis=(-2, -1))
    logits = np.log(gm.weights) - 0.5 * sq / var - 0.5 * n_pix * np.log(2 * math.pi * var)
    return normalize_log_weights(logits)


def posterior_mean_denoise(xt: np.ndarray, t: int, gm: GaussianMixture, sched: NoiseSchedule) -> np.ndarray:
    """Exact ``E[x0 | x_t]`` under the mixture prior (batch axis allowed)."""
    xt = as_latent(xt, batched=True, min_side=1)
    if xt.shape[-2:] != gm.shape:
        raise ContractViolation(f"image shape {xt.shape[-2:]} does not match data model {gm.shape}")
    t = sched.check_step(t, low=1)
    a = sched.alpha[t]
    var = _component_variances(t, gm, sched)
    r = responsibilities(xt, t, gm, sched)
    gain = (a * gm.stds**2 / var)[:, None, None]
    cond = gm.means + gain * (xt[..., None, :, :] - a * gm.means)
    return np.einsum("...k,...khw->...hw", r, cond)


@dataclass(frozen=True)
class PosteriorMeanDenoiser:
    """Closed-form denoiser bound to a data model and schedule."""

    gm: GaussianMixture
    sched: NoiseSchedule

    @property
    def shape(self) -> tuple[int, int]:
        return self.gm.shape

    def __call__(self, xt: np.ndarray, t: int) -> np.ndarray:
        return posterior_mean_denoise(xt, t, self.gm, self.sched)


def ancestral_std(t: int, sched: NoiseSchedule) -> float:
    """Standard deviation of ``q(x_{t-1} | x_t, x_0)``, the DDPM posterior."""
    a_t, a_p = sched.alpha[t], sched.alpha[t - 1]
    s_t, s_p = sched.sigma[t], sched.sigma[t - 1]
    a_ratio = a_t / a_p
    trans_var = s_t * s_t - a_ratio * a_ratio * s_p * s_p
    return math.sqrt(max(trans_var, 0.0) * s_p * s_p / (s_t * s_t))


def reverse_step(
    xt: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    mode: str = "deterministic",
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One reverse update ``x_t -> x_{t-1}`` given a clean-image estimate.

    ``deterministic`` is the eta=0 DDIM update.  ``ancestral`` keeps the same
    predicted-noise direction but splits ``sigma[t-1]^2`` into the DDPM
    posterior variance (added as fresh noise) and the remainder (carried by
    the predicted noise), which reproduces ``q(x_{t-1} | x_t, x0_hat)``.
    """
    _check_same_shape(xt, x0_hat, "reverse_step")
    t = sched.check_step(t, low=1)
    s_t = sched.sigma[t]
    if s_t <= 0:
        raise StepRangeError(f"sigma[{t}] must be positive")
    a_p, s_p = sched.alpha[t - 1], sched.sigma[t - 1]
    eps_hat = (xt - sched.alpha[t] * x0_hat) / s_t
    if mode == "deterministic":
        return a_p * x0_hat + s_p * eps_hat
    if mode == "ancestral":
        if noise is None:
            raise ContractViolation("ancestral mode needs a noise image")
        _check_same_shape(xt, noise, "reverse_step noise")
        c = ancestral_std(t, sched)
        return a_p * x0_hat + math.sqrt(max(s_p * s_p - c * c, 0.0)) * eps_hat + c * noise
    raise ContractViolation(f"unknown reverse mode {mode!r}")


class GuidanceHook(Protocol):
    """Per-trajectory control: starting state and a clean-estimate transform."""

    shape: tuple[int, int]

    def initial(self, noise: np.ndarray) -> np.ndarray: ...

    def transform(self, x0_hat: np.ndarray, t: int) -> np.ndarray: ...


def _seed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) % 2**64)


def _resolve_shape(denoiser, shape) -> tuple[int, int]:
    if shape is None:
        shape = getattr(denoiser, "shape", None)
    if shape is None:
        raise ContractViolation("image shape is required for a denoiser without a .shape attribute")
    return tuple(int(v) for v in shape)


def sample(
    denoiser: Denoiser,
    sched: NoiseSchedule,
    seed: int,
    hook: GuidanceHook | None = None,
    *,
    mode: str = "deterministic",
    shape: Sequence[int] | None = None,
    trajectory: list | None = None,
) -> np.ndarray:
    """Run the reverse chain from ``t = T`` to ``0`` and return ``x_0``.

    The starting noise and any ancestral noise come from one generator seeded
    with ``seed``.  If ``trajectory`` is a list, every ``x_t`` is appended.
    """
    shape = _resolve_shape(denoiser, shape)
    if hook is not None and tuple(hook.shape) != shape:
        raise ContractViolation(f"hook raster shape {tuple(hook.shape)} does not match image shape {shape}")
    rng = _seed_rng(seed)
    noise = rng.standard_normal(shape)
    x = hook.initial(noise) if hook is not None else sched.sigma[-1] * noise
    if trajectory is not None:
        trajectory.append(x)
    for t in range(sched.num_steps, 0, -1):
        x0_hat = denoiser(x, t)
        if hook is not None:
            x0_hat = hook.transform(x0_hat, t)
        step_noise = rng.standard_normal(shape) if mode == "ancestral" else None
        x = reverse_step(x, x0_hat, t, sched, mode, step_noise)
        if trajectory is not None:
            trajectory.append(x)
    return x


def sample_many(
    denoiser: Denoiser,
    sched: NoiseSchedule,
    seeds: Sequence[int],
    hook: GuidanceHook | None = None,
    *,
    mode: str = "deterministic",
    shape: Sequence[int] | None = None,
) -> np.ndarray:
    """Vectorized :func:`sample` over seeds; returns shape ``(N, H, W)``.

    Each seed owns its generator, so the noise matches the per-seed path.
    The result agrees with looping :func:`sample` to floating-point rounding
    (pixel sums may associate differently), not bit for bit.
    """
    shape = _resolve_shape(denoiser, shape)
    if hook is not None and tuple(hook.shape) != shape:
        raise ContractViolation(f"hook raster shape {tuple(hook.shape)} does not match image shape {shape}")
    rngs = [_seed_rng(s) for s in seeds]
    noise = np.stack([r.standard_normal(shape) for r in rngs])
    x = hook.initial(noise) if hook is not None else sched.sigma[-1] * noise
    for t in range(sched.num_steps, 0, -1):
        x0_hat = denoiser(x, t)
        if hook is not None:
            x0_hat = hook.transform(x0_hat, t)
        step_noise = np.stack([r.standard_normal(shape) for r in rngs]) if mode == "ancestral" else None
        x = reverse_step(x, x0_hat, t, sched, mode, step_noise)
    return x
