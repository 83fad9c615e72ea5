"""Weibull onset-to-death delay kernel and its year-integrated weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class WeibullKernel:
    """Delay density gamma(tau) = (k/theta) (tau/theta)^(k-1) exp(-(tau/theta)^k)."""

    shape: float   # k, dimensionless
    scale: float   # theta, years

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValidationError(
                f"Weibull parameters must be positive, got shape={self.shape!r} scale={self.scale!r}"
            )

    def pdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0):
            raise ValidationError("delay tau must be nonnegative")
        z = tau / self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape / self.scale) * z ** (self.shape - 1.0) * np.exp(-z ** self.shape)
        # z**(k-1) is 0^negative at tau=0 when k<1 (density diverges); keep 0 for k>1
        if self.shape > 1.0:
            out = np.where(tau == 0.0, 0.0, out)
        return out if out.ndim else float(out)

    def cdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0):
            raise ValidationError("delay tau must be nonnegative")
        out = -np.expm1(-((tau / self.scale) ** self.shape))
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)


def year_weights(kernel: WeibullKernel, n_years: int) -> np.ndarray:
    """Probability of death in the i-th year after onset, i = 1..n_years.

    Exact CDF differences; not renormalized over the horizon, because mass
    beyond it is genuinely censored by the observation window.
    """
    if n_years < 1:
        raise ValidationError("n_years must be at least 1")
    edges = np.arange(n_years + 1, dtype=float)
    return np.diff(kernel.cdf(edges))


@dataclass(frozen=True)
class KernelSamplerConfig:
    """Normal sampling of (scale, shape); dispersion says whether the second
    normal parameter is a standard deviation (default) or a variance."""

    scale_mean: float = 6.3841
    scale_std: float = 0.411
    shape_mean: float = 1.4769
    shape_std: float = 0.0068
    horizon_years: int = 30
    dispersion: str = "std"

    def __post_init__(self):
        if self.scale_std < 0 or self.shape_std < 0:
            raise ValidationError("kernel sampler dispersions must be nonnegative")
        if self.dispersion not in ("std", "variance"):
            raise ValidationError(f"dispersion must be 'std' or 'variance', got {self.dispersion!r}")
        if self.horizon_years < 1:
            raise ValidationError("horizon_years must be at least 1")

    @property
    def scale_sd(self) -> float:
        return self.scale_std if self.dispersion == "std" else math.sqrt(self.scale_std)

    @property
    def shape_sd(self) -> float:
        return self.shape_std if self.dispersion == "std" else math.sqrt(self.shape_std)


def sample_kernel(config: KernelSamplerConfig, rng: np.random.Generator) -> WeibullKernel:
    """Independent normal draws for scale and shape; redraw until the shape
    exceeds 1 (rising hazard) and the scale is positive."""
    for _ in range(_MAX_RESAMPLES):
        scale = rng.normal(config.scale_mean, config.scale_sd)
        shape = rng.normal(config.shape_mean, config.shape_sd)
        if shape > 1.0 and scale > 0.0:
            return WeibullKernel(shape=shape, scale=scale)
    raise ValidationError(
        "kernel sampling exceeded 1000 redraws; sampler dispersions are implausible"
    )
