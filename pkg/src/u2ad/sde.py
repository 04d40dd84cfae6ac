"""Forward perturbation processes and their Gaussian transition kernels.

Three diffusion families are supported:

* ``vp``     variance preserving:   dx = -1/2 beta(t) x dt + sqrt(beta(t)) dw
* ``subvp``  sub-variance preserving, same drift with a damped diffusion term
* ``ve``     variance exploding:    dx = sqrt(d[sigma^2(t)]/dt) dw

All marginals are Gaussian, so training-time perturbation uses the closed
forms ``x(t) = alpha(t) x(0) + sigma(t) eps`` instead of simulating the SDE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALID_KINDS = ("vp", "subvp", "ve")


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable description of one forward diffusion process.

    ``beta_min``/``beta_max`` drive the vp and subvp families,
    ``sigma_min``/``sigma_max`` drive ve.  ``t_eps`` is the lower cutoff
    below which the denoising target becomes numerically singular.
    """

    kind: str = "vp"
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    T: float = 1.0
    t_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}, expected one of {VALID_KINDS}")
        if not 0.0 < self.t_eps < self.T:
            raise ValueError(f"t_eps must lie in (0, T), got {self.t_eps}")
        if self.kind in ("vp", "subvp"):
            if self.beta_min < 0 or self.beta_max <= self.beta_min:
                raise ValueError("need 0 <= beta_min < beta_max")
        if self.kind == "ve":
            if not 0 < self.sigma_min < self.sigma_max:
                raise ValueError("need 0 < sigma_min < sigma_max")


@dataclass(frozen=True)
class MarginalParams:
    """Mean coefficient and standard deviation of p(x(t) | x(0))."""

    alpha: float | np.ndarray
    sigma: float | np.ndarray


@dataclass
class PerturbedBatch:
    """One perturbed window (or a stack of them) together with everything
    the denoising target needs: the clean input, the draw, and the marginal.

    Invariant: ``xt == alpha * x0 + sigma * noise`` elementwise.
    """

    x0: np.ndarray
    t: float | np.ndarray
    noise: np.ndarray
    xt: np.ndarray
    marginal: MarginalParams = field(repr=False)


def _check_t(schedule: NoiseSchedule, t, lo: float = 0.0) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < lo) or np.any(t > schedule.T):
        raise ValueError(f"t={t} outside [{lo}, {schedule.T}]")
    return t


def beta(schedule: NoiseSchedule, t) -> float | np.ndarray:
    """Noise rate beta(t), linear between beta_min at t=0 and beta_max at t=T."""
    if schedule.kind == "ve":
        raise ValueError("beta(t) is undefined for the ve schedule")
    t = _check_t(schedule, t)
    out = schedule.beta_min + t * (schedule.beta_max - schedule.beta_min) / schedule.T
    return float(out) if out.ndim == 0 else out


def beta_integral(schedule: NoiseSchedule, t) -> float | np.ndarray:
    """B(t) = integral of beta(s) ds from 0 to t, in closed form."""
    if schedule.kind == "ve":
        raise ValueError("beta integral is undefined for the ve schedule")
    t = _check_t(schedule, t)
    out = schedule.beta_min * t + 0.5 * t * t * (schedule.beta_max - schedule.beta_min) / schedule.T
    return float(out) if out.ndim == 0 else out


def marginal_params(schedule: NoiseSchedule, t) -> MarginalParams:
    """Coefficients of the Gaussian transition kernel at time t.

    vp:     alpha = exp(-B(t)/2),  sigma = sqrt(1 - alpha^2)
    subvp:  alpha = exp(-B(t)/2),  sigma = 1 - alpha^2
    ve:     alpha = 1,             sigma = sigma_min (sigma_max/sigma_min)^t
    """
    t = _check_t(schedule, t)
    if np.any(t <= 0.0):
        raise ValueError("marginal_params requires t > 0")
    if schedule.kind == "ve":
        sigma = schedule.sigma_min * (schedule.sigma_max / schedule.sigma_min) ** t
        alpha = np.ones_like(sigma)
    else:
        big_b = beta_integral(schedule, t)
        alpha = np.exp(-0.5 * big_b)
        if schedule.kind == "vp":
            sigma = np.sqrt(1.0 - alpha * alpha)
        else:
            sigma = 1.0 - alpha * alpha
    if alpha.ndim == 0:
        return MarginalParams(alpha=float(alpha), sigma=float(sigma))
    return MarginalParams(alpha=alpha, sigma=sigma)


def perturb(schedule: NoiseSchedule, x0: np.ndarray, t, noise: np.ndarray) -> PerturbedBatch:
    """Apply the closed-form forward kernel: xt = alpha x0 + sigma noise.

    ``t`` may be a scalar (one window) or a vector matching the leading axis
    of a stacked batch; coefficients broadcast over the trailing axes.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} does not match x0 shape {x0.shape}")
    mp = marginal_params(schedule, t)
    alpha, sigma = mp.alpha, mp.sigma
    if np.ndim(alpha) > 0:
        extra = x0.ndim - np.ndim(alpha)
        alpha = np.reshape(alpha, np.shape(alpha) + (1,) * extra)
        sigma = np.reshape(sigma, np.shape(sigma) + (1,) * extra)
    xt = alpha * x0 + sigma * noise
    return PerturbedBatch(x0=x0, t=t, noise=noise, xt=xt, marginal=mp)


def drift_diffusion(schedule: NoiseSchedule, x: np.ndarray, t: float) -> tuple[np.ndarray, float]:
    """Drift f(x, t) and scalar diffusion g(t) of the forward SDE."""
    _check_t(schedule, t, lo=schedule.t_eps)
    x = np.asarray(x, dtype=np.float64)
    if schedule.kind == "ve":
        sig = marginal_params(schedule, t).sigma
        g = sig * np.sqrt(2.0 * np.log(schedule.sigma_max / schedule.sigma_min))
        return np.zeros_like(x), float(g)
    b = beta(schedule, t)
    f = -0.5 * b * x
    if schedule.kind == "vp":
        g = np.sqrt(b)
    else:
        g = np.sqrt(b * (1.0 - np.exp(-2.0 * beta_integral(schedule, t))))
    return f, float(g)
