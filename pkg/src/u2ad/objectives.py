"""The four training losses and their combination.

* denoising score matching: regress the network's score output onto the
  perturbation kernel's log-density gradient, -(x(t) - alpha x(0)) / sigma^2
  (equivalently -noise/sigma for x(t) = alpha x(0) + sigma noise)
* reconstruction: squared error of the single-step denoising estimate
  x_hat = (x(t) + sigma^2 * score) / alpha against the clean input
* volume minimization: squared distance of score rows to a frozen center
* contextual information gain: per-point Jeffrey divergence between the
  local (xi) and global (psi) characteristic rows, averaged over layers

The combined objective is
    total = dsm + l1 * rec + l2 * vm - l3 * gamma
trained by default as an alternating two-phase minimax: phase "a" pushes the
local pathway to enlarge the gain (psi detached), phase "b" pushes the
global pathway to shrink it (xi detached).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .scorenet import PathwayCharacteristics
from .sde import PerturbedBatch

EPS_KL = 1e-12
ROW_SUM_TOL = 1e-4
CENTER_FLOOR = 0.1


@dataclass(frozen=True)
class LossComponents:
    """Logged loss values for one step; total always follows the combined
    objective arithmetic exactly: total = dsm + l1*rec + l2*vm - l3*gamma."""

    dsm: float
    rec: float
    vm: float
    gamma: float
    total: float


@dataclass(frozen=True)
class Center:
    """Fixed score-space center for the volume-minimization objective."""

    c: torch.Tensor

    def __post_init__(self) -> None:
        if not torch.isfinite(self.c).all():
            raise ValueError("center must be finite")


def _as_tensor_coeff(value, like: torch.Tensor) -> torch.Tensor:
    coeff = torch.as_tensor(value, dtype=like.dtype, device=like.device)
    if coeff.ndim > 0:
        coeff = coeff.reshape(coeff.shape + (1,) * (like.ndim - coeff.ndim))
    return coeff


def dsm_target(batch: PerturbedBatch, like: torch.Tensor) -> torch.Tensor:
    """Kernel score target -(x(t) - alpha x(0)) / sigma^2 == -noise/sigma."""
    sigma = _as_tensor_coeff(batch.marginal.sigma, like)
    if torch.any(sigma == 0):
        raise ValueError("sigma must be positive for the denoising target")
    alpha = _as_tensor_coeff(batch.marginal.alpha, like)
    xt = torch.as_tensor(batch.xt, dtype=like.dtype, device=like.device)
    x0 = torch.as_tensor(batch.x0, dtype=like.dtype, device=like.device)
    return -(xt - alpha * x0) / (sigma * sigma)


def dsm_loss(score: torch.Tensor, batch: PerturbedBatch) -> torch.Tensor:
    """(1/2N) sum_i ||score_i - target_i||^2, averaged over any batch axis."""
    target = dsm_target(batch, score)
    if target.shape != score.shape:
        raise ValueError(f"score shape {tuple(score.shape)} does not match batch shape {tuple(target.shape)}")
    n = score.shape[-2]
    sq = (score - target).pow(2).sum(dim=(-1, -2)) / (2.0 * n)
    return sq.mean()


def weighted_dsm_loss(score: torch.Tensor, batch: PerturbedBatch) -> torch.Tensor:
    """DSM with the sigma(t)^2 variance weighting, computed in the
    numerically stable form (1/2N) ||sigma*score + noise||^2."""
    noise = torch.as_tensor(batch.noise, dtype=score.dtype, device=score.device)
    sigma = _as_tensor_coeff(batch.marginal.sigma, score)
    n = score.shape[-2]
    resid = sigma * score + noise
    return (resid.pow(2).sum(dim=(-1, -2)) / (2.0 * n)).mean()


def denoise_estimate(score: torch.Tensor, batch: PerturbedBatch) -> torch.Tensor:
    """Single-step reconstruction x_hat = (x(t) + sigma^2 * score) / alpha.

    Exact inverse of the perturbation when the score hits the kernel target;
    used at training time where running the reverse solver is impractical.
    """
    sigma = _as_tensor_coeff(batch.marginal.sigma, score)
    alpha = _as_tensor_coeff(batch.marginal.alpha, score)
    xt = torch.as_tensor(batch.xt, dtype=score.dtype, device=score.device)
    return (xt + sigma * sigma * score) / alpha


def rec_loss(x0: torch.Tensor, x_hat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-point squared row error and its mean."""
    if x_hat.shape != x0.shape:
        raise ValueError(f"x_hat shape {tuple(x_hat.shape)} does not match x0 shape {tuple(x0.shape)}")
    per_point = (x_hat - x0).pow(2).sum(dim=-1)
    return per_point, per_point.mean()


def vm_loss(score: torch.Tensor, center: Center) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-point squared distance of score rows to the center, and its mean."""
    c = center.c.to(dtype=score.dtype, device=score.device)
    if c.shape != score.shape[-2:]:
        raise ValueError(f"center shape {tuple(c.shape)} does not match score window shape {tuple(score.shape[-2:])}")
    per_point = (score - c).pow(2).sum(dim=-1)
    return per_point, per_point.mean()


def _check_rows(rows: torch.Tensor, name: str) -> torch.Tensor:
    sums = rows.sum(dim=-1)
    if torch.any(rows < -ROW_SUM_TOL) or torch.any((sums - 1.0).abs() > ROW_SUM_TOL):
        raise ValueError(f"{name} rows are not probability vectors within tolerance {ROW_SUM_TOL}")
    return rows.clamp_min(EPS_KL)


def _kl(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    return (p * (torch.log(p) - torch.log(q))).sum(dim=-1)


def contextual_gain(
    chars: PathwayCharacteristics,
    detach_psi: bool = False,
    detach_xi: bool = False,
) -> torch.Tensor:
    """Per-point gain: layer-averaged symmetric KL between xi and psi rows.

    Returns shape (..., N).  ``detach_psi``/``detach_xi`` select which pathway
    is held fixed for the minimax phases.
    """
    if len(chars.psi) != len(chars.xi) or not chars.psi:
        raise ValueError("need matching, non-empty psi/xi layer lists")
    total = None
    for psi, xi in zip(chars.psi, chars.xi):
        if detach_psi:
            psi = psi.detach()
        if detach_xi:
            xi = xi.detach()
        p = _check_rows(xi, "xi")
        q = _check_rows(psi, "psi")
        term = _kl(p, q) + _kl(q, p)
        total = term if total is None else total + term
    return total / len(chars.psi)


def total_loss(
    dsm: torch.Tensor,
    rec: torch.Tensor,
    vm: torch.Tensor,
    gamma: torch.Tensor,
    lambda1: float,
    lambda2: float,
    lambda3: float,
    phase: str = "a",
) -> torch.Tensor:
    """Combine the four terms.

    phase "a" (and the literal single-phase objective) subtracts the gain
    term; phase "b" adds it, so that minimizing phase b shrinks the gain.
    """
    if min(lambda1, lambda2, lambda3) < 0:
        raise ValueError("loss weights must be nonnegative")
    if phase not in ("a", "b"):
        raise ValueError(f"unknown phase {phase!r}")
    sign = -1.0 if phase == "a" else 1.0
    return dsm + lambda1 * rec + lambda2 * vm + sign * lambda3 * gamma


@torch.no_grad()
def init_center(model, train_batches, perturb_fn) -> Center:
    """Mean initial score over one pass of training batches.

    ``perturb_fn`` maps a clean (B, N, d) array to a PerturbedBatch with
    fresh noise and times.  Coordinates with magnitude below CENTER_FLOOR
    are pushed outward (sign-preserving, zeros go positive) to keep the
    volume objective away from the trivial all-zero solution.
    """
    total = None
    count = 0
    for x0 in train_batches:
        batch = perturb_fn(x0)
        xt = torch.as_tensor(batch.xt, dtype=next(model.parameters()).dtype)
        out = model(xt, batch.t)
        score = out.score if out.score.ndim == 3 else out.score.unsqueeze(0)
        total = score.sum(dim=0) if total is None else total + score.sum(dim=0)
        count += score.shape[0]
    if count == 0:
        raise ValueError("no training batches supplied for center initialization")
    c = total / count
    small = c.abs() < CENTER_FLOOR
    sign = torch.where(c < 0, -1.0, 1.0).to(c.dtype)
    c = torch.where(small, sign * CENTER_FLOOR, c)
    return Center(c=c)
