"""Supervised risk, label-correlation regularizer, ELBO, compatibility loss and their logic-stage forms.

Window slots use 0-based offsets: slot (h, w) of bin (j, k) refers to bin
(j + h - a, k + w - a). Slots that fall outside the map take the centre
bin's own value.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Example
from .diffcalc import NonFiniteError, Tensor, as_tensor
from .models import VacaModel, scatter_latent
from .variational import (
    GammaPrior,
    GaussianPrior,
    kl_gamma,
    kl_gaussian,
    sample_gamma,
    sample_gaussian,
)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    tau: float = 1.0
    a: int = 1
    sigma_sim: float | None = None  # None: 0.5 * std(target) per example
    sup_reduction: str = "sum"  # squared error summed ("sum") or averaged ("mean") over bins
    gamma_prior: GammaPrior = field(default_factory=GammaPrior)
    gaussian_prior: GaussianPrior = field(default_factory=GaussianPrior)

    def __post_init__(self):
        if self.lam < 0 or self.tau < 0:
            raise ValueError("lam and tau must be nonnegative")
        if self.a < 1:
            raise ValueError("neighbourhood radius must be >= 1")
        if self.sigma_sim is not None and self.sigma_sim <= 0:
            raise ValueError("sigma_sim must be positive")
        if self.sup_reduction not in ("mean", "sum"):
            raise ValueError("sup_reduction must be 'mean' or 'sum'")


@functools.lru_cache(maxsize=32)
def neighbour_index(H: int, W: int, a: int) -> np.ndarray:
    """(H, W, 2a+1, 2a+1) flat indices of each window slot's bin, out-of-range slots -> centre."""
    n = 2 * a + 1
    j, k = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    out = np.empty((H, W, n, n), dtype=np.intp)
    for h in range(n):
        for w in range(n):
            r, v = j + h - a, k + w - a
            inside = (r >= 0) & (r < H) & (v >= 0) & (v < W)
            out[:, :, h, w] = np.where(inside, r * W + v, j * W + k)
    out.setflags(write=False)
    return out


def neighborhood_value(pred, j: int, k: int, h: int, w: int, a: int) -> float:
    pred = np.asarray(pred)
    H, W = pred.shape
    r, v = j + h - a, k + w - a
    if 0 <= r < H and 0 <= v < W:
        return float(pred[r, v])
    return float(pred[j, k])


def neighbours(pred: Tensor, a: int) -> Tensor:
    H, W = pred.shape
    return pred.reshape(H * W).take(neighbour_index(H, W, a))


def label_corr_loss(pred, M_window, j: int, k: int) -> Tensor:
    """Weighted absolute deviation of bin (j, k) from every slot of its window."""
    pred, M_window = as_tensor(pred), as_tensor(M_window)
    a = (M_window.shape[0] - 1) // 2
    H, W = pred.shape
    idx = neighbour_index(H, W, a)[j, k]
    flat = pred.reshape(H * W)
    diff = (flat[j * W + k] - flat.take(idx)).abs()
    return (M_window * diff).sum()


def reg_loss(pred, M) -> Tensor:
    pred, M = as_tensor(pred), as_tensor(M)
    a = (M.shape[-1] - 1) // 2
    H, W = pred.shape
    diff = (pred.reshape(H, W, 1, 1) - neighbours(pred, a)).abs()
    return (M * diff).sum()


def mse(pred, target) -> Tensor:
    return (as_tensor(pred) - as_tensor(target)).square().mean()


def sup_loss(pred, target, reduction: str = "sum") -> Tensor:
    sq = (as_tensor(pred) - as_tensor(target)).square()
    return sq.mean() if reduction == "mean" else sq.sum()


def risk(preds: Sequence[Tensor], targets: Sequence, Ms: Sequence | None, cfg: LossConfig) -> Tensor:
    """Batch mean of squared error + lam * reg_loss."""
    total = None
    for i, (pred, target) in enumerate(zip(preds, targets)):
        term = sup_loss(pred, target, cfg.sup_reduction)
        if Ms is not None and cfg.lam > 0:
            term = term + cfg.lam * reg_loss(pred, Ms[i])
        total = term if total is None else total + term
    return total * (1.0 / len(preds))


def risk_logic(preds: Sequence[Tensor], targets: Sequence) -> Tensor:
    total = None
    for pred, target in zip(preds, targets):
        term = mse(pred, target)
        total = term if total is None else total + term
    return total * (1.0 / len(preds))


def reconstruction_loss(phi, phi_hat, psi, psi_hat, A, A_logits) -> Tensor:
    """Squared Frobenius errors of Phi, Psi and sigmoid(Z Z^T) vs A; pass phi=None to drop the geometry term."""
    total = (as_tensor(psi_hat) - psi).square().sum()
    total = total + (as_tensor(A_logits).sigmoid() - np.asarray(A, dtype=np.float64)).square().sum()
    if phi is not None:
        total = (as_tensor(phi_hat) - phi).square().sum() + total
    return total


def similarity_bandwidth(target: np.ndarray, cfg: LossConfig) -> float:
    if cfg.sigma_sim is not None:
        return cfg.sigma_sim
    return max(0.5 * float(np.std(target)), 1e-12)


def local_similarity(target, cfg: LossConfig) -> np.ndarray:
    """s = exp(-|y_centre - y_slot| / (2 sigma^2)) for every window slot."""
    y = np.asarray(target, dtype=np.float64)
    H, W = y.shape
    sigma = similarity_bandwidth(y, cfg)
    nb = y.reshape(-1)[neighbour_index(H, W, cfg.a)]
    return np.exp(-np.abs(y[:, :, None, None] - nb) / (2.0 * sigma**2))


def compatibility_loss(Ms: Sequence, Ss: Sequence) -> Tensor:
    total = None
    for M, S in zip(Ms, Ss):
        term = (as_tensor(M) - S).abs().sum()
        total = term if total is None else total + term
    return total


def example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(seed * 1_000_000 + index)


@dataclass
class ElboTerms:
    recon: Tensor
    kl_gamma: Tensor | None
    kl_gaussian: Tensor
    compat: Tensor | None


def elbo_terms(
    ex: Example,
    model: VacaModel,
    cfg: LossConfig,
    rng: np.random.Generator,
    *,
    geometry: bool = True,
    gamma_method: str = "marsaglia_tsang",
) -> ElboTerms:
    """One Monte-Carlo sample of (Z, M) and every ELBO/compatibility term for a single design."""
    q_z = model.infer_gaussian_params(ex.topo.features, ex.topo.adjacency)
    Z = sample_gaussian(q_z, rng)
    kl_z = kl_gaussian(q_z, cfg.gaussian_prior)
    if not geometry:
        psi_hat, logits = model.eta.decode_topo(Z), model.eta.adjacency_logits(Z)
        recon = reconstruction_loss(None, None, ex.topo.features, psi_hat, ex.topo.adjacency, logits)
        return ElboTerms(recon, None, kl_z, None)

    z_grid = scatter_latent(Z, ex.cell_bins, ex.grid)
    q_m = model.infer_gamma_params(ex.geom, z_grid)
    M = sample_gamma(q_m, rng, gamma_method)
    phi_hat, psi_hat, logits = model.decode(M, Z, ex.cell_bins, ex.grid)
    recon = reconstruction_loss(ex.geom, phi_hat, ex.topo.features, psi_hat, ex.topo.adjacency, logits)
    S = local_similarity(ex.target, cfg)
    return ElboTerms(recon, kl_gamma(q_m, cfg.gamma_prior), kl_z, compatibility_loss([M], [S]))


def _check_finite(terms: dict[str, float]) -> None:
    bad = [k for k, v in terms.items() if not np.isfinite(v)]
    if bad:
        raise NonFiniteError(f"non-finite loss term(s): {', '.join(bad)}")


def _batch_terms(batch, model, cfg, seed, geometry, gamma_method) -> list[ElboTerms]:
    try:
        return [
            elbo_terms(ex, model, cfg, example_rng(seed, i), geometry=geometry, gamma_method=gamma_method)
            for i, ex in enumerate(batch)
        ]
    except NonFiniteError as err:
        raise NonFiniteError(f"VI objective diverged: {err}") from err


def elbo(
    batch: Sequence[Example],
    model: VacaModel,
    cfg: LossConfig,
    seed: int,
    *,
    include_gamma_kl: bool = True,
    gamma_method: str = "marsaglia_tsang",
    terms: list[ElboTerms] | None = None,
) -> Tensor:
    """-(mean reconstruction) - sum KL_gamma - sum KL_gauss over the batch."""
    if terms is None:
        terms = _batch_terms(batch, model, cfg, seed, True, gamma_method)
    n = len(terms)
    recon = sum_tensors([t.recon for t in terms]) * (1.0 / n)
    kl = sum_tensors([t.kl_gaussian for t in terms])
    if include_gamma_kl:
        kl = kl + sum_tensors([t.kl_gamma for t in terms])
    _check_finite({"reconstruction": recon.item(), "kl": kl.item()})
    return -recon - kl


def vi_loss(
    batch: Sequence[Example],
    model: VacaModel,
    cfg: LossConfig,
    seed: int,
    *,
    include_gamma_kl: bool = True,
    gamma_method: str = "marsaglia_tsang",
) -> Tensor:
    """tau * compatibility - ELBO."""
    terms = _batch_terms(batch, model, cfg, seed, True, gamma_method)
    compat = sum_tensors([t.compat for t in terms])
    _check_finite({"compatibility": compat.item()})
    e = elbo(batch, model, cfg, seed, include_gamma_kl=include_gamma_kl, terms=terms)
    return cfg.tau * compat - e


def vi_loss_logic(batch: Sequence[Example], model: VacaModel, cfg: LossConfig, seed: int) -> Tensor:
    """Negative topology-only ELBO: mean(||Psi_hat - Psi||^2 + ||S(ZZ^T) - A||^2) + sum KL_gauss."""
    terms = _batch_terms(batch, model, cfg, seed, False, "marsaglia_tsang")
    recon = sum_tensors([t.recon for t in terms]) * (1.0 / len(terms))
    kl = sum_tensors([t.kl_gaussian for t in terms])
    _check_finite({"reconstruction": recon.item(), "kl_gaussian": kl.item()})
    return recon + kl


def sum_tensors(ts: Sequence[Tensor]) -> Tensor:
    total = ts[0]
    for t in ts[1:]:
        total = total + t
    return total
