"""Representation-induced Rademacher complexity: estimation and regularisation.

For a frozen representation ``h`` and the head class ``{θ : ‖θ‖ ≤ R}`` the
inner supremum has a closed form,

    sup_θ (1/n) Σ σ_i θᵀh(x_i) = R ‖u‖,   u = (1/n) Σ σ_i h(x_i),

and for matrix heads over the Frobenius ball ``sup tr(V M) = R ‖M‖_F`` with
``M = (1/n) Σ h(x_i) σ_iᵀ``.  Projected gradient ascent versions are provided
for cross-checking.  :func:`radreg_loss_and_grad` evaluates the regularised
pre-training objective used by the minimax trainer, with the dual heads
``v_1 … v_B`` held explicitly instead of maximised out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .models import Composite, Encoder, reconstruction_var, represent, represent_var
from .rng import stream

__all__ = [
    "RademacherBatch",
    "RegularizerValue",
    "sample_rademacher",
    "inner_sup_binary",
    "inner_sup_multiclass",
    "inner_sup_binary_iterative",
    "inner_sup_multiclass_iterative",
    "estimate_complexity",
    "jensen_bound",
    "RadRegEval",
    "radreg_loss_and_grad",
]


@dataclass(frozen=True)
class RademacherBatch:
    configs: np.ndarray  # B×n (binary) or B×n×o (multiclass), entries ±1
    seed: int

    @property
    def B(self) -> int:
        return self.configs.shape[0]

    @property
    def n(self) -> int:
        return self.configs.shape[1]

    @property
    def multiclass(self) -> bool:
        return self.configs.ndim == 3


def sample_rademacher(B: int, n: int, o: int = 1, seed: int = 0) -> RademacherBatch:
    """``B`` i.i.d. sign configurations from the ``"signs"`` stream of ``seed``."""
    if B < 1 or n < 1 or o < 1:
        raise ValidationError("B, n and o must be positive")
    shape = (B, n) if o == 1 else (B, n, o)
    bits = stream(seed, "signs").integers(0, 2, size=shape)
    return RademacherBatch(2.0 * bits - 1.0, seed)


def inner_sup_binary(reps, sigma, R: float) -> tuple[float, np.ndarray]:
    """``(R‖u‖, R u/‖u‖)`` with ``u = (1/n) Σ σ_i h(x_i)``."""
    if not R > 0:
        raise ValidationError(f"R must be positive, got {R}")
    reps = np.asarray(reps, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if reps.ndim != 2 or sigma.shape != (reps.shape[0],):
        raise ValidationError(f"shapes do not compose: reps {reps.shape}, sigma {sigma.shape}")
    u = sigma @ reps / reps.shape[0]
    nu = float(np.linalg.norm(u))
    if nu == 0.0:
        return 0.0, np.zeros_like(u)
    return R * nu, R * u / nu


def inner_sup_multiclass(moment, R: float) -> tuple[float, np.ndarray]:
    """``max tr(V M)`` over ``‖V‖_F ≤ R``: ``(R‖M‖_F, R Mᵀ/‖M‖_F)``."""
    if not R > 0:
        raise ValidationError(f"R must be positive, got {R}")
    m = np.asarray(moment, dtype=np.float64)
    nm = float(np.linalg.norm(m))
    if nm == 0.0:
        return 0.0, np.zeros(m.T.shape)
    return R * nm, R * m.T / nm


def _ascent(grad_const: np.ndarray, R: float, steps: int, lr: float | None) -> np.ndarray:
    if lr is None:
        # step length R/10 in the ascent direction, whatever the scale of the gradient
        g = float(np.linalg.norm(grad_const))
        lr = R / (10.0 * g) if g > 0 else 0.0
    v = np.zeros_like(grad_const)
    for _ in range(steps):
        v = v + lr * grad_const
        nv = np.linalg.norm(v)
        if nv > R:
            v *= R / nv
    return v


def inner_sup_binary_iterative(reps, sigma, R: float, steps: int = 500,
                               lr: float | None = None) -> tuple[float, np.ndarray]:
    """Projected gradient ascent on ``θᵀu`` over the radius-``R`` ball."""
    reps = np.asarray(reps, dtype=np.float64)
    u = np.asarray(sigma, dtype=np.float64) @ reps / reps.shape[0]
    theta = _ascent(u, R, steps, lr)
    return float(theta @ u), theta


def inner_sup_multiclass_iterative(moment, R: float, steps: int = 500,
                                   lr: float | None = None) -> tuple[float, np.ndarray]:
    """Projected gradient ascent on ``tr(V M)`` over the Frobenius ball."""
    m = np.asarray(moment, dtype=np.float64)
    v = _ascent(m.T.copy(), R, steps, lr)
    return float(np.trace(v @ m)), v


@dataclass(frozen=True)
class RegularizerValue:
    values: np.ndarray
    mean: float
    std_err: float


def _moments(reps: np.ndarray, configs: np.ndarray) -> np.ndarray:
    n = reps.shape[0]
    if configs.ndim == 2:
        return configs @ reps / n  # B×p, row j is u_j
    return np.einsum("np,bno->bpo", reps, configs) / n  # B×p×o


def estimate_complexity(encoder: Encoder, x, rb: RademacherBatch, R: float) -> RegularizerValue:
    """Monte-Carlo estimate of the representation-induced Rademacher complexity."""
    if not R > 0:
        raise ValidationError(f"R must be positive, got {R}")
    reps = represent(encoder, x)
    if reps.shape[0] == 0:
        raise ValidationError("empty batch")
    if reps.shape[0] != rb.n:
        raise ValidationError(f"{reps.shape[0]} samples but sign vectors of length {rb.n}")
    mom = _moments(reps, rb.configs)
    axes = tuple(range(1, mom.ndim))
    values = R * np.sqrt(np.sum(mom * mom, axis=axes))
    std = float(np.std(values, ddof=1)) / np.sqrt(rb.B) if rb.B > 1 else 0.0
    return RegularizerValue(values, float(np.mean(values)), std)


def jensen_bound(reps, R: float) -> float:
    """``(R/n) sqrt(Σ‖h(x_i)‖²)`` — the expectation bound for the ball class."""
    reps = np.asarray(reps, dtype=np.float64)
    return R / reps.shape[0] * float(np.sqrt(np.sum(reps * reps)))


@dataclass
class RadRegEval:
    loss: float
    pretrain_loss: float
    reg_values: np.ndarray  # R_j(v_j, w) for each j
    grads: dict[str, np.ndarray]
    dual_grads: np.ndarray  # B×p, row j is (1/n') Σ σ_i h(x_i)


def radreg_loss_and_grad(model: Composite, duals, inputs, targets, down_x, sigma,
                         lam: float, loss_mask=None) -> RadRegEval:
    """``L_Û(w) + (λ/B) Σ_j v_jᵀ (1/n') Σ_i σ_i^j h_w(x_i)`` and its gradients.

    ``sigma`` is ``B×n'`` (the sign configurations restricted to the rows of
    ``down_x``).  Dual gradients are returned unscaled by ``λ/B``.  With
    ``λ = 0`` the regulariser is skipped entirely, so the primal gradient is
    exactly the plain reconstruction gradient.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}")
    params = model.params()
    names = list(params)
    pv = {k: ad.param(v) for k, v in params.items()}
    rec = reconstruction_var(model, pv, inputs, targets, loss_mask)
    duals = np.asarray(duals, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or duals.ndim != 2 or duals.shape[0] != sigma.shape[0]:
        raise ValidationError(f"duals {duals.shape} and signs {sigma.shape} do not compose")
    B = sigma.shape[0]
    if lam == 0:
        reps = represent(model.encoder, down_x)
        u = sigma @ reps / reps.shape[0]
        g = ad.grad(rec, [pv[k] for k in names])
        return RadRegEval(float(rec.value), float(rec.value), np.sum(duals * u, axis=1),
                          dict(zip(names, g)), u)
    reps = represent_var(model.encoder, pv, ad.const(np.asarray(down_x, dtype=np.float64)))
    if sigma.shape[1] != reps.shape[0] or duals.shape[1] != reps.shape[1]:
        raise ValidationError("signs/duals do not match the downstream batch")
    u = ad.const(sigma) @ reps * (1.0 / reps.shape[0])
    reg = ad.sum_axis(u * duals, -1)
    loss = rec + ad.total(reg) * (lam / B)
    g = ad.grad(loss, [pv[k] for k in names])
    return RadRegEval(float(loss.value), float(rec.value), reg.value.copy(),
                      dict(zip(names, g)), u.value.copy())
