"""Stochastic gradient descent–ascent for the Rademacher-regularised objective.

The objective is ``min_w max_{v_1..v_B} L(w) + (λ/B) Σ_j v_jᵀ u_j(w)`` where
``u_j(w) = (1/n') Σ_i σ_i^j h_w(x_i)``.  Each step descends the primal with
step ``η`` and ascends every dual with step ``γ``, both from the current pair
(simultaneous updates); duals are then projected back onto the radius-``D``
ball unless projection is switched off.

Stationarity is measured through the Moreau envelope
``Ψ_ρ(w) = min_{w'} Ψ(w') + ‖w' − w‖²/(2ρ)`` of ``Ψ(w) = max_v f(w, v)``;
``∇Ψ_ρ(w) = (w − ŵ)/ρ`` where ``ŵ`` is the inner minimiser.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ConvergenceError, DivergenceError, ValidationError
from .models import Composite, loss_and_grads, reconstruction_var, represent_var
from .pretrain import batch_sampler, _take
from .rademacher import RademacherBatch, radreg_loss_and_grad, sample_rademacher
from .rng import stream

__all__ = [
    "SgdaState",
    "MoreauProbe",
    "sgda",
    "RadRegConfig",
    "AuxLoss",
    "RadRegResult",
    "radreg_train",
    "StepSizes",
    "theoretical_step_sizes",
    "moreau_gradient",
    "moreau_envelope",
    "estimate_smoothness",
    "ConvergenceReport",
    "convergence_report",
    "BilinearQuadraticToy",
    "flatten",
    "unflatten",
]

Oracle = Callable[[np.ndarray, np.ndarray, int], tuple[float, np.ndarray, np.ndarray, float]]
Psi = Callable[[np.ndarray], tuple[float, np.ndarray]]


# ------------------------------------------------------------ Moreau envelope

@dataclass(frozen=True)
class MoreauProbe:
    L_hat: float
    rho: float | None = None  # default 1/(4 L_hat)
    inner_iters: int = 100_000
    inner_tol: float = 1e-10

    def __post_init__(self):
        if not self.L_hat > 0:
            raise ValidationError(f"L_hat must be positive, got {self.L_hat}")
        r = self.rho_value
        if not 0 < r < 1.0 / self.L_hat:
            raise ValidationError(f"rho={r} must lie in (0, 1/L_hat) = (0, {1 / self.L_hat})")

    @property
    def rho_value(self) -> float:
        return self.rho if self.rho is not None else 1.0 / (4.0 * self.L_hat)


def moreau_envelope(psi: Psi, w, probe: MoreauProbe) -> tuple[float, np.ndarray]:
    """``(Ψ_ρ(w), ŵ)`` by gradient descent on the strongly convex inner problem."""
    w = np.asarray(w, dtype=np.float64)
    rho = probe.rho_value
    step = 1.0 / (probe.L_hat + 1.0 / rho)
    x = w.copy()
    gn = math.inf
    for _ in range(probe.inner_iters):
        val, g = psi(x)
        g = np.asarray(g, dtype=np.float64) + (x - w) / rho
        gn = float(np.linalg.norm(g))
        if gn <= probe.inner_tol:
            return float(val + np.sum((x - w) ** 2) / (2 * rho)), x
        x = x - step * g
    raise ConvergenceError("Moreau inner problem did not converge", gn, probe.inner_iters)


def moreau_gradient(psi: Psi, w, probe: MoreauProbe) -> np.ndarray:
    """``∇Ψ_ρ(w) = (w − ŵ)/ρ``."""
    w = np.asarray(w, dtype=np.float64)
    _, x = moreau_envelope(psi, w, probe)
    return (w - x) / probe.rho_value


def estimate_smoothness(grad: Callable[[np.ndarray], np.ndarray], w, pairs: int = 100,
                        radius: float = 1.0, seed: int = 0) -> float:
    """Largest ``‖∇(a) − ∇(b)‖ / ‖a − b‖`` over random pairs near ``w``."""
    w = np.asarray(w, dtype=np.float64)
    rng = stream(seed, "smoothness")
    best = 0.0
    for _ in range(pairs):
        a = w + radius * rng.standard_normal(w.shape)
        b = w + radius * rng.standard_normal(w.shape)
        dist = float(np.linalg.norm(a - b))
        if dist > 0:
            best = max(best, float(np.linalg.norm(grad(a) - grad(b))) / dist)
    return best


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: np.ndarray
    running_avg: np.ndarray  # running_avg[k] = mean of the first k+1 probes
    final_avg: float
    best_iteration: int
    best_value: float


def convergence_report(iterations, sq_norms) -> ConvergenceReport:
    """Running average of squared Moreau-gradient norms and the best probe."""
    its = np.asarray(iterations)
    sq = np.asarray(sq_norms, dtype=np.float64)
    if sq.size == 0:
        raise ValidationError("no Moreau probes recorded")
    if its.shape != sq.shape:
        raise ValidationError("iterations and probe values differ in length")
    avg = np.cumsum(sq) / np.arange(1, sq.size + 1)
    k = int(np.argmin(sq))
    return ConvergenceReport(its, avg, float(avg[-1]), int(its[k]), float(sq[k]))


# ------------------------------------------------------------------- step sizes

@dataclass(frozen=True)
class StepSizes:
    eta: float
    gamma: float
    complexity: float


def theoretical_step_sizes(eps: float, L: float, D: float, G: float, delta: float,
                           n_prime: int, B: int = 1, Delta: float = 1.0,
                           eta_mult: float = 1.0, gamma_mult: float = 1.0) -> StepSizes:
    """``η = ε⁶/(L³D²G)``, ``γ = ε²/(Lδ²)`` and the predicted gradient complexity
    ``B L³ (G² + δ²/n') D² (δ²/n') Δ / ε⁸``."""
    for name, v in dict(eps=eps, L=L, D=D, G=G, delta=delta, n_prime=n_prime, B=B,
                        Delta=Delta).items():
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")
    eta = eta_mult * eps ** 6 / (L ** 3 * D ** 2 * G)
    gamma = gamma_mult * eps ** 2 / (L * delta ** 2)
    s2 = delta ** 2 / n_prime
    comp = B * L ** 3 * (G ** 2 + s2) * D ** 2 * s2 * Delta / eps ** 8
    return StepSizes(eta, gamma, comp)


# ------------------------------------------------------------------------ SGDA

@dataclass
class SgdaState:
    w: np.ndarray
    duals: np.ndarray
    eta: float
    gamma: float
    iteration: int = 0
    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    reg_value: list[float] = field(default_factory=list)
    moreau_iters: list[int] = field(default_factory=list)
    moreau_sq: list[float] = field(default_factory=list)
    sampled_index: int = 0
    sampled_w: np.ndarray | None = None

    def write_csv(self, path) -> None:
        """``iteration,loss,reg_value,grad_norm,moreau_sq`` (blank when not probed)."""
        probes = dict(zip(self.moreau_iters, self.moreau_sq))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "reg_value", "grad_norm", "moreau_sq"])
            for t in range(len(self.loss)):
                m = probes.get(t)
                w.writerow([t, repr(self.loss[t]), repr(self.reg_value[t]),
                            repr(self.grad_norm[t]), "" if m is None else repr(m)])


def _project(v: np.ndarray, radius: float | None) -> np.ndarray:
    if radius is None:
        return v
    nrm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(nrm > radius, v * (radius / np.where(nrm > 0, nrm, 1.0)), v)


def sgda(oracle: Oracle, w0, v0, eta: float, gamma: float, iterations: int, *,
         radius: float | None = None, seed: int = 0, psi: Psi | None = None,
         probe: MoreauProbe | None = None, probe_every: int = 50) -> SgdaState:
    """Simultaneous SGDA from ``(w0, v0)``.

    ``oracle(w, v, t)`` returns ``(loss, ∇_w, ∇_v, reg_value)`` on the step-``t``
    sample.  Duals are rows of ``v``; ``radius`` enables the row-wise ball
    projection.  With ``psi`` and ``probe`` set, ``‖∇Ψ_ρ(w^t)‖²`` is recorded at
    every ``probe_every``-th iterate (including 0 and, if aligned, ``T``); a
    probe whose inner problem does not converge is recorded as NaN.
    The output iterate of index ``s ∈ {1..T}`` is drawn uniformly up front.
    """
    if not eta > 0 or gamma < 0:
        raise ValidationError("need eta > 0 and gamma >= 0")
    if iterations < 0:
        raise ValidationError("iterations must be non-negative")
    st = SgdaState(np.array(w0, dtype=np.float64), _project(np.array(v0, dtype=np.float64),
                                                              radius), eta, gamma)
    st.sampled_index = int(stream(seed, "output-iterate").integers(1, iterations + 1)) \
        if iterations else 0
    st.sampled_w = st.w.copy() if iterations == 0 else None
    probing = psi is not None and probe is not None and probe_every > 0

    def do_probe(t):
        try:
            g = moreau_gradient(psi, st.w, probe)
            sq = float(g @ g)
        except ConvergenceError:
            # non-smooth objectives (ReLU kinks) can stall the inner solver;
            # a failed probe is recorded rather than aborting training
            sq = math.nan
        st.moreau_iters.append(t)
        st.moreau_sq.append(sq)

    for t in range(iterations):
        if probing and t % probe_every == 0:
            do_probe(t)
        loss, gw, gv, reg = oracle(st.w, st.duals, t)
        if not (math.isfinite(loss) and np.all(np.isfinite(gw)) and np.all(np.isfinite(gv))):
            raise DivergenceError("SGDA produced a non-finite value", t,
                                  st.loss[-1] if st.loss else math.nan, state=st)
        st.loss.append(float(loss))
        st.grad_norm.append(float(np.linalg.norm(gw)))
        st.reg_value.append(float(reg))
        st.w = st.w - eta * gw
        st.duals = _project(st.duals + gamma * gv, radius)
        st.iteration = t + 1
        if t + 1 == st.sampled_index:
            st.sampled_w = st.w.copy()
    if probing and iterations % probe_every == 0:
        do_probe(iterations)
    return st


# ------------------------------------------------------- RadReg on a network

def flatten(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([v.reshape(-1) for v in params.values()])


def unflatten(flat: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out, i = {}, 0
    for k, v in like.items():
        out[k] = flat[i:i + v.size].reshape(v.shape)
        i += v.size
    return out


@dataclass(frozen=True)
class AuxLoss:
    """Extra reconstruction term ``α · L`` on masked downstream inputs."""

    inputs: np.ndarray
    targets: np.ndarray
    alpha: float
    loss_mask: np.ndarray | None = None


@dataclass(frozen=True)
class RadRegConfig:
    learning_rate: float  # η
    dual_step: float  # γ
    iterations: int
    batch_size: int | None = None
    down_batch_size: int | None = None
    seed: int = 0
    radius: float = 1.0  # D, the dual / head ball radius
    project: bool = True
    probe_every: int | None = None  # Moreau probes; None disables
    probe_rho: float | None = None
    probe_inner_iters: int = 5000
    probe_inner_tol: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.dual_step < 0:
            raise ValidationError("dual_step must be non-negative")
        if self.iterations < 0:
            raise ValidationError("iterations must be non-negative")
        if not self.radius > 0:
            raise ValidationError("radius must be positive")


@dataclass
class RadRegResult:
    model: Composite  # final iterate
    sampled_model: Composite  # uniformly sampled iterate
    state: SgdaState
    signs: RademacherBatch


def radreg_train(model: Composite, inputs, targets, down_x, lam: float, B: int,
                 cfg: RadRegConfig, *, loss_mask=None, aux: AuxLoss | None = None,
                 l2: float = 0.0) -> RadRegResult:
    """Regularised pre-training by SGDA.

    Pre-training minibatches come from the same stream as :func:`pretrain`
    (so ``λ = 0`` with no extra terms reproduces it exactly); downstream
    minibatches and Rademacher signs use their own streams.  ``aux`` adds an
    unsupervised loss on downstream inputs (sharing the downstream minibatch)
    and ``l2`` adds ``l2 · Σ‖W_l‖_F²`` over encoder weights.
    """
    if lam < 0 or l2 < 0:
        raise ValidationError("regularisation weights must be non-negative")
    if B < 1:
        raise ValidationError("B must be at least 1")
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    down_x = np.asarray(down_x, dtype=np.float64)
    n_down = down_x.shape[0]
    signs = sample_rademacher(B, n_down, 1, cfg.seed)
    like = model.params()
    p = model.encoder.out_dim
    pre_batches = batch_sampler(inputs.shape[0], cfg.batch_size, cfg.seed)
    down_batches = batch_sampler(n_down, cfg.down_batch_size, cfg.seed, "down-batches")
    enc_keys = [k for k in like if k.startswith("enc.")]

    def oracle(w, v, t):
        params = unflatten(w, like)
        current = model.with_params(params)
        idx = next(pre_batches)
        didx = next(down_batches)
        ev = radreg_loss_and_grad(current, v, _take(inputs, idx), _take(targets, idx),
                                  _take(down_x, didx), signs.configs if didx is None
                                  else signs.configs[:, didx], lam, _take(loss_mask, idx))
        loss, grads = ev.loss, ev.grads
        if aux is not None and aux.alpha > 0:
            a_loss, a_g = loss_and_grads(current, _take(aux.inputs, didx),
                                         _take(aux.targets, didx), "mse",
                                         _take(aux.loss_mask, didx))
            loss += aux.alpha * a_loss
            grads = {k: g + aux.alpha * a_g[k] for k, g in grads.items()}
        if l2 > 0:
            loss += l2 * sum(float(np.sum(params[k] ** 2)) for k in enc_keys)
            grads = {k: (g + 2.0 * l2 * params[k] if k in enc_keys else g)
                     for k, g in grads.items()}
        return loss, flatten(grads), ev.dual_grads, float(np.mean(ev.reg_values))

    psi = probe = None
    if cfg.probe_every:
        psi = _envelope_objective(model, like, inputs, targets, down_x, signs, lam,
                                  cfg.radius, loss_mask)
        w0 = flatten(like)
        L_hat = estimate_smoothness(lambda w: psi(w)[1], w0, radius=1e-2, seed=cfg.seed)
        probe = MoreauProbe(L_hat, rho=cfg.probe_rho, inner_iters=cfg.probe_inner_iters,
                            inner_tol=cfg.probe_inner_tol)
    state = sgda(oracle, flatten(like), np.zeros((B, p)), cfg.learning_rate, cfg.dual_step,
                 cfg.iterations, radius=cfg.radius if cfg.project else None,
                 seed=cfg.seed, psi=psi, probe=probe, probe_every=cfg.probe_every or 0)
    final = model.with_params(unflatten(state.w, like))
    sampled = model.with_params(unflatten(state.sampled_w, like))
    return RadRegResult(final, sampled, state, signs)


def _envelope_objective(model, like, inputs, targets, down_x, signs, lam, radius, loss_mask):
    """Full-data ``Ψ(w) = L(w) + (λ/B) Σ_j D‖u_j(w)‖`` (duals maximised out)."""

    def psi(w):
        params = unflatten(w, like)
        current = model.with_params(params)
        pv = {k: ad.param(v) for k, v in params.items()}
        loss = reconstruction_var(current, pv, inputs, targets, loss_mask)
        if lam > 0:
            reps = represent_var(current.encoder, pv, ad.const(down_x))
            u = ad.const(signs.configs) @ reps * (1.0 / down_x.shape[0])
            loss = loss + ad.total(ad.row_norm(u)) * (lam * radius / signs.B)
        g = ad.grad(loss, [pv[k] for k in like])
        return float(loss.value), np.concatenate([x.reshape(-1) for x in g])

    return psi


# -------------------------------------------------------------- diagnostic toy

@dataclass(frozen=True)
class BilinearQuadraticToy:
    """``f(w, v) = ½ wᵀQw + vᵀAw − ½‖v‖²`` with ``‖v‖ ≤ radius``.

    Gradient oracles add i.i.d. Gaussian noise of standard deviation ``noise``
    per coordinate.  ``Ψ(w) = max_v f(w, v)`` is smooth with gradient
    ``Qw + Aᵀv*``, ``v* = proj(Aw)``.
    """

    Q: np.ndarray
    A: np.ndarray
    noise: float = 0.5
    radius: float = 10.0

    @classmethod
    def random(cls, dim: int = 5, dual_dim: int = 3, noise: float = 0.5,
               radius: float = 10.0, seed: int = 0) -> "BilinearQuadraticToy":
        rng = stream(seed, "toy")
        m = rng.standard_normal((dim, dim)) / math.sqrt(dim)
        a = rng.standard_normal((dual_dim, dim)) / math.sqrt(dim)
        return cls(m @ m.T + 0.1 * np.eye(dim), a, noise, radius)

    @property
    def smoothness(self) -> float:
        return float(np.linalg.eigvalsh(self.Q + self.A.T @ self.A)[-1])

    def oracle(self, seed: int = 0) -> Oracle:
        rng = stream(seed, "toy-noise")

        def f(w, v, t):
            v = v.reshape(-1)
            loss = 0.5 * w @ self.Q @ w + v @ self.A @ w - 0.5 * v @ v
            gw = self.Q @ w + self.A.T @ v + self.noise * rng.standard_normal(w.shape)
            gv = self.A @ w - v + self.noise * rng.standard_normal(v.shape)
            return float(loss), gw, gv[None, :], float(v @ self.A @ w)

        return f

    def psi(self, w) -> tuple[float, np.ndarray]:
        aw = self.A @ w
        v = _project(aw, self.radius)
        return (float(0.5 * w @ self.Q @ w + v @ aw - 0.5 * v @ v),
                self.Q @ w + self.A.T @ v)
