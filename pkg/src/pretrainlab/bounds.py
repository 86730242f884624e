"""Closed-form generalisation-bound evaluators and empirical verifiers.

Every unspecified order constant is 1 (scale a term with the ``*_mult``
fields).  Two formula families exist in two forms each and are selected by
flags on :class:`BoundParams`:

* ``sum_variant`` — the covering sum ``(Σ (B/W)^{2/3})³`` (``"appendix"``,
  default) or ``(Σ B/W)³`` (``"main"``);
* ``rho_variant`` — the transformer per-layer constant ``ρ_l`` in its
  ``"appendix"`` (default) or ``"main"`` form, see :func:`transformer_constants`.

Norm conventions: ``W(l)`` caps spectral norms, ``B(l)`` caps (2,1) norms,
data norms are whatever the caller measured (spectral for ``‖Z̃‖``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .errors import NumericalError, ValidationError
from .models import Encoder, MlpEncoder, SaLayer, TransformerEncoder, represent, sa_forward
from .pretrain import project_ball, _risk_and_grad
from .rng import stream

__all__ = [
    "BoundParams",
    "BoundDecomposition",
    "nn_covering_ln",
    "transformer_constants",
    "local_rad_phi",
    "local_rad_fixed_point",
    "ce_bound",
    "mae_bound",
    "tv_distance",
    "RuheResult",
    "ruhe_check",
    "TransferProbeResult",
    "transferability_probe",
    "ContractionResult",
    "verify_sa_contraction",
    "NormGrowthResult",
    "verify_norm_growth",
]


@dataclass(frozen=True)
class BoundParams:
    W: tuple[float, ...] = (1.0,)
    B: tuple[float, ...] = (1.0,)
    z_norm: float = 1.0  # ‖Z̃‖, spectral norm of the pre-training input matrix
    x_sq_sum: float = 1.0  # Σ_i ‖x_i‖² (or Σ_i ‖X_i‖² for patch data)
    x_star: float = 1.0  # max_i ‖X_i‖
    d: float = 1.0
    m: float = 1.0
    K: float = 1.0
    d_k: float = 1.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    n: float = 1.0
    N: float = 1.0
    nu: float = 0.5
    H: float = 1.0
    b: float = 1.0
    G_phi: float = 1.0
    B_phi: float = 1.0
    R: float = 1.0
    tv: float = 0.0
    C_beta: float = 1.0
    beta: float = 0.5
    complexity_mult: float = 1.0
    covering_mult: float = 1.0
    confidence_mult: float = 1.0
    sum_variant: Literal["appendix", "main"] = "appendix"
    rho_variant: Literal["appendix", "main"] = "appendix"

    def __post_init__(self):
        object.__setattr__(self, "W", tuple(float(w) for w in self.W))
        object.__setattr__(self, "B", tuple(float(b) for b in self.B))
        if len(self.W) != len(self.B) or not self.W:
            raise ValidationError("W and B need the same, nonzero number of layers")
        if min(self.W) <= 0 or min(self.B) <= 0:
            raise ValidationError("norm caps must be positive")
        positive = ("z_norm", "x_sq_sum", "x_star", "d", "m", "K", "d_k", "n", "N", "H",
                    "b", "G_phi", "B_phi", "R", "C_beta", "beta", "complexity_mult",
                    "covering_mult", "confidence_mult")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.alpha1 < 0 or self.alpha2 < 0 or self.tv < 0:
            raise ValidationError("alpha1, alpha2 and tv must be non-negative")
        if not 0 < self.nu <= 1:
            raise ValidationError(f"nu must lie in (0, 1], got {self.nu}")
        if self.sum_variant not in ("appendix", "main"):
            raise ValidationError(f"unknown sum_variant {self.sum_variant!r}")
        if self.rho_variant not in ("appendix", "main"):
            raise ValidationError(f"unknown rho_variant {self.rho_variant!r}")

    @property
    def layers(self) -> int:
        return len(self.W)


@dataclass(frozen=True)
class BoundDecomposition:
    complexity: float
    pretrain: float
    confidence: float
    tv: float
    fixed_point: float
    covering_constant: float

    @property
    def total(self) -> float:
        return self.complexity + self.pretrain + self.confidence + self.tv

    def as_dict(self) -> dict[str, float]:
        out = asdict(self)
        out["total"] = self.total
        return out


def _prod_w2(p: BoundParams) -> float:
    return math.prod(w * w for w in p.W)


def _covering_sum(p: BoundParams) -> float:
    ratios = [b / w for b, w in zip(p.B, p.W)]
    if p.sum_variant == "main":
        return sum(ratios) ** 3
    return sum(r ** (2.0 / 3.0) for r in ratios) ** 3


def nn_covering_ln(p: BoundParams, eps: float) -> float:
    """``(‖Z̃‖² ln(2m²)/ε²) ∏ W(l)² (Σ (B(l)/W(l))^{2/3})³``."""
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    return (p.z_norm ** 2 * math.log(2 * p.m ** 2) / eps ** 2) * _prod_w2(p) * _covering_sum(p)


def transformer_constants(p: BoundParams) -> tuple[list[float], list[float]]:
    """Norm-growth factors ``s_1..s_L`` and per-layer constants ``ρ_1..ρ_L``.

    ``s_l = ∏_{j≤l} (α2 W(j)² + 1)(α1 K W(j)² + 1)``.  With ``s_0 = 1``,
    ``w = W(l)``, ``c = B(l)`` and ``x = s_{l−1}‖X*‖``:

    * appendix: ``α1²(α2w²+1)² c² ln(2d²) (K² + α1 w² x²/d_K)
      + α2² w² c² (w² + α1² K² w²) ln(2dm)``
    * main:     ``(α1α2w² + α1)² c² ln(2d²) (K² + α1 w⁴ x⁴/d_K)
      + α2² w² c² (1 + α1² K² w²) ln(2dm)``
    """
    a1, a2, K = p.alpha1, p.alpha2, p.K
    l2d, ldm = math.log(2 * p.d ** 2), math.log(2 * p.d * p.m)
    s, rho = [], []
    prev = 1.0
    for w, c in zip(p.W, p.B):
        x = prev * p.x_star
        w2 = w * w
        if p.rho_variant == "main":
            r = ((a1 * a2 * w2 + a1) ** 2 * c * c * l2d * (K * K + a1 * w2 * w2 * x ** 4 / p.d_k)
                 + a2 * a2 * w2 * c * c * (1 + a1 * a1 * K * K * w2) * ldm)
        else:
            r = (a1 * a1 * (a2 * w2 + 1) ** 2 * c * c * l2d * (K * K + a1 * w2 * x * x / p.d_k)
                 + a2 * a2 * w2 * c * c * (w2 + a1 * a1 * K * K * w2) * ldm)
        prev = prev * (a2 * w2 + 1) * (w2 * a1 * K + 1)
        s.append(prev)
        rho.append(r)
    return s, rho


def _log_factor(H: float, c: float, b: float, N: float) -> float:
    return max(1.0, math.log(0.4 * math.sqrt(b * N / (H * c))))


def local_rad_phi(r: float, H: float, c: float, b: float, N: float) -> float:
    """``φ(r) = 10 sqrt(H c r / N) · max{1, ln((2/5) sqrt(bN/(Hc)))}``."""
    return 10.0 * math.sqrt(H * c * r / N) * _log_factor(H, c, b, N)


def local_rad_fixed_point(H: float, c: float, b: float, N: float, verify: bool = True) -> float:
    """Largest solution of ``φ(r) = r``:
    ``r* = 100 (Hc/N) · max{1, ln((2/5) sqrt(bN/(Hc)))}²``."""
    for name, v in dict(H=H, c=c, b=b, N=N).items():
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")
    r = 100.0 * H * c / N * _log_factor(H, c, b, N) ** 2
    if verify:
        res = abs(local_rad_phi(r, H, c, b, N) - r) / r
        if not res < 1e-10:
            raise NumericalError(f"fixed-point residual {res:.3e} exceeds 1e-10")
    return r


def _tail_terms(p: BoundParams) -> tuple[float, float]:
    conf = p.confidence_mult * 4.0 * p.B_phi * math.sqrt(math.log(1.0 / p.nu) / p.n)
    return conf, 4.0 * p.B_phi * p.tv


def _assemble(p: BoundParams, complexity: float, c: float) -> BoundDecomposition:
    r = local_rad_fixed_point(p.H, c, p.b, p.N) if c > 0 else 0.0
    conf, tv = _tail_terms(p)
    return BoundDecomposition(complexity, p.C_beta * r ** p.beta, conf, tv, r, c)


def ce_bound(p: BoundParams) -> BoundDecomposition:
    """Downstream excess-risk bound for the MLP / linear-decoder setting.

    * complexity ``R G_φ sqrt(∏ W(l)² · Σ‖x_i‖²) / n``
    * pre-training ``C_β (r*)^β`` with ``r*`` the local-Rademacher fixed point for
      ``c = 12 ‖Z̃‖² ln(2m²) ∏ W(l)² (Σ (B/W)^{2/3})³``
    * confidence ``4 B_φ sqrt(log(1/ν)/n)`` and heterogeneity ``4 B_φ TV``
    """
    complexity = p.complexity_mult * p.R * p.G_phi * math.sqrt(_prod_w2(p) * p.x_sq_sum) / p.n
    c = p.covering_mult * 12.0 * p.z_norm ** 2 * math.log(2 * p.m ** 2) * _prod_w2(p) \
        * _covering_sum(p)
    return _assemble(p, complexity, c)


def mae_bound(p: BoundParams) -> BoundDecomposition:
    """Same decomposition for the transformer setting, with
    complexity ``R G_φ sqrt(K s_L² Σ‖X_i‖²)/n`` and ``c = 12 s_L² ‖Z̃‖² Σ ρ_l``."""
    s, rho = transformer_constants(p)
    sL = s[-1]
    complexity = p.complexity_mult * p.R * p.G_phi * math.sqrt(p.K * sL * sL * p.x_sq_sum) / p.n
    c = p.covering_mult * 12.0 * sL * sL * p.z_norm ** 2 * sum(rho)
    return _assemble(p, complexity, c)


# ------------------------------------------------------- distribution checks

def tv_distance(P, Q, atol: float = 1e-9) -> float:
    """``½ Σ |p_i − q_i|`` for two distributions on the same finite support."""
    p = np.asarray(P, dtype=np.float64)
    q = np.asarray(Q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValidationError(f"distributions must be vectors of equal length: {p.shape}, {q.shape}")
    for name, v in (("P", p), ("Q", q)):
        if np.any(v < 0) or abs(float(v.sum()) - 1.0) > atol:
            raise ValidationError(f"{name} is not a probability vector")
    return 0.5 * float(np.sum(np.abs(p - q)))


@dataclass(frozen=True)
class RuheResult:
    holds: bool
    lower: float
    trace: float
    upper: float


def _psd_eigs(a, name: str, tol: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got {a.shape}")
    a = 0.5 * (a + a.T)
    ev = np.linalg.eigvalsh(a)
    if ev[0] < -tol * max(1.0, abs(ev[-1])):
        raise ValidationError(f"{name} is not positive semi-definite (eigenvalue {ev[0]:.3e})")
    return a, np.clip(ev, 0.0, None)


def ruhe_check(A, B, tol: float = 1e-10) -> RuheResult:
    """``Σ a_i b_{n−i+1} ≤ tr(AB) ≤ Σ a_i b_i`` with eigenvalues sorted descending."""
    a, ea = _psd_eigs(A, "A", tol)
    b, eb = _psd_eigs(B, "B", tol)
    if a.shape != b.shape:
        raise ValidationError(f"A {a.shape} and B {b.shape} differ in size")
    ea, eb = ea[::-1], eb[::-1]
    lower = float(ea @ eb[::-1])
    upper = float(ea @ eb)
    tr = float(np.sum(a * b.T))
    slack = 1e-12 * max(1.0, abs(upper))
    return RuheResult(lower - slack <= tr <= upper + slack, lower, tr, upper)


# ---------------------------------------------------------- transferability

@dataclass(frozen=True)
class TransferProbeResult:
    delta_ft: float
    delta_pt: float
    ratio: float
    lambda_schur: np.ndarray
    ceiling: float
    bound_ok: bool
    decoder_within_cap: bool | None = None


def _pinv(a: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(a, rcond=1e-10, hermitian=True)


def _reps(h, x) -> np.ndarray:
    if callable(h) and not isinstance(h, (MlpEncoder, TransformerEncoder)):
        return np.asarray(h(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    return represent(h, x)


def _fit_head(reps, y, radius, iters, start=None):
    """Projected GD from ``start`` (or 0); returns the best iterate and its risk."""
    theta = np.zeros(reps.shape[1]) if start is None else project_ball(start, radius)
    cov_top = np.linalg.eigvalsh(reps.T @ reps / reps.shape[0])[-1]
    step = 4.0 / cov_top if cov_top > 0 else 1.0
    best, best_theta = math.inf, theta
    for _ in range(iters + 1):
        risk, g = _risk_and_grad(reps, y, theta)
        if risk < best:
            best, best_theta = risk, theta
        theta = project_ball(theta - step * g, radius)
    return best_theta, best


def transferability_probe(h_hat: Encoder, h_star: Encoder, x, y, radius: float,
                          targets=None, W_cap: float | None = None,
                          iterations: int = 2000) -> TransferProbeResult:
    """Measure how well ``ĥ`` transfers compared with the reference ``h*``.

    Encoders may also be plain callables mapping an input batch to features.

    * ``Δ^pt``: best linear-decoder mean squared error from ``ĥ`` minus that
      from ``h*`` (least squares) for reconstructing ``targets`` (default:
      the inputs themselves).
    * ``Δ^ft``: logistic risk of the best head on ``ĥ`` minus that on ``h*``.
      The ``h*`` head ``θ̃*`` is fit by projected GD from 0 (step ``4/σ_max``).
      For ``ĥ`` the better of the same fit and the transported head
      ``E[ĥĥᵀ]† E[ĥh*ᵀ] θ̃*`` (projected) is used.
    * ``Λ = E[h*h*ᵀ] − E[h*ĥᵀ] E[ĥĥᵀ]† E[ĥh*ᵀ]``: second moment of the part
      of ``h*`` that ``ĥ`` cannot linearly explain.
    * ceiling ``sqrt(p ‖θ̃*‖²) / sqrt(σ_min(W*ᵀW*))`` with ``W*`` the
      least-squares decoder on ``h*``; ``bound_ok`` is ``Δ^ft/sqrt(Δ^pt) ≤ ceiling``.
    """
    if not radius > 0:
        raise ValidationError("radius must be positive")
    hs = _reps(h_star, x)
    hh = _reps(h_hat, x)
    if hs.shape != hh.shape:
        raise ValidationError(f"representations differ in shape: {hh.shape} vs {hs.shape}")
    n = hs.shape[0]
    if n == 0:
        raise ValidationError("empty data")
    x_arr = np.asarray(x, dtype=np.float64)
    z = (x_arr.reshape(n, -1) if targets is None
         else np.asarray(targets, dtype=np.float64).reshape(n, -1))
    yv = np.asarray(y, dtype=np.float64)

    ss, sh, hhh = hs.T @ hs / n, hs.T @ hh / n, hh.T @ hh / n
    lam = ss - sh @ _pinv(hhh) @ sh.T
    lam = 0.5 * (lam + lam.T)

    def ls(reps):
        coef, *_ = np.linalg.lstsq(reps, z, rcond=1e-10)
        return coef.T, float(np.mean(np.sum((reps @ coef - z) ** 2, axis=1)))

    w_star, err_star = ls(hs)
    w_hat, err_hat = ls(hh)
    delta_pt = max(err_hat - err_star, 0.0)

    theta_star, risk_star = _fit_head(hs, yv, radius, iterations)
    _, risk_fit = _fit_head(hh, yv, radius, iterations)
    transported = project_ball(_pinv(hhh) @ sh.T @ theta_star, radius)
    risk_tr = _risk_and_grad(hh, yv, transported)[0]
    delta_ft = min(risk_fit, risk_tr) - risk_star

    smin = float(np.linalg.eigvalsh(w_star.T @ w_star)[0])
    ceiling = (math.sqrt(hs.shape[1] * float(theta_star @ theta_star)) / math.sqrt(smin)
               if smin > 0 else math.inf)
    if delta_pt > 0:
        ratio = delta_ft / math.sqrt(delta_pt)
    else:
        ratio = 0.0 if delta_ft <= 1e-12 else math.inf
    cap = None if W_cap is None else bool(np.linalg.norm(w_hat, 2) <= W_cap)
    return TransferProbeResult(delta_ft, delta_pt, ratio, lam, ceiling,
                               bool(ratio <= ceiling), cap)


# ----------------------------------------------------------- transformer checks

@dataclass(frozen=True)
class ContractionResult:
    passed: bool
    worst_ratio: float  # ‖SA(X) − SA(X̂)‖ / (constant · ‖X − X̂‖)
    violations: int
    constant: float


def verify_sa_contraction(layer: SaLayer, trials: int = 100, seed: int = 0,
                          K: int = 4, scale: float = 1.0) -> ContractionResult:
    """Sample Gaussian pairs ``(X, X̂)`` and test
    ``‖SA(X) − SA(X̂)‖_F ≤ (α2W² + 1)(α1KW + 1)‖X − X̂‖_F``.

    ``W`` is the largest spectral norm of the layer's weights; inputs are
    ``K×d`` with i.i.d. ``N(0, scale²)`` entries.  Identical inputs count as a pass.
    """
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    W = layer.spectral_cap()
    const = (layer.alpha2 * W * W + 1) * (layer.alpha1 * K * W + 1)
    rng = stream(seed, "contraction")
    worst, bad = 0.0, 0
    for _ in range(trials):
        X = scale * rng.standard_normal((K, layer.d))
        Xh = scale * rng.standard_normal((K, layer.d))
        den = float(np.linalg.norm(X - Xh))
        num = float(np.linalg.norm(sa_forward(layer, X) - sa_forward(layer, Xh)))
        if den == 0.0:
            continue
        r = num / (const * den)
        worst = max(worst, r)
        bad += r > 1.0
    return ContractionResult(bad == 0, worst, bad, const)


@dataclass(frozen=True)
class NormGrowthResult:
    passed: bool
    ratios: np.ndarray  # ‖X^l‖_F / ‖X^0‖_F per layer
    s: np.ndarray  # s_1..s_L


def verify_norm_growth(enc: TransformerEncoder, x) -> NormGrowthResult:
    """Check ``‖X^l‖_F ≤ s_l ‖X^0‖_F`` for every prefix of layers on one input."""
    x = np.asarray(x, dtype=np.float64)
    s, h, out = 1.0, x, []
    svals = []
    K = enc.patch_count
    x0 = float(np.linalg.norm(x))
    for layer in enc.layers:
        W = layer.spectral_cap()
        s *= (layer.alpha2 * W * W + 1) * (W * W * layer.alpha1 * K + 1)
        h = sa_forward(layer, h)
        out.append(float(np.linalg.norm(h)) / x0 if x0 > 0 else 0.0)
        svals.append(s)
    ratios, sv = np.array(out), np.array(svals)
    return NormGrowthResult(bool(np.all(ratios <= sv)), ratios, sv)
