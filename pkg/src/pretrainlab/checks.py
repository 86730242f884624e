"""Randomised property checks shared by the ``verify`` command and the tests.

Each ``check_*`` function runs a fixed number of seeded random draws and
returns a :class:`CheckResult` with the number that passed.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .bounds import (local_rad_fixed_point, local_rad_phi, ruhe_check, tv_distance,
                     verify_norm_growth, verify_sa_contraction)
from .models import (Composite, LinearHead, init_decoder, init_mlp, init_sa_layer,
                     init_transformer, loss_and_grads)
from .rademacher import radreg_loss_and_grad
from .rng import stream

__all__ = [
    "CheckResult",
    "fd_gradient",
    "relative_error",
    "gradient_error",
    "check_gradients",
    "check_contraction",
    "check_norm_growth",
    "check_tv",
    "check_ruhe",
    "check_fixed_point",
    "check_report_roundtrip",
    "check_container_roundtrip",
    "run_suite",
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: int
    total: int
    worst: float = 0.0  # the largest violation statistic seen

    @property
    def ok(self) -> bool:
        return self.passed == self.total


def fd_gradient(f: Callable[[dict], float], params: dict[str, np.ndarray],
                h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of ``f`` at ``params``, one coordinate at a time."""
    out = {}
    for k, v in params.items():
        g = np.zeros(v.shape)
        for idx in np.ndindex(v.shape):
            for sgn in (1.0, -1.0):
                w = v.copy()
                w[idx] += sgn * h
                g[idx] += sgn * f({**params, k: w})
            g[idx] /= 2 * h
        out[k] = g
    return out


def relative_error(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> float:
    va = np.concatenate([a[k].ravel() for k in a])
    vb = np.concatenate([b[k].ravel() for k in a])
    den = max(float(np.linalg.norm(va)), float(np.linalg.norm(vb)), 1e-300)
    return float(np.linalg.norm(va - vb)) / den


def _mlp_mse(rng):
    d, m = 4, 5
    enc = init_mlp(d, m, 2, rng)
    model = Composite(enc, init_decoder(d, m, m, rng))
    x = rng.standard_normal((6, d))
    y = rng.standard_normal((6, d))
    return model, lambda mod: loss_and_grads(mod, x, y, "mse")


def _mlp_logistic(rng):
    d, m = 4, 5
    enc = init_mlp(d, m, 2, rng)
    th = rng.standard_normal(m) * 0.3
    model = Composite(enc, head=LinearHead(th, 10.0))
    x = rng.standard_normal((6, d))
    y = np.where(rng.standard_normal(6) > 0, 1.0, -1.0)
    return model, lambda mod: loss_and_grads(mod, x, y, "logistic")


def _sa_mse(rng):
    K, d, dk, m = 3, 4, 3, 5
    enc = init_transformer(K, d, dk, m, 1, 0.5, 0.5, rng)
    model = Composite(enc, init_decoder(d, d, m, rng))
    x = rng.standard_normal((5, K, d))
    y = rng.standard_normal((5, K, d))
    return model, lambda mod: loss_and_grads(mod, x, y, "mse")


def _radreg(rng):
    d, m, B = 4, 5, 3
    enc = init_mlp(d, m, 2, rng)
    model = Composite(enc, init_decoder(d, m, m, rng))
    x = rng.standard_normal((6, d))
    y = rng.standard_normal((6, d))
    xd = rng.standard_normal((4, d))
    sig = np.where(rng.standard_normal((B, 4)) > 0, 1.0, -1.0)
    duals = rng.standard_normal((B, m))

    def f(mod):
        ev = radreg_loss_and_grad(mod, duals, x, y, xd, sig, 0.7)
        return ev.loss, ev.grads

    return model, f


GRADIENT_CASES = {
    "mlp-mse": _mlp_mse,
    "mlp-logistic": _mlp_logistic,
    "sa-mse": _sa_mse,
    "radreg": _radreg,
}


def gradient_error(case: str, seed: int, h: float = 1e-5) -> float:
    """Relative error of reverse-mode vs central-difference gradients."""
    model, f = GRADIENT_CASES[case](stream(seed, "gradcheck-" + case))
    _, g = f(model)
    params = model.params()
    fd = fd_gradient(lambda p: f(model.with_params(p))[0], params, h)
    return relative_error(g, fd)


def check_gradients(draws: int = 20, tol: float = 1e-5, seed: int = 0) -> list[CheckResult]:
    out = []
    for case in GRADIENT_CASES:
        errs = [gradient_error(case, seed + i) for i in range(draws)]
        out.append(CheckResult(f"gradient {case}", sum(e < tol for e in errs), draws, max(errs)))
    return out


def check_contraction(draws: int = 100, seed: int = 0) -> CheckResult:
    """One random layer and one random input pair per draw."""
    rng = stream(seed, "verify-contraction")
    ok, worst = 0, 0.0
    for i in range(draws):
        d, dk, m = (int(v) for v in rng.integers(2, 7, size=3))
        a1, a2 = rng.uniform(0.0, 1.0, size=2)
        layer = init_sa_layer(d, dk, m, float(a1), float(a2), rng)
        r = verify_sa_contraction(layer, trials=1, seed=seed * 100_003 + i,
                                  K=int(rng.integers(2, 6)))
        ok += r.passed
        worst = max(worst, r.worst_ratio)
    return CheckResult("SA contraction", ok, draws, worst)


def check_norm_growth(draws: int = 100, seed: int = 0) -> CheckResult:
    rng = stream(seed, "verify-norm-growth")
    ok, worst = 0, 0.0
    for _ in range(draws):
        K, d, dk, m, L = (int(v) for v in rng.integers(2, 7, size=5))
        a1, a2 = rng.uniform(0.0, 1.0, size=2)
        enc = init_transformer(K, d, dk, m, L, float(a1), float(a2), rng)
        r = verify_norm_growth(enc, rng.standard_normal((K, d)))
        ok += r.passed
        worst = max(worst, float(np.max(r.ratios / r.s)))
    return CheckResult("norm growth", ok, draws, worst)


def check_tv(draws: int = 100, seed: int = 0) -> CheckResult:
    rng = stream(seed, "verify-tv")
    ok, worst = 0, 0.0
    for _ in range(draws):
        k = int(rng.integers(2, 12))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        # the largest event gap: sup_A |P(A) − Q(A)| is attained at A = {p > q}
        event = float(np.sum((p - q)[p > q]))
        gap = abs(tv_distance(p, q) - event)
        ok += gap <= 1e-12
        worst = max(worst, gap)
    return CheckResult("TV = sup-event identity", ok, draws, worst)


def check_ruhe(draws: int = 100, seed: int = 0, dim: int = 4) -> CheckResult:
    rng = stream(seed, "verify-ruhe")
    ok = 0
    for _ in range(draws):
        a = rng.standard_normal((dim, dim))
        b = rng.standard_normal((dim, dim))
        ok += ruhe_check(a @ a.T, b @ b.T).holds
    return CheckResult("Ruhe trace inequality", ok, draws)


def check_fixed_point(draws: int = 100, seed: int = 0) -> CheckResult:
    rng = stream(seed, "verify-fixed-point")
    ok, worst = 0, 0.0
    cases = [(1.0, 1.0, 1.0, 100.0)]
    for _ in range(draws - 1):
        H, c, b = np.exp(rng.uniform(math.log(1e-2), math.log(1e2), size=3))
        N = float(np.exp(rng.uniform(math.log(10.0), math.log(1e6))))
        cases.append((float(H), float(c), float(b), N))
    for H, c, b, N in cases:
        r = local_rad_fixed_point(H, c, b, N, verify=False)
        res = abs(local_rad_phi(r, H, c, b, N) - r) / r
        ok += res < 1e-10
        worst = max(worst, res)
    return CheckResult("local Rademacher fixed point", ok, draws, worst)


def check_report_roundtrip(draws: int = 20, seed: int = 0) -> CheckResult:
    from .harness.experiment import (ComparisonReport, VariantRow, format_report,
                                     parse_report)

    rng = stream(seed, "verify-report")
    ok = 0
    for _ in range(draws):
        rows = []
        for v in ("none", "l2", "radreg"):
            lam = float(rng.exponential())
            for s in range(3):
                vals = rng.uniform(size=4)
                if rng.uniform() < 0.1:
                    vals[:] = math.nan
                rows.append(VariantRow(v, lam, s, *map(float, vals)))
        rep = ComparisonReport(rows)
        parsed = parse_report(format_report(rep))
        expect = [(r.variant, [r.lam, r.final_acc, r.best_acc, r.train_acc, r.rad_est])
                  for r in rows] + [(lbl, [lam] + vals) for lbl, lam, vals in rep.summary()]
        same = len(parsed) == len(expect) and all(
            pl == el and np.array_equal(np.array(pv), np.array(ev), equal_nan=True)
            for (pl, pv), (el, ev) in zip(parsed, expect))
        ok += same
    return CheckResult("CSV report round trip", ok, draws)


def check_container_roundtrip(draws: int = 20, seed: int = 0) -> CheckResult:
    from .harness.container import decode, encode

    rng = stream(seed, "verify-container")
    ok = 0
    for _ in range(draws):
        tensors = {f"t{i}": rng.standard_normal(tuple(int(v) for v in rng.integers(0, 5, 2)))
                   for i in range(int(rng.integers(0, 4)))}
        back = decode(encode(tensors))
        ok += list(back) == list(tensors) and all(
            back[k].shape == v.shape and back[k].tobytes() == v.tobytes()
            for k, v in tensors.items())
    return CheckResult("weight container round trip", ok, draws)


def run_suite(seed: int = 0, draws: int = 100, grad_draws: int = 20) -> list[CheckResult]:
    return [
        *check_gradients(grad_draws, seed=seed),
        check_contraction(draws, seed),
        check_norm_growth(draws, seed),
        check_tv(draws, seed),
        check_ruhe(draws, seed),
        check_fixed_point(draws, seed),
        check_report_roundtrip(seed=seed),
        check_container_roundtrip(seed=seed),
    ]
