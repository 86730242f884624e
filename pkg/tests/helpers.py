"""Shared fixtures-as-functions for the test modules."""

import dataclasses

import numpy as np

from pretrainlab.bounds import BoundParams

from pretrainlab.rng import stream


def planted_family(t: float, seed: int = 0, n: int = 300, d: int = 8, p: int = 4, q: int = 6):
    """Reference features ``h* = P x``, perturbed ``ĥ = (P + tE) x``, targets ``W* h*``
    and labels from a planted head on ``h*``."""
    rng = stream(seed, "planted-family")
    x = rng.standard_normal((n, d))
    P = rng.standard_normal((p, d)) / np.sqrt(d)
    E = rng.standard_normal((p, d)) / np.sqrt(d)
    W = rng.standard_normal((q, p))
    theta = rng.standard_normal(p)
    hs = x @ P.T
    y = np.where(hs @ theta > 0, 1.0, -1.0)
    P_hat = P + t * E
    return (lambda a: a @ P_hat.T), (lambda a: a @ P.T), x, y, hs @ W.T


def _sweep_ok(f, p, field, idx=None, increasing=True):
    base = getattr(p, field)
    v0 = base[idx] if idx is not None else base
    totals = []
    for v in np.geomspace(v0 / 4, v0 * 4, 20):
        if idx is not None:
            val = list(base)
            val[idx] = float(v)
            val = tuple(val)
        else:
            val = float(v)
        totals.append(f(dataclasses.replace(p, **{field: val})).total)
    diffs = np.diff(totals) if increasing else -np.diff(totals)
    return bool(np.all(diffs >= -1e-12 * max(map(abs, totals))))


def random_params(seed):
    rng = stream(seed, "bound-sweep")
    L = int(rng.integers(1, 4))
    u = lambda lo, hi: float(np.exp(rng.uniform(np.log(lo), np.log(hi))))  # noqa: E731
    return BoundParams(W=tuple(u(0.5, 3) for _ in range(L)), B=tuple(u(0.5, 3) for _ in range(L)),
                       z_norm=u(0.5, 5), x_sq_sum=u(1, 100), x_star=u(0.5, 3), d=8, m=16, K=4,
                       d_k=4, alpha1=u(0.05, 1), alpha2=u(0.05, 1), n=u(10, 1000),
                       N=u(100, 1e5), nu=0.05, tv=0.1)


def bound_sweep_violations(f, points: int = 20) -> list[tuple]:
    """One-coordinate 20-point sweeps of every norm cap, data norm, n and N
    around ``points`` random parameter sets; returns the non-monotone ones."""
    bad = []
    for seed in range(points):
        p = random_params(seed)
        for l in range(p.layers):
            for field in ("W", "B"):
                if not _sweep_ok(f, p, field, l):
                    bad.append((seed, field, l))
        for field in ("z_norm", "x_sq_sum", "x_star"):
            if not _sweep_ok(f, p, field):
                bad.append((seed, field))
        for field in ("n", "N"):
            if not _sweep_ok(f, p, field, increasing=False):
                bad.append((seed, field))
    return bad
