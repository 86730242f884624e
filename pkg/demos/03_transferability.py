"""Representation transferability on a planted linear family: a reference
encoder h*(x) = P x and a perturbed one ĥ(x) = (P + tE) x.  For each t the
probe measures the downstream excess-risk gap Δ^ft and the pre-training gap
Δ^pt, and compares Δ^ft / sqrt(Δ^pt) with the ceiling implied by the Schur
complement Λ of the two representations' second moments.  For tiny t the measured Δ^ft
can be slightly negative: both heads come from the same finite GD fit, and the
perturbed features sometimes happen to fit these labels a little better.

    python demos/03_transferability.py
"""

import numpy as np

from pretrainlab.bounds import transferability_probe
from pretrainlab.rng import stream

rng = stream(0, "demo-transfer")
n, d, p, q = 300, 8, 4, 6
x = rng.standard_normal((n, d))
P = rng.standard_normal((p, d)) / np.sqrt(d)
E = rng.standard_normal((p, d)) / np.sqrt(d)
W = rng.standard_normal((q, p))
theta = rng.standard_normal(p)
y = np.where(x @ P.T @ theta > 0, 1.0, -1.0)
targets = x @ P.T @ W.T

print(f"{'t':>8} {'delta_ft':>10} {'delta_pt':>10} {'ratio':>8} {'ceiling':>8} {'‖Λ‖':>8}")
for t in np.geomspace(1e-3, 1.0, 10):
    Pt = P + t * E
    r = transferability_probe(lambda a, Pt=Pt: a @ Pt.T, lambda a: a @ P.T, x, y, 5.0,
                              targets=targets)
    print(f"{t:8.3g} {r.delta_ft:10.3g} {r.delta_pt:10.3g} {r.ratio:8.3g} {r.ceiling:8.3g} "
          f"{np.linalg.norm(r.lambda_schur):8.3g}")
