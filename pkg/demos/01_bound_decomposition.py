"""How the generalisation bound splits into its four terms, and how each term
moves as the labelled sample (n) and the unlabelled pre-training sample (N)
grow.

    python demos/01_bound_decomposition.py
"""

import dataclasses

from pretrainlab.bounds import BoundParams, ce_bound, mae_bound

base = BoundParams(W=(1.2, 1.1), B=(1.5, 1.5), z_norm=3.0, x_sq_sum=50.0, x_star=2.0,
                   d=16, m=32, K=4, d_k=4, alpha1=0.3, alpha2=0.3, n=100, N=10_000,
                   nu=0.05, tv=0.05)

print(f"{'model':5} {'n':>7} {'N':>9} {'complexity':>11} {'pretrain':>10} "
      f"{'confidence':>11} {'tv':>7} {'total':>9}")
for name, f in (("ce", ce_bound), ("mae", mae_bound)):
    for n, N in ((100, 10_000), (1_000, 10_000), (100, 1_000_000), (1_000, 1_000_000)):
        d = f(dataclasses.replace(base, n=n, N=N))
        print(f"{name:5} {n:7d} {N:9d} {d.complexity:11.4g} {d.pretrain:10.4g} "
              f"{d.confidence:11.4g} {d.tv:7.3g} {d.total:9.4g}")

print("\nMore unlabelled data shrinks only the pre-training term; more labelled "
      "data shrinks the complexity and confidence terms.")
