"""Synthetic pre-training / downstream tasks with controlled separation.

Points are standard Gaussian vectors (``d`` dims, or ``K`` i.i.d. patches of
``d`` dims).  Each new candidate is kept only if it is at least the target
distance from every point kept so far.  After ``10 N`` rejections the
remaining points are drawn without the constraint and the whole set is scaled
up until the minimum pairwise distance reaches the target; if that would
take more than ``max_rescale`` the request is refused.

Downstream labels come from a planted linear rule ``sign(w*ᵀ x̄)`` (``x̄`` is
the patch sum), with candidates closer than ``margin`` to the decision
boundary thrown away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ValidationError
from .pretrain import check_sample_sizes
from .rng import stream

__all__ = ["SynthTask", "gen_synth", "min_pairwise_distance", "aggregate", "planted_labels"]


@dataclass(frozen=True)
class SynthTask:
    pretrain_raw: np.ndarray  # N×d or N×K×d
    downstream_x: np.ndarray  # n×d or n×K×d
    downstream_y: np.ndarray  # ±1 vector, or one-hot rows
    c1: float
    c2: float
    seed: int
    w_star: np.ndarray  # d (binary) or o×d (multiclass)
    test_x: np.ndarray | None = None
    test_y: np.ndarray | None = None

    @property
    def patch_count(self) -> int:
        return 1 if self.pretrain_raw.ndim == 2 else self.pretrain_raw.shape[1]


def min_pairwise_distance(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(x.shape[0], -1)
    return float(pdist(flat).min()) if flat.shape[0] > 1 else math.inf


def aggregate(x: np.ndarray) -> np.ndarray:
    return x if x.ndim == 2 else x.sum(axis=1)


def planted_labels(x: np.ndarray, w_star: np.ndarray) -> np.ndarray:
    s = aggregate(x) @ w_star.T
    if w_star.ndim == 1:
        return np.where(s > 0, 1.0, -1.0)
    return np.eye(w_star.shape[0])[np.argmax(s, axis=1)]


def _margin(xbar: np.ndarray, w_star: np.ndarray) -> float:
    s = w_star @ xbar
    if w_star.ndim == 1:
        return abs(float(s))
    top = np.sort(s)[-2:]
    return float(top[1] - top[0])


def _separated(rng, count: int, shape: tuple, target: float, accept, max_rescale: float,
               what: str) -> np.ndarray:
    dim = int(np.prod(shape))
    pts: list[np.ndarray] = []
    rejections = 0
    budget = 10 * count
    while len(pts) < count:
        c = rng.standard_normal(dim)
        if not accept(c):
            continue
        if rejections <= budget and pts:
            if np.min(np.linalg.norm(np.asarray(pts) - c, axis=1)) < target:
                rejections += 1
                continue
        pts.append(c)
    arr = np.asarray(pts)
    dmin = min_pairwise_distance(arr)
    if dmin < target:
        factor = target / dmin if dmin > 0 else math.inf
        if factor > max_rescale:
            raise ValidationError(
                f"cannot separate {count} {what} points by {target} in {dim} dimensions "
                f"(would need a {factor:.3g}x rescale); use fewer points or a larger d")
        arr = arr * factor
        # guard against rounding just below the target
        while min_pairwise_distance(arr) < target:
            arr = arr * (1 + 1e-12)
    return arr.reshape((count,) + shape)


def gen_synth(N: int, n: int, d: int, K: int = 1, c1_target: float = 1.0,
              c2_target: float = 1.0, label_rule: str = "linear", seed: int = 0,
              margin: float = 0.1, n_test: int = 0, num_classes: int = 2,
              L: int | None = None, max_rescale: float = 10.0) -> SynthTask:
    """Generate a separated task; see the module docstring for the recipe.

    ``label_rule`` is ``"linear"`` (binary ±1 labels) or ``"multiclass"``
    (one-hot over ``num_classes`` via ``argmax W* x̄``, margin measured between
    the two best scores).  ``n_test`` extra labelled points (no separation
    constraint) are drawn for held-out evaluation.
    """
    if N < 2 or n < 2:
        raise ValidationError("need N, n >= 2")
    if d < 1 or K < 1:
        raise ValidationError("need d, K >= 1")
    if not (c1_target > 0 and c2_target > 0):
        raise ValidationError("separation targets must be positive")
    if margin < 0:
        raise ValidationError("margin must be non-negative")
    if label_rule not in ("linear", "multiclass"):
        raise ValidationError(f"unknown label rule {label_rule!r}")
    if L is not None:
        check_sample_sizes(N, n, L)

    shape = (d,) if K == 1 else (K, d)
    w_rng = stream(seed, "planted")
    if label_rule == "linear":
        w_star = w_rng.standard_normal(d)
        w_star /= np.linalg.norm(w_star)
    else:
        if num_classes < 2:
            raise ValidationError("multiclass rule needs num_classes >= 2")
        w_star = w_rng.standard_normal((num_classes, d))
        w_star /= np.linalg.norm(w_star, axis=1, keepdims=True)

    def xbar(c):
        return c if K == 1 else c.reshape(K, d).sum(axis=0)

    tries = [0]

    def with_margin(c):
        tries[0] += 1
        if tries[0] > 1000 * (n + n_test) + 1000:
            raise ValidationError(f"margin {margin} rejects almost every point")
        return _margin(xbar(c), w_star) >= margin

    pre = _separated(stream(seed, "pretrain-points"), N, shape, c1_target,
                     lambda c: True, max_rescale, "pre-training")
    down = _separated(stream(seed, "downstream-points"), n, shape, c2_target,
                      with_margin, max_rescale, "downstream")
    test_x = test_y = None
    if n_test:
        trng = stream(seed, "test-points")
        rows = []
        while len(rows) < n_test:
            c = trng.standard_normal(int(np.prod(shape)))
            if with_margin(c):
                rows.append(c)
        test_x = np.asarray(rows).reshape((n_test,) + shape)
        test_y = planted_labels(test_x, w_star)
    return SynthTask(pre, down, planted_labels(down, w_star),
                     min_pairwise_distance(pre), min_pairwise_distance(down), seed,
                     w_star, test_x, test_y)
