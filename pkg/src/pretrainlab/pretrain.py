"""Pre-training and fine-tuning pipelines.

* :func:`apply_mask` builds the corrupted input ``z̃`` and the target ``y`` from
  raw data (coordinate masking for MLP encoders, patch masking for
  transformers).
* :func:`pretrain` runs (mini-batch) gradient descent on the reconstruction loss.
* :func:`finetune_linear` fits a norm-capped linear head on frozen
  representations by projected gradient descent on the logistic risk.
* :func:`endtoend_gd_experiment` runs both stages with plain GD, updating the
  encoder in the second stage too, and records how far every layer drifts
  from its Gaussian initialisation.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import DivergenceError, ValidationError
from .linalg import spectral_norm
from .models import (Composite, Encoder, LinearHead, check_labels, init_decoder,
                     init_mlp, logistic, loss_and_grads, represent)
from .rng import stream

__all__ = [
    "MaskTransform",
    "mask_matrix",
    "apply_mask",
    "TrainConfig",
    "PretrainResult",
    "pretrain",
    "batch_sampler",
    "FinetuneResult",
    "finetune_linear",
    "project_ball",
    "head_scores",
    "accuracy",
    "SampleSizeWarning",
    "check_sample_sizes",
    "EndToEndConfig",
    "DriftTrace",
    "endtoend_gd_experiment",
]


# ---------------------------------------------------------------------- masking

@dataclass(frozen=True)
class MaskTransform:
    mask_ratio: float
    seed: int = 0
    fill_value: float = 0.0
    granularity: Literal["coordinate", "patch"] = "coordinate"

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValidationError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.granularity not in ("coordinate", "patch"):
            raise ValidationError(f"unknown granularity {self.granularity!r}")


def _masked_count(ratio: float, units: int) -> int:
    return int(math.floor(ratio * units + 0.5))


def mask_matrix(shape: tuple[int, ...], t: MaskTransform) -> np.ndarray:
    """Boolean array of ``shape``; ``True`` marks masked entries.

    Every sample gets its own random subset of exactly
    ``round(mask_ratio * units)`` units, where a unit is a coordinate
    (``N×d`` data) or a whole patch (``N×K×d`` data).
    """
    if t.granularity == "coordinate":
        if len(shape) != 2:
            raise ValidationError(f"coordinate masking expects N×d data, got {shape}")
        n, units = shape
    else:
        if len(shape) != 3:
            raise ValidationError(f"patch masking expects N×K×d data, got {shape}")
        n, units = shape[0], shape[1]
    k = _masked_count(t.mask_ratio, units)
    rng = stream(t.seed, "mask")
    units_mask = np.zeros((n, units), dtype=bool)
    for i in range(n):
        units_mask[i, rng.permutation(units)[:k]] = True
    if t.granularity == "patch":
        return np.broadcast_to(units_mask[:, :, None], shape).copy()
    return units_mask


def apply_mask(x, t: MaskTransform) -> tuple[np.ndarray, np.ndarray]:
    """``(z̃, y)``: masked copy of ``x`` and the full original as target."""
    x = np.asarray(x, dtype=np.float64)
    mask = mask_matrix(x.shape, t)
    return np.where(mask, t.fill_value, x), x.copy()


# --------------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    iterations: int
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    loss_kind: Literal["mse", "logistic"] = "mse"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.iterations < 0:
            raise ValidationError(f"iterations must be non-negative, got {self.iterations}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")


def batch_sampler(n: int, batch_size: int | None, seed: int, purpose: str = "batches"):
    """Yields index arrays; ``None`` means the full batch (no randomness used)."""
    if batch_size is None or batch_size >= n:
        while True:
            yield None
    rng = stream(seed, purpose)
    while True:
        yield rng.choice(n, size=batch_size, replace=False)


def _take(a, idx):
    return a if idx is None or a is None else a[idx]


@dataclass
class PretrainResult:
    model: Composite
    losses: np.ndarray  # full-data loss at iterates 0..T


def _finite(loss: float, grads: dict[str, np.ndarray]) -> bool:
    return math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())


def pretrain(model: Composite, inputs, targets, cfg: TrainConfig,
             loss_mask=None) -> PretrainResult:
    """Gradient descent on the batch-mean reconstruction loss.

    Full batch when ``cfg.batch_size`` is ``None``; otherwise minibatches
    sampled without replacement from the ``"batches"`` stream of ``cfg.seed``.
    The returned trace holds the full-data loss at every iterate.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n < 1:
        raise ValidationError("pretraining needs at least one sample")
    batches = batch_sampler(n, cfg.batch_size, cfg.seed)
    params = dict(model.params())
    losses = []
    last = math.nan
    for t in range(cfg.iterations + 1):
        current = model.with_params(params)
        idx = next(batches) if t < cfg.iterations else None
        full, g_full = loss_and_grads(current, inputs, targets, cfg.loss_kind, loss_mask)
        if not _finite(full, g_full if idx is None else {}):
            raise DivergenceError("pretraining diverged", t, last,
                                  state=np.array(losses))
        losses.append(full)
        last = full
        if t == cfg.iterations:
            break
        if idx is None:
            grads = g_full
        else:
            _, grads = loss_and_grads(current, inputs[idx], targets[idx], cfg.loss_kind,
                                      _take(loss_mask, idx))
            if not _finite(0.0, grads):
                raise DivergenceError("pretraining gradient not finite", t, last,
                                      state=np.array(losses))
        params = {k: v - cfg.learning_rate * grads[k] for k, v in params.items()}
    return PretrainResult(model.with_params(params), np.array(losses))


# -------------------------------------------------------------------- fine-tune

def project_ball(theta: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(theta))
    return theta * (radius / nrm) if nrm > radius else theta


def head_scores(reps: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return reps @ theta


def _risk_and_grad(reps: np.ndarray, y: np.ndarray, theta: np.ndarray):
    n = reps.shape[0]
    f = reps @ theta
    if theta.ndim == 1:
        z = y * f
        risk = float(np.mean(logistic(z)))
        # d/dz log(1+e^{-z}) = -1/(1+e^{z})
        dz = -np.exp(-np.logaddexp(0.0, z))
        return risk, reps.T @ (dz * y) / n
    # multinomial logistic (softmax cross-entropy) on one-hot labels
    lse = np.logaddexp.reduce(f, axis=1)
    risk = float(np.mean(lse - np.sum(f * y, axis=1)))
    p = np.exp(f - lse[:, None])
    return risk, reps.T @ (p - y) / n


def accuracy(reps: np.ndarray, y: np.ndarray, theta: np.ndarray) -> float:
    """Sign rule for binary heads (a zero score counts as −1), argmax otherwise."""
    f = reps @ theta
    if theta.ndim == 1:
        return float(np.mean(np.where(f > 0, 1.0, -1.0) == y))
    return float(np.mean(np.argmax(f, axis=1) == np.argmax(y, axis=1)))


def _labels(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = check_labels(y)
    elif y.ndim == 2:
        if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
            raise ValidationError("multiclass labels must be one-hot rows")
    else:
        raise ValidationError(f"labels must be a vector or a one-hot matrix, got {y.shape}")
    if y.shape[0] != n:
        raise ValidationError(f"{n} samples but {y.shape[0]} labels")
    return y


@dataclass
class FinetuneResult:
    head: LinearHead
    train_risk: np.ndarray
    train_acc: np.ndarray
    test_risk: np.ndarray | None = None
    test_acc: np.ndarray | None = None


def finetune_linear(encoder: Encoder, x, y, cfg: TrainConfig, radius: float,
                    x_test=None, y_test=None) -> FinetuneResult:
    """Projected GD on the logistic risk of a linear head over frozen features.

    Starts from the zero head; every step is followed by projection onto the
    Euclidean (Frobenius for multiclass) ball of the given radius.  Traces
    have one entry per iterate ``0..T``.
    """
    if not radius > 0:
        raise ValidationError(f"head radius must be positive, got {radius}")
    reps = represent(encoder, x)
    y = _labels(y, reps.shape[0])
    if reps.shape[0] < 1:
        raise ValidationError("fine-tuning needs at least one sample")
    test = None
    if x_test is not None:
        rt = represent(encoder, x_test)
        test = (rt, _labels(y_test, rt.shape[0]))
    theta = np.zeros(reps.shape[1] if y.ndim == 1 else (reps.shape[1], y.shape[1]))
    batches = batch_sampler(reps.shape[0], cfg.batch_size, cfg.seed)
    tr_risk, tr_acc, te_risk, te_acc = [], [], [], []
    for t in range(cfg.iterations + 1):
        risk, g = _risk_and_grad(reps, y, theta)
        if not math.isfinite(risk):
            raise DivergenceError("fine-tuning diverged", t,
                                  tr_risk[-1] if tr_risk else math.nan)
        tr_risk.append(risk)
        tr_acc.append(accuracy(reps, y, theta))
        if test is not None:
            te_risk.append(_risk_and_grad(test[0], test[1], theta)[0])
            te_acc.append(accuracy(test[0], test[1], theta))
        if t == cfg.iterations:
            break
        idx = next(batches)
        if idx is not None:
            _, g = _risk_and_grad(reps[idx], y[idx], theta)
        theta = project_ball(theta - cfg.learning_rate * g, radius)
    return FinetuneResult(
        LinearHead(theta, radius), np.array(tr_risk), np.array(tr_acc),
        np.array(te_risk) if test is not None else None,
        np.array(te_acc) if test is not None else None)


# ----------------------------------------------------------- end-to-end GD run

class SampleSizeWarning(UserWarning):
    pass


def check_sample_sizes(N: int, n: int, L: int) -> bool:
    """Warn when ``N < n^{3/2} L^{2/3}``; returns whether the condition holds."""
    need = n ** 1.5 * L ** (2.0 / 3.0)
    if N < need:
        warnings.warn(
            f"N={N} pre-training samples is below n^1.5 L^(2/3) = {need:.1f} "
            f"for n={n}, L={L}", SampleSizeWarning, stacklevel=2)
        return False
    return True


@dataclass(frozen=True)
class EndToEndConfig:
    d: int = 10
    m: int = 256
    L: int = 2
    N: int = 50
    n: int = 10
    pretrain_iterations: int = 50
    finetune_iterations: int = 50
    eta: float | None = None  # default eta_mult * d / m
    gamma: float | None = None  # default gamma_mult / (m L^3)
    eta_mult: float = 1.0
    gamma_mult: float = 1.0
    head_step: float = 1.0
    mask_ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.m, self.L, self.N, self.n) < 1:
            raise ValidationError("dimensions and sample counts must be positive")
        if self.pretrain_iterations < 0 or self.finetune_iterations < 0:
            raise ValidationError("iteration counts must be non-negative")

    @property
    def eta_value(self) -> float:
        return self.eta if self.eta is not None else self.eta_mult * self.d / self.m

    @property
    def gamma_value(self) -> float:
        return (self.gamma if self.gamma is not None
                else self.gamma_mult / (self.m * self.L ** 3))


@dataclass
class DriftTrace:
    """Distances from initialisation, one entry per global iterate.

    Iterates ``0..T_pre`` belong to pre-training, ``T_pre..T_pre+T_ft`` to
    fine-tuning (iterate ``T_pre`` is shared).  Encoder layers are tracked over
    the whole run, the decoder during pre-training and the head ``Θ`` during
    fine-tuning.
    """

    pretrain_iterations: int
    finetune_iterations: int
    drift_fro: dict[str, np.ndarray] = field(default_factory=dict)
    drift_spec: dict[str, np.ndarray] = field(default_factory=dict)
    pretrain_loss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    finetune_loss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    first_grad_fro: dict[str, float] = field(default_factory=dict)

    def layer_iterations(self, name: str) -> np.ndarray:
        if name.startswith("W"):
            return np.arange(self.pretrain_iterations + self.finetune_iterations + 1)
        if name == "decoder":
            return np.arange(self.pretrain_iterations + 1)
        return np.arange(self.finetune_iterations + 1) + self.pretrain_iterations

    def write_csv(self, path, stage: Literal["pretrain", "finetune"]) -> None:
        """Rows ``iteration,layer,drift_fro,drift_spec,loss`` for one stage.

        The pre-training file lists the encoder layers and the decoder, the
        fine-tuning file the encoder layers and the head; both include the
        shared boundary iterate.
        """
        t0, t1 = ((0, self.pretrain_iterations) if stage == "pretrain" else
                  (self.pretrain_iterations,
                   self.pretrain_iterations + self.finetune_iterations))
        loss = self.pretrain_loss if stage == "pretrain" else self.finetune_loss
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "layer", "drift_fro", "drift_spec", "loss"])
            for t in range(t0, t1 + 1):
                for name in self.drift_fro:
                    if name == ("head" if stage == "pretrain" else "decoder"):
                        continue
                    its = self.layer_iterations(name)
                    if not its[0] <= t <= its[-1]:
                        continue
                    k = t - its[0]
                    w.writerow([t, name, repr(float(self.drift_fro[name][k])),
                                repr(float(self.drift_spec[name][k])),
                                repr(float(loss[t - t0]))])


@dataclass
class EndToEndReport:
    config: EndToEndConfig
    trace: DriftTrace
    eta: float
    gamma: float
    failed_at: int | None = None


def _e2e_data(cfg: EndToEndConfig):
    from .synth import gen_synth

    task = gen_synth(cfg.N, cfg.n, cfg.d, c1_target=0.1, c2_target=0.1, seed=cfg.seed)
    def unit(a):
        return a / np.linalg.norm(a, axis=1, keepdims=True)
    return unit(task.pretrain_raw), unit(task.downstream_x), task.downstream_y


def endtoend_gd_experiment(cfg: EndToEndConfig, data=None) -> EndToEndReport:
    """Two-stage plain-GD run with distance-from-initialisation tracking.

    Stage 1: reconstruction GD on all of ``W_1..W_L`` and the linear decoder
    ``W_{L+1}`` with step ``η``.  Stage 2: encoder layers keep moving with
    step ``γ`` while a fresh Gaussian ``Θ`` (``m×m``) is trained with step
    ``head_step`` under the logistic loss of ``ŷ = uᵀ relu(Θ h(x))``, where ``u``
    is fixed to ``+1`` on its first half and ``−1`` on the rest.

    ``data`` may supply ``(pretrain_x, downstream_x, downstream_y)``; inputs
    are normalised to unit rows by the default generator.  On divergence the
    traces up to the failing iterate are returned with ``failed_at`` set.
    """
    check_sample_sizes(cfg.N, cfg.n, cfg.L)
    xp, xd, yd = data if data is not None else _e2e_data(cfg)
    yd = check_labels(yd)
    eta, gamma = cfg.eta_value, cfg.gamma_value
    init = stream(cfg.seed, "init")
    enc = init_mlp(cfg.d, cfg.m, cfg.L, init)
    dec = init_decoder(cfg.d, cfg.m, cfg.m, init)
    theta0 = init.standard_normal((cfg.m, cfg.m)) * math.sqrt(2.0 / cfg.m)
    u = np.where(np.arange(cfg.m) < cfg.m // 2, 1.0, -1.0)
    z_tilde, target = apply_mask(xp, MaskTransform(cfg.mask_ratio, seed=cfg.seed))

    names = [f"W{l + 1}" for l in range(cfg.L)]
    w0 = {nm: w.copy() for nm, w in zip(names, enc.layers)}
    w0["decoder"] = dec.w.copy()
    w0["head"] = theta0
    trace = DriftTrace(cfg.pretrain_iterations, cfg.finetune_iterations)
    fro = {k: [0.0] for k in w0}
    spec = {k: [0.0] for k in w0}

    def record(current: dict[str, np.ndarray], keys):
        for k in keys:
            diff = current[k] - w0[k]
            fro[k].append(float(np.linalg.norm(diff)))
            spec[k].append(spectral_norm(diff, tol=1e-10) if np.any(diff) else 0.0)

    def finish(failed_at=None):
        trace.drift_fro = {k: np.array(v) for k, v in fro.items()}
        trace.drift_spec = {k: np.array(v) for k, v in spec.items()}
        trace.pretrain_loss = np.array(pre_loss)
        trace.finetune_loss = np.array(ft_loss)
        return EndToEndReport(cfg, trace, eta, gamma, failed_at)

    # stage 1
    model = Composite(enc, dec)
    params = {f"enc.{k}": v for k, v in zip(names, enc.layers)} | {"dec.W": dec.w}
    pre_loss: list[float] = []
    ft_loss: list[float] = []
    for t in range(cfg.pretrain_iterations + 1):
        loss, grads = loss_and_grads(model.with_params(params), z_tilde, target, "mse")
        if not _finite(loss, grads):
            return finish(failed_at=t)
        pre_loss.append(loss)
        if t == cfg.pretrain_iterations:
            break
        if t == 0:
            trace.first_grad_fro = {nm: float(np.linalg.norm(grads[f"enc.{nm}"]))
                                    for nm in names}
            trace.first_grad_fro["decoder"] = float(np.linalg.norm(grads["dec.W"]))
        params = {k: v - eta * grads[k] for k, v in params.items()}
        record({nm: params[f"enc.{nm}"] for nm in names} | {"decoder": params["dec.W"]},
               names + ["decoder"])

    # stage 2
    ws = [params[f"enc.{nm}"] for nm in names]
    theta = theta0.copy()
    for t in range(cfg.finetune_iterations + 1):
        loss, g_ws, g_theta = _head_loss_grads(ws, theta, u, xd, yd)
        if not (math.isfinite(loss) and np.all(np.isfinite(g_theta))
                and all(np.all(np.isfinite(g)) for g in g_ws)):
            return finish(failed_at=cfg.pretrain_iterations + t)
        ft_loss.append(loss)
        if t == cfg.finetune_iterations:
            break
        ws = [w - gamma * g for w, g in zip(ws, g_ws)]
        theta = theta - cfg.head_step * g_theta
        record(dict(zip(names, ws)) | {"head": theta}, names + ["head"])
    return finish()


def _head_loss_grads(ws, theta, u, x, y):
    """Logistic loss of ``uᵀ relu(Θ h(x))`` and its gradients (by hand)."""
    n = x.shape[0]
    hs = [x]
    pre = []
    for w in ws:
        a = hs[-1] @ w.T
        pre.append(a)
        hs.append(np.maximum(a, 0.0))
    s = hs[-1] @ theta.T
    out = np.maximum(s, 0.0) @ u
    z = y * out
    loss = float(np.mean(logistic(z)))
    dout = -np.exp(-np.logaddexp(0.0, z)) * y / n
    ds = np.outer(dout, u) * (s > 0)
    g_theta = ds.T @ hs[-1]
    dh = ds @ theta
    g_ws = [None] * len(ws)
    for l in range(len(ws) - 1, -1, -1):
        da = dh * (pre[l] > 0)
        g_ws[l] = da.T @ hs[l]
        dh = da @ ws[l]
    return loss, g_ws, g_theta
