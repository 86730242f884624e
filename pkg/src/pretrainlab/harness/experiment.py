"""Single-run pipeline pieces and the three-way regulariser comparison.

One run for a training seed ``s`` proceeds as follows.

1. Mask the pre-training inputs and the downstream inputs. Each uses its own
   seed derived from ``s``.
2. Initialise encoder and decoder from the ``"init"`` stream of ``s``.
3. Pre-train by SGDA. The objective is the reconstruction loss, plus ``α``
   times the reconstruction loss on the masked downstream inputs, plus the
   variant's regulariser:
   * ``none``: nothing.
   * ``l2``: ``λ Σ‖W_l‖_F²`` over encoder weights.
   * ``radreg``: the Rademacher term over the downstream inputs.
4. Estimate the representation-induced Rademacher complexity of the
   pre-trained encoder on the downstream inputs. Fresh signs are drawn for
   this, and the radius used is the dual radius.
5. Fine-tune a linear head by projected GD and score it on the held-out set.

Every variant shares the task, the seeds and the architecture.  The task is
generated from the configuration's top-level seed, or read from
``task.path``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NumericalError, ValidationError
from ..models import Composite, init_decoder, init_mlp, init_transformer
from ..minimax import AuxLoss, RadRegConfig, RadRegResult, radreg_train
from ..pretrain import FinetuneResult, MaskTransform, TrainConfig, apply_mask, \
    finetune_linear, mask_matrix
from ..rademacher import estimate_complexity, sample_rademacher
from ..rng import derive_seed, stream
from ..synth import SynthTask, gen_synth
from .config import VARIANTS, RunConfig
from .persist import load_task

__all__ = [
    "REPORT_HEADER",
    "build_task",
    "init_model",
    "PretrainData",
    "prepare_data",
    "variant_lambda",
    "run_pretrain",
    "run_finetune",
    "VariantRow",
    "ComparisonReport",
    "run_comparison",
    "format_report",
    "parse_report",
]

REPORT_HEADER = ["variant", "lambda", "final_acc", "best_acc", "train_acc", "rad_est"]


def build_task(cfg: RunConfig) -> SynthTask:
    t = cfg.task
    if t.path:
        return load_task(t.path)
    return gen_synth(t.N, t.n, t.d, K=t.K, c1_target=t.c1, c2_target=t.c2,
                     label_rule=t.label_rule, seed=cfg.seed, margin=t.margin,
                     n_test=t.n_test, num_classes=t.num_classes, L=cfg.model.L)


def init_model(cfg: RunConfig, task: SynthTask, seed: int) -> Composite:
    mc = cfg.model
    rng = stream(seed, "init")
    d = task.pretrain_raw.shape[-1]
    if mc.kind == "ce":
        if task.pretrain_raw.ndim != 2:
            raise ValidationError("the MLP encoder needs unpatched (K = 1) data")
        enc = init_mlp(d, mc.m, mc.L, rng)
    else:
        enc = init_transformer(task.patch_count, d, mc.d_k, mc.m, mc.L, mc.alpha1,
                               mc.alpha2, rng)
    return Composite(enc, init_decoder(d, enc.out_dim, mc.m, rng))


@dataclass(frozen=True)
class PretrainData:
    inputs: np.ndarray
    targets: np.ndarray
    loss_mask: np.ndarray | None
    aux_inputs: np.ndarray
    aux_targets: np.ndarray
    aux_mask: np.ndarray | None


def _masked(x: np.ndarray, cfg: RunConfig, seed: int):
    gran = "coordinate" if x.ndim == 2 else "patch"
    t = MaskTransform(cfg.pretrain.mask_ratio, seed=seed, fill_value=cfg.pretrain.fill_value,
                      granularity=gran)
    z, y = apply_mask(x, t)
    return z, y, (mask_matrix(x.shape, t) if cfg.pretrain.masked_only else None)


def prepare_data(cfg: RunConfig, task: SynthTask, seed: int) -> PretrainData:
    z, y, m = _masked(task.pretrain_raw, cfg, derive_seed(seed, "pretrain-mask"))
    za, ya, ma = _masked(task.downstream_x, cfg, derive_seed(seed, "aux-mask"))
    return PretrainData(z, y, m, za, ya, ma)


def variant_lambda(cfg: RunConfig, variant: str) -> float:
    if variant == "none":
        return 0.0
    return cfg.experiment.l2_lambda if variant == "l2" else cfg.experiment.radreg_lambda


def run_pretrain(cfg: RunConfig, task: SynthTask, seed: int, variant: str,
                 lam: float) -> RadRegResult:
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    data = prepare_data(cfg, task, seed)
    reg, pc = cfg.regularizer, cfg.pretrain
    rc = RadRegConfig(pc.learning_rate, reg.dual_step, pc.iterations,
                      batch_size=pc.batch_size or None,
                      down_batch_size=reg.down_batch_size or None, seed=seed,
                      radius=reg.radius, project=reg.project,
                      probe_every=reg.probe_every or None)
    aux = AuxLoss(data.aux_inputs, data.aux_targets, reg.alpha, data.aux_mask)
    return radreg_train(init_model(cfg, task, seed), data.inputs, data.targets,
                        task.downstream_x, lam if variant == "radreg" else 0.0, reg.B, rc,
                        loss_mask=data.loss_mask, aux=aux,
                        l2=lam if variant == "l2" else 0.0)


def rad_estimate(cfg: RunConfig, task: SynthTask, model: Composite, seed: int) -> float:
    y = task.downstream_y
    o = 1 if y.ndim == 1 else y.shape[1]
    rb = sample_rademacher(cfg.experiment.rad_est_B, task.downstream_x.shape[0], o,
                           derive_seed(seed, "rad-est"))
    return estimate_complexity(model.encoder, task.downstream_x, rb, cfg.regularizer.radius).mean


def run_finetune(cfg: RunConfig, task: SynthTask, model: Composite, seed: int) -> FinetuneResult:
    fc = cfg.finetune
    tc = TrainConfig(fc.learning_rate, fc.iterations, fc.batch_size or None, seed=seed,
                     loss_kind="logistic")
    return finetune_linear(model.encoder, task.downstream_x, task.downstream_y, tc, fc.radius,
                           task.test_x, task.test_y)


@dataclass(frozen=True)
class VariantRow:
    variant: str
    lam: float
    seed: int
    final_acc: float
    best_acc: float
    train_acc: float
    rad_est: float
    error: str = ""


@dataclass
class ComparisonReport:
    rows: list[VariantRow] = field(default_factory=list)
    runs: dict = field(default_factory=dict)  # (variant, seed) -> (RadRegResult, FinetuneResult)

    def summary(self) -> list[tuple[str, float, list[float]]]:
        """``(label, lambda, [final, best, train, rad])`` mean and std per variant."""
        out = []
        for v in dict.fromkeys(r.variant for r in self.rows):
            rows = [r for r in self.rows if r.variant == v]
            cols = np.array([[r.final_acc, r.best_acc, r.train_acc, r.rad_est] for r in rows])
            means, stds = [], []
            for c in cols.T:
                ok = c[np.isfinite(c)]
                means.append(float(np.mean(ok)) if ok.size else math.nan)
                stds.append(float(np.std(ok, ddof=1)) if ok.size > 1 else math.nan)
            out.append((f"mean:{v}", rows[0].lam, means))
            out.append((f"std:{v}", rows[0].lam, stds))
        return out


def run_comparison(cfg: RunConfig, task: SynthTask | None = None,
                   keep_runs: bool = False) -> ComparisonReport:
    """Every configured variant over every configured seed.

    A numerical failure in one run is recorded as a row of NaNs (with the
    message in ``error``) and the remaining runs carry on.
    """
    task = task if task is not None else build_task(cfg)
    if task.test_x is None:
        raise ValidationError("the comparison needs a held-out set (task.n_test > 0)")
    report = ComparisonReport()
    for variant in cfg.experiment.variants:
        lam = variant_lambda(cfg, variant)
        for seed in cfg.experiment.seeds:
            try:
                pre = run_pretrain(cfg, task, seed, variant, lam)
                rad = rad_estimate(cfg, task, pre.model, seed)
                ft = run_finetune(cfg, task, pre.model, seed)
            except NumericalError as exc:
                nan = math.nan
                report.rows.append(VariantRow(variant, lam, seed, nan, nan, nan, nan, str(exc)))
                continue
            report.rows.append(VariantRow(
                variant, lam, seed, float(ft.test_acc[-1]), float(np.max(ft.test_acc)),
                float(ft.train_acc[-1]), float(rad)))
            if keep_runs:
                report.runs[(variant, seed)] = (pre, ft)
    return report


def format_report(report: ComparisonReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in report.rows:
        w.writerow([r.variant, repr(r.lam), repr(r.final_acc), repr(r.best_acc),
                    repr(r.train_acc), repr(r.rad_est)])
    for label, lam, vals in report.summary():
        w.writerow([label, repr(lam)] + [repr(v) for v in vals])
    return buf.getvalue()


def write_report(path, report: ComparisonReport) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8", newline="\n")


def parse_report(text: str) -> list[tuple[str, list[float]]]:
    """Rows of a comparison CSV as ``(label, [lambda, final, best, train, rad])``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != REPORT_HEADER:
        raise ValidationError("not a comparison report (header mismatch)")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(REPORT_HEADER):
            raise ValidationError(f"line {i}: expected {len(REPORT_HEADER)} fields")
        try:
            out.append((row[0], [float(v) for v in row[1:]]))
        except ValueError:
            raise ValidationError(f"line {i}: non-numeric field") from None
    return out
