"""``pretrainlab`` command line.

Subcommands: ``gen-data``, ``pretrain``, ``radreg``, ``finetune``,
``experiment``, ``bounds`` and ``verify``.  Exit status is 0 on success, 1 for
invalid input (bad flags, bad config, impossible requests) and 2 for
numerical failures or unreadable weight containers.  Every command that takes
``--out`` writes ``manifest.json`` there: the effective configuration, the
seeds and the library versions.  The manifest has no timestamps, so the same
configuration and seed reproduce every output byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..bounds import BoundParams, ce_bound, mae_bound
from ..checks import run_suite
from ..errors import ContainerFormatError, NumericalError, ValidationError
from .config import VARIANTS, RunConfig, config_to_dict, load_config
from .experiment import (build_task, rad_estimate, run_comparison, run_finetune,
                         run_pretrain, write_report)
from .persist import load_model, load_task, save_model, save_task

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed out of the u64 range: {text}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text}")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pretrainlab", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", type=Path, help="TOML configuration file")
        sp.add_argument("--seed", type=_u64, help="override the top-level seed")
        sp.add_argument("--out", type=Path, required=out_required, help="output directory")

    def regularizer(sp, variant=True):
        if variant:
            sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--lambda", dest="lam", type=_nonneg_float)
        sp.add_argument("--B", dest="B", type=_pos_int, help="Rademacher configurations")
        sp.add_argument("--masked-only", action="store_true",
                        help="reconstruction loss on masked entries only")
        sp.add_argument("--no-project", action="store_true",
                        help="skip the dual-ball projection in SGDA")

    sp = sub.add_parser("gen-data", help="generate a synthetic task")
    common(sp)
    sp = sub.add_parser("pretrain", help="pre-train with the configured regulariser")
    common(sp)
    regularizer(sp)
    sp = sub.add_parser("radreg", help="pre-train with the Rademacher regulariser")
    common(sp)
    regularizer(sp, variant=False)
    sp = sub.add_parser("finetune", help="fine-tune a head on a pre-trained encoder")
    common(sp)
    sp = sub.add_parser("experiment", help="compare none / l2 / radreg over seeds")
    common(sp)
    regularizer(sp)
    sp = sub.add_parser("bounds", help="print the generalisation bound decomposition")
    common(sp, out_required=False)
    sp.add_argument("--rho-variant", choices=("appendix", "main"))
    sp = sub.add_parser("verify", help="run the randomised property suite")
    sp.add_argument("--seed", type=_u64, default=0)
    sp.add_argument("--draws", type=_pos_int, default=100)
    return p


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variant", None):
        cfg.regularizer.variant = args.variant
        cfg.experiment.variants = [args.variant]
    if getattr(args, "lam", None) is not None:
        cfg.regularizer.lam = args.lam
        cfg.experiment.l2_lambda = cfg.experiment.radreg_lambda = args.lam
    if getattr(args, "B", None) is not None:
        cfg.regularizer.B = args.B
    if getattr(args, "masked_only", False):
        cfg.pretrain.masked_only = True
    if getattr(args, "no_project", False):
        cfg.regularizer.project = False
    if getattr(args, "rho_variant", None):
        cfg.bounds.rho_variant = args.rho_variant
    return cfg.check()


def _versions() -> dict:
    return {"pretrainlab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_manifest(out: Path, command: str, cfg: RunConfig, seeds: list[int],
                    outputs: list[str]) -> None:
    manifest = {"command": command, "config": config_to_dict(cfg), "seeds": seeds,
                "versions": _versions(), "outputs": sorted(outputs)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _task(cfg: RunConfig, out: Path):
    """The configured task, or the one ``gen-data`` left in ``out``."""
    if not cfg.task.path and (out / "task.ptw").exists():
        return load_task(out / "task.ptw")
    return build_task(cfg)


def _cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _prepare_out(args.out)
    task = build_task(cfg)
    save_task(out / "task.ptw", task)
    _write_manifest(out, "gen-data", cfg, [cfg.seed], ["task.ptw"])
    print(f"task: N={task.pretrain_raw.shape[0]} n={task.downstream_x.shape[0]} "
          f"c1={task.c1:.4g} c2={task.c2:.4g} -> {out / 'task.ptw'}")
    return 0


def _cmd_pretrain(args, cfg: RunConfig, variant: str) -> int:
    out = _prepare_out(args.out)
    task = _task(cfg, out)
    lam = cfg.regularizer.lam if variant != "none" else 0.0
    res = run_pretrain(cfg, task, cfg.seed, variant, lam)
    save_model(out / "model.ptw", res.model)
    res.state.write_csv(out / "pretrain_trace.csv")
    rad = rad_estimate(cfg, task, res.model, cfg.seed)
    summary = {"variant": variant, "lambda": lam, "final_loss": res.state.loss[-1]
               if res.state.loss else None, "rad_est": rad,
               "sampled_iterate": res.state.sampled_index}
    (out / "pretrain_summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                               encoding="utf-8")
    _write_manifest(out, args.command, cfg, [cfg.seed],
                    ["model.ptw", "pretrain_trace.csv", "pretrain_summary.json"])
    print(json.dumps(summary))
    return 0


def _cmd_finetune(args, cfg: RunConfig) -> int:
    out = _prepare_out(args.out)
    path = out / "model.ptw"
    if not path.exists():
        raise ValidationError(f"{path} not found; run pretrain with the same --out first")
    model = load_model(path)
    task = _task(cfg, out)
    ft = run_finetune(cfg, task, model, cfg.seed)
    save_model(out / "finetuned.ptw", dataclasses.replace(model, head=ft.head))
    with open(out / "finetune_trace.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,train_risk,train_acc,test_risk,test_acc\n")
        for t in range(len(ft.train_risk)):
            te = ((repr(float(ft.test_risk[t])), repr(float(ft.test_acc[t])))
                  if ft.test_risk is not None else ("", ""))
            fh.write(f"{t},{ft.train_risk[t]!r},{ft.train_acc[t]!r},{te[0]},{te[1]}\n")
    _write_manifest(out, "finetune", cfg, [cfg.seed], ["finetune_trace.csv", "finetuned.ptw"])
    summary = {"train_acc": float(ft.train_acc[-1]), "train_risk": float(ft.train_risk[-1])}
    if ft.test_acc is not None:
        summary |= {"final_acc": float(ft.test_acc[-1]), "best_acc": float(max(ft.test_acc))}
    print(json.dumps(summary))
    return 0


def _cmd_experiment(args, cfg: RunConfig) -> int:
    out = _prepare_out(args.out)
    task = _task(cfg, out)
    report = run_comparison(cfg, task)
    write_report(out / "comparison.csv", report)
    outputs = ["comparison.csv"]
    failures = [r for r in report.rows if r.error]
    if failures:
        lines = [f"{r.variant} seed {r.seed}: {r.error}" for r in failures]
        (out / "failures.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append("failures.txt")
    _write_manifest(out, "experiment", cfg, list(cfg.experiment.seeds), outputs)
    sys.stdout.write((out / "comparison.csv").read_text(encoding="utf-8"))
    for r in failures:
        print(f"warning: {r.variant} seed {r.seed} failed: {r.error}", file=sys.stderr)
    return 0


def _cmd_bounds(args, cfg: RunConfig) -> int:
    b = dataclasses.asdict(cfg.bounds)
    kind = b.pop("kind")
    params = BoundParams(**b)
    result = {}
    if kind in ("ce", "both"):
        result["ce"] = ce_bound(params).as_dict()
    if kind in ("mae", "both"):
        result["mae"] = mae_bound(params).as_dict()
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        out = _prepare_out(args.out)
        (out / "bounds.json").write_text(text, encoding="utf-8")
        _write_manifest(out, "bounds", cfg, [cfg.seed], ["bounds.json"])
    return 0


def _cmd_verify(args) -> int:
    results = run_suite(seed=args.seed, draws=args.draws)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok  " if r.ok else "FAIL"
        print(f"{status} {r.name:<{width}}  {r.passed}/{r.total} passed")
    passed = sum(r.ok for r in results)
    print(f"{passed}/{len(results)} checks passed")
    return 0 if passed == len(results) else 2


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        cfg = _effective_config(args)
        if args.command == "gen-data":
            return _cmd_gen_data(args, cfg)
        if args.command == "pretrain":
            return _cmd_pretrain(args, cfg, cfg.regularizer.variant)
        if args.command == "radreg":
            return _cmd_pretrain(args, cfg, "radreg")
        if args.command == "finetune":
            return _cmd_finetune(args, cfg)
        if args.command == "experiment":
            return _cmd_experiment(args, cfg)
        return _cmd_bounds(args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ContainerFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
