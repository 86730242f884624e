"""Two-stage plain gradient descent on a wide ReLU network: reconstruction
pre-training, then fine-tuning a fresh head while the encoder keeps moving
slowly.  Prints how far each layer travels from its initialisation and writes
the per-iteration traces as CSV.

    python demos/04_endtoend_drift.py [out_dir]
"""

import sys
import warnings
from pathlib import Path

from pretrainlab.pretrain import EndToEndConfig, endtoend_gd_experiment

out = Path(sys.argv[1] if len(sys.argv) > 1 else "e2e_out")
out.mkdir(parents=True, exist_ok=True)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # N=50 is just below n^1.5 L^(2/3) here
    rep = endtoend_gd_experiment(EndToEndConfig())
tr = rep.trace
print(f"eta = {rep.eta}, gamma = {rep.gamma}")
print(f"pre-training loss {tr.pretrain_loss[0]:.4f} -> {tr.pretrain_loss[-1]:.4f}")
print(f"fine-tuning loss  {tr.finetune_loss[0]:.4f} -> {tr.finetune_loss[-1]:.2e}")
for name, drift in tr.drift_fro.items():
    print(f"  {name:8} ‖W - W(0)‖_F = {drift[-1]:.4f}   spectral {tr.drift_spec[name][-1]:.4f}")
tr.write_csv(out / "drift_pretrain.csv", "pretrain")
tr.write_csv(out / "drift_finetune.csv", "finetune")
print(f"traces written to {out}/")
