"""
Monte Carlo comparison of the observers and the detector
========================================================

Repeat the attacked trial over many seeded sub-streams and summarize the
mean squared error and the MMD statistic against its threshold. Pass the
number of trials as the first argument (100 reproduces the full setting and
takes under a minute).
"""

# %%
import sys
from pathlib import Path

import numpy as np

from quadobs import ExperimentConfig, export_csv, export_svg, run_experiment

M = int(sys.argv[1]) if len(sys.argv) > 1 else 20
out = Path(sys.argv[2] if len(sys.argv) > 2 else "notebook_out")
cfg = ExperimentConfig(M=M, output_dir=str(out))
report, logs = run_experiment(cfg)

# %%
# Per-step means with standard errors across trials.
print(" k   MSE lin (se)            MSE quad (se)           MMD      thr      rate")
for r in report.rows():
    k, lm, ls, qm, qs, sm, _, tm, _, rate = r
    print(f"{int(k):2d}  {lm:9.3e} ({ls:8.1e})  {qm:9.3e} ({qs:8.1e})  "
          f"{sm:7.4f}  {tm:7.4f}  {rate:5.2f}")

# %%
# Summary numbers around the onset.
onset = cfg.game.attack.onset
pre, post = report.k < onset, report.k >= onset + 2
print("pre-attack mean MSE   linear %.3e  quadratic %.3e"
      % (report.mse_L_mean[pre].mean(), report.mse_Q_mean[pre].mean()))
print("post-attack mean MSE  linear %.3e  quadratic %.3e"
      % (report.mse_L_mean[post].mean(), report.mse_Q_mean[post].mean()))
above = report.k[np.nan_to_num(report.mmd_mean) > np.nan_to_num(report.thr_mean, nan=np.inf)]
print("first step where the mean statistic exceeds the mean threshold:",
      int(above[0]) if above.size else None)
print("projection steps:", report.metadata["projection_events"],
      " flagged failures:", report.metadata["projection_failures"])

# %%
for f in export_csv(report, out) + [export_svg(report, "mse", out / "mse.svg"),
                                    export_svg(report, "mmd", out / "mmd.svg")]:
    print("wrote", f)
