"""
Desk-scale trends: local period, cluster count, cluster-level skew
==================================================================

Three small sweeps on the synthetic logistic testbed (64 devices, 8 edge
servers on a ring).  Lower final loss after a fixed number of global
rounds means faster per-round convergence.  Takes about a minute.
"""

import tempfile
from pathlib import Path

from cfel.experiment import load_config, run_sweep

cfg = load_config(preset="desk-logistic")
seeds = [0, 1, 2, 3, 4]

with tempfile.TemporaryDirectory() as tmp:
    for axis in ("tau_fixed_qtau", "m", "partition"):
        print(axis)
        for row in run_sweep(cfg, axis, Path(tmp), seeds):
            print(f"  {row['cell']:22s} loss {row['mean_final_loss']:.4f} +- {row['se_final_loss']:.4f}"
                  f"  accuracy {row['mean_final_accuracy']:.3f}")

# Expected: tau=2 < tau=4 < tau=8, m=4 < m=8 < m=16, cluster-IID < cluster-non-IID.
