"""Single view versus fusion on the synthetic occlusion set.

Trains front, left, early and late models with one shared budget, builds the
plus model from the front and left models, and prints the comparison table.
Expect 10-30 minutes on one CPU core.
"""

import logging
import sys

from dualview_slr.experiment import DeskExperiment, report_rows, run_desk_experiment
from dualview_slr.metrics import render_report

logging.basicConfig(level=logging.INFO, format="%(message)s")

workdir = sys.argv[1] if len(sys.argv) > 1 else "desk_experiment"
result = run_desk_experiment(DeskExperiment(), workdir)
text, _ = render_report(report_rows(result), baselines={m: "cnn-transformer" for m in ("early", "late", "plus")})
print(text)
print(f"front-view top-1 on occlusion-pair classes: {result.front_paired_top1:.2f}")
print(f"total time: {result.seconds / 60:.1f} min")
