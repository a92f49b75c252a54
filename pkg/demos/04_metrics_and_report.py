"""Top-k accuracy and the comparison table.

Scores are ranked with ties broken by the lower class id. The report adds
an improvement line for every dual-view row that has a front-view baseline.
"""

import numpy as np

from dualview_slr import MetricsRow, PredictionSet, render_report, top_k_accuracy

scores = np.array([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0], [0.3, 0.3, 0.4]])
labels = [1, 1, 0]
preds = PredictionSet.from_scores(scores, labels)
for k in (1, 2, 3):
    print(f"top-{k}: {top_k_accuracy(preds, k):.3f}")

# published CNN-transformer results, (top-1, top-5, top-10)
front = {"NationalCSL200": (76.50, 93.00, 97.00), "NationalCSL500": (76.60, 92.80, 94.40),
         "NationalCSL1000": (72.80, 90.10, 93.50), "NationalCSL2000": (73.25, 88.50, 92.40),
         "NationalCSL6707": (64.34, 83.66, 88.41)}
dual = {"NationalCSL200": (85.50, 98.00, 98.00), "NationalCSL500": (84.00, 94.20, 96.60),
        "NationalCSL1000": (80.70, 93.80, 96.80), "NationalCSL2000": (79.30, 92.85, 95.45),
        "NationalCSL6707": (69.61, 88.92, 92.93)}
rows = []
for name in front:
    rows.append(MetricsRow(name, "front", "CNN-Transformer", *front[name]))
    rows.append(MetricsRow(name, "dual", "CNN-Transformer", *dual[name]))
text, data = render_report(rows)
print(text)
print(data["improvements"][0])
