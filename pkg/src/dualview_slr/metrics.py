"""Top-k accuracy, metric rows, comparison reports and per-view score files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import torch

from .errors import AlignmentError, FormatError


def rank_classes(scores) -> np.ndarray:
    """Class ids by descending score; ties go to the lower class id."""
    s = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.broadcast_to(np.arange(s.shape[-1]), s.shape), -s), axis=-1)


@dataclass
class PredictionSet:
    labels: np.ndarray  # (N,)
    ranked: np.ndarray  # (N, V), each row a permutation of 0..V-1
    keys: Optional[list] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ranked = np.asarray(self.ranked, dtype=np.int64)
        if self.ranked.ndim != 2 or len(self.labels) != len(self.ranked):
            raise ValueError("ranked must be N x V and match the number of labels")
        V = self.ranked.shape[1]
        if not (np.sort(self.ranked, axis=1) == np.arange(V)).all():
            raise ValueError("every ranked row must be a permutation of the class ids")

    @classmethod
    def from_scores(cls, scores, labels, keys=None) -> "PredictionSet":
        return cls(labels, rank_classes(scores), keys)

    @property
    def num_classes(self) -> int:
        return self.ranked.shape[1]

    def __len__(self) -> int:
        return len(self.labels)


def top_k_accuracy(preds: PredictionSet, k: int) -> float:
    """Fraction of samples whose label is among the first ``k`` ranked classes."""
    if len(preds) == 0:
        raise ValueError("top-k accuracy needs at least one sample")
    if not 1 <= k <= preds.num_classes:
        raise ValueError(f"k={k} must lie in [1, {preds.num_classes}]")
    hits = (preds.ranked[:, :k] == preds.labels[:, None]).any(axis=1)
    return float(hits.mean())


@dataclass
class MetricsRow:
    dataset: str
    view_mode: str
    method: str
    top1: float
    top5: float
    top10: float

    def __post_init__(self):
        if self.view_mode not in ("front", "left", "dual"):
            raise ValueError(f"view_mode must be front, left or dual, not {self.view_mode!r}")
        if not 0 <= self.top1 <= self.top5 <= self.top10 <= 100:
            raise ValueError(f"accuracies violate 0 <= top1 <= top5 <= top10 <= 100: {self}")

    @property
    def key(self) -> tuple[str, str, str]:
        return self.dataset, self.view_mode, self.method

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_row(preds: PredictionSet, dataset: str, view_mode: str, method: str, ks=(1, 5, 10)) -> MetricsRow:
    # k beyond V counts every sample as a hit
    acc = [100.0 * top_k_accuracy(preds, min(k, preds.num_classes)) for k in ks]
    return MetricsRow(dataset, view_mode, method, *acc)


def save_rows(rows: Iterable[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_rows(path) -> list[MetricsRow]:
    with open(path, encoding="utf-8") as fh:
        return [MetricsRow(**json.loads(line)) for line in fh if line.strip()]


# ----------------------------------------------------------------------------
# report


def _d2(x: float) -> Decimal:
    return Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def improvements(rows: Sequence[MetricsRow], baselines: Optional[Mapping[str, str]] = None) -> dict:
    """Top-1 gain of each dual row over its front-view baseline, as 2-decimal ``Decimal``.

    The baseline is the front row with the same dataset and method, or the
    method named by ``baselines[dual_method]``, or the dataset's only front
    row when that is unambiguous.
    """
    baselines = baselines or {}
    front = {}
    for r in rows:
        if r.view_mode == "front":
            front.setdefault(r.dataset, {})[r.method] = r
    out = {}
    for r in rows:
        if r.view_mode != "dual" or r.dataset not in front:
            continue
        candidates = front[r.dataset]
        base = candidates.get(baselines.get(r.method, r.method))
        if base is None and len(candidates) == 1:
            base = next(iter(candidates.values()))
        if base is not None:
            out[r.key] = _d2(r.top1) - _d2(base.top1)
    return out


def render_report(rows: Sequence[MetricsRow], baselines: Optional[Mapping[str, str]] = None) -> tuple[str, dict]:
    """Aligned text table plus a JSON-ready dict with the same content.

    One column per (view, method); one line per (dataset, metric). When any
    dual row has a front baseline an ``improvement`` line is added per dataset.
    """
    seen = set()
    for r in rows:
        if r.key in seen:
            raise ValueError(f"duplicate report row {r.key}")
        seen.add(r.key)

    order = {"left": 0, "front": 1, "dual": 2}
    columns = sorted({(r.view_mode, r.method) for r in rows}, key=lambda c: (order[c[0]], c[1]))
    datasets = list(dict.fromkeys(r.dataset for r in rows))
    cell = {r.key: r for r in rows}
    deltas = improvements(rows, baselines)

    header = ["Dataset", "Metric"] + [f"{m} ({v})" for v, m in columns]
    lines = []
    for ds in datasets:
        for metric in ("top1", "top5", "top10"):
            vals = []
            for v, m in columns:
                r = cell.get((ds, v, m))
                vals.append(f"{getattr(r, metric):.2f}" if r else "-")
            lines.append([ds, metric.replace("top", "Top-")] + vals)
        if deltas:
            vals = []
            for v, m in columns:
                d = deltas.get((ds, v, m))
                vals.append(f"+{d}" if d is not None and d >= 0 else (str(d) if d is not None else ""))
            lines.append([ds, "improvement"] + vals)

    widths = [max(len(str(row[i])) for row in [header] + lines) for i in range(len(header))]
    fmt = lambda row: "  ".join(str(c).ljust(w) if i < 2 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    text = "\n".join([fmt(header), "  ".join("-" * w for w in widths)] + [fmt(l) for l in lines])

    data = {
        "rows": [r.to_dict() for r in rows],
        "improvements": [
            {"dataset": k[0], "method": k[2], "top1_improvement": f"{v}"} for k, v in deltas.items()
        ],
    }
    return text, data


# ----------------------------------------------------------------------------
# per-view score files


def save_scores(path, keys: Sequence[str], logits, labels: Optional[Sequence[int]] = None) -> None:
    """One JSON object per line: ``{"key": ..., "logits": [...]}`` (and ``label``)."""
    logits = np.asarray(torch.as_tensor(logits).detach().cpu().double())
    with open(path, "w", encoding="utf-8") as fh:
        for i, k in enumerate(keys):
            row = {"key": k, "logits": [float(x) for x in logits[i]]}
            if labels is not None:
                row["label"] = int(labels[i])
            fh.write(json.dumps(row) + "\n")


def load_scores(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "key" not in row or "logits" not in row:
                raise FormatError(f"{path}:{lineno}: score rows need 'key' and 'logits'")
            out[row["key"]] = np.asarray(row["logits"], dtype=np.float64)
    return out


def save_labels(path, keys: Sequence[str], labels: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, y in zip(keys, labels):
            fh.write(f"{k}\t{int(y)}\n")


def load_labels(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected '<key>\\t<class>'")
            out[parts[0]] = int(parts[1])
    return out


def fuse_and_evaluate(
    scores_front: Mapping[str, np.ndarray],
    scores_left: Mapping[str, np.ndarray],
    labels: Mapping[str, int],
    dataset: str = "",
    method: str = "plus",
    combine: str = "logit_sum",
) -> MetricsRow:
    """Plus fusion over stored per-view logits, then top-1/5/10."""
    from .fusion import plus_fuse

    kf, kl, ky = set(scores_front), set(scores_left), set(labels)
    if not (kf == kl == ky):
        missing = sorted((kf | kl | ky) - (kf & kl & ky))
        raise AlignmentError(f"score/label files cover different samples; mismatched keys: {missing[:20]}")
    keys = sorted(kf)
    front = torch.from_numpy(np.stack([scores_front[k] for k in keys]))
    left = torch.from_numpy(np.stack([scores_left[k] for k in keys]))
    probs = plus_fuse(front, left, combine).numpy()
    preds = PredictionSet.from_scores(probs, [labels[k] for k in keys], keys)
    return metrics_row(preds, dataset, "dual", method)
