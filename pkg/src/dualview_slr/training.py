"""Training with SGD + early stopping, evaluation, and checkpoint files."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset

from .dataset import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    Manifest,
    SubsetSpec,
    load_clip,
)
from .errors import ConfigurationError, FormatError, NumericError
from .fusion import DualViewModel, build_dual_view_model
from .metrics import MetricsRow, PredictionSet, metrics_row
from .model import ModelConfig, SingleViewModel

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dualview-slr-checkpoint/1"
Model = Union[SingleViewModel, DualViewModel]


@dataclass
class TrainConfig:
    """Optimization settings.

    Batch size, loss, optimizer family and the 5-epoch patience follow the
    reference setup; learning rate, momentum and weight decay are our own
    defaults.
    """

    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")


@dataclass
class DataConfig:
    clip_len: int = 16
    stride: int = 5
    image_size: int = 256
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    cache: bool = False


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_top1: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def early_stop_decision(val_losses: Sequence[float], patience: int) -> tuple[bool, int]:
    """Stop once the minimum validation loss is older than ``patience`` epochs.

    Only a strictly lower loss counts as improvement, so a flat plateau
    stops ``patience`` epochs after it begins.

    >>> early_stop_decision([1.0, 0.9, 0.85, 0.86, 0.87, 0.88, 0.89, 0.90], 5)
    (True, 2)
    """
    if not val_losses:
        raise ValueError("val_losses must be non-empty")
    best = int(np.argmin(val_losses))
    return best < len(val_losses) - patience, best


# ----------------------------------------------------------------------------
# data


class ClipDataset(Dataset):
    """Clips of one split as ``({view: T x C x H x W}, class, key)`` triples."""

    def __init__(
        self,
        manifest: Manifest,
        split: str,
        subset: Optional[SubsetSpec] = None,
        views: Sequence[str] = ("front", "left"),
        data: Optional[DataConfig] = None,
    ):
        self.manifest = manifest
        self.data = data or DataConfig()
        self.views = tuple(views)
        records = manifest.split_records(split)
        if subset is not None:
            cls = subset.class_index()
            records = [r for r in records if r.gloss_id in cls]
        else:
            cls = {g: g for g in range(len(manifest.vocabulary))}
        self.class_index = cls
        self.records = records
        self._cache: dict = {}

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        if i in self._cache:
            return self._cache[i]
        rec = self.records[i]
        d = self.data
        clips = {
            v: torch.from_numpy(load_clip(self.manifest, rec, v, d.clip_len, d.stride, d.image_size, d.mean, d.std).frames)
            for v in self.views
        }
        item = (clips, self.class_index[rec.gloss_id], rec.key)
        if d.cache:
            self._cache[i] = item
        return item


def _collate(batch):
    clips = {v: torch.stack([b[0][v] for b in batch]) for v in batch[0][0]}
    labels = torch.tensor([b[1] for b in batch], dtype=torch.long)
    return clips, labels, [b[2] for b in batch]


def _loader(ds: Dataset, batch_size: int, shuffle: bool, seed: int = 0) -> DataLoader:
    gen = torch.Generator().manual_seed(seed)
    return DataLoader(ds, batch_size=batch_size, shuffle=shuffle, generator=gen, collate_fn=_collate)


def forward_batch(model: Model, clips: dict) -> torch.Tensor:
    if isinstance(model, SingleViewModel):
        return model(clips[model.view])
    return model(clips["front"], clips["left"])


# ----------------------------------------------------------------------------
# training


def _run_epoch(model, loader, optimizer, epoch) -> float:
    model.train()
    total, n = 0.0, 0
    for b, (clips, labels, _) in enumerate(loader):
        optimizer.zero_grad()
        loss = nn.functional.cross_entropy(forward_batch(model, clips), labels)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
        loss.backward()
        optimizer.step()
        total += loss.item() * len(labels)
        n += len(labels)
    return total / n


@torch.no_grad()
def _validate(model, loader) -> tuple[float, float]:
    model.eval()
    total, correct, n = 0.0, 0, 0
    for clips, labels, _ in loader:
        logits = forward_batch(model, clips)
        total += nn.functional.cross_entropy(logits, labels, reduction="sum").item()
        correct += (logits.argmax(-1) == labels).sum().item()
        n += len(labels)
    return total / n, correct / n


def fit(model: Model, train_set: Dataset, val_set: Optional[Dataset], config: TrainConfig) -> TrainHistory:
    """Mini-batch SGD on cross-entropy; restores the lowest-val-loss weights.

    Without a validation set the training loss stands in for it.
    """
    if len(train_set) == 0:
        raise ValueError("empty training split")
    if isinstance(model, DualViewModel) and model.mode == "plus":
        raise ConfigurationError("plus-mode bundles are trained one view at a time; use train()")
    torch.manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum, weight_decay=config.weight_decay)
    train_loader = _loader(train_set, config.batch_size, True, config.seed)
    val_loader = _loader(val_set, config.batch_size, False) if val_set is not None and len(val_set) else None

    hist = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(config.max_epochs):
        tl = _run_epoch(model, train_loader, opt, epoch)
        if val_loader is not None:
            vl, vacc = _validate(model, val_loader)
        else:
            vl, vacc = _validate(model, _loader(train_set, config.batch_size, False))
        if not math.isfinite(vl):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        hist.train_loss.append(tl)
        hist.val_loss.append(vl)
        hist.val_top1.append(vacc)
        stop, best = early_stop_decision(hist.val_loss, config.patience)
        if best == epoch:
            best_state = copy.deepcopy(model.state_dict())
        hist.best_epoch, hist.stopped_epoch = best, epoch
        log.info("epoch %d train_loss %.4f val_loss %.4f val_top1 %.3f", epoch, tl, vl, vacc)
        if stop:
            break
    model.load_state_dict(best_state)
    return hist


def train(
    model: Model,
    manifest: Manifest,
    subset: Optional[SubsetSpec],
    config: TrainConfig,
    data: Optional[DataConfig] = None,
):
    """Train on the manifest's ``train`` split, early-stopping on ``val``.

    Returns ``(model, history)``; for a plus-mode bundle the history is a
    ``{"front": ..., "left": ...}`` dict and each view model sees only its
    own view's clips.
    """
    has_val = "val" in manifest.splits and len(manifest.splits["val"]) > 0
    if isinstance(model, DualViewModel) and model.mode == "plus":
        hists = {}
        for view in ("front", "left"):
            sub = model.single_view(view)
            tr = ClipDataset(manifest, "train", subset, (view,), data)
            va = ClipDataset(manifest, "val", subset, (view,), data) if has_val else None
            hists[view] = fit(sub, tr, va, config)
        return model, hists
    tr = ClipDataset(manifest, "train", subset, model.views, data)
    va = ClipDataset(manifest, "val", subset, model.views, data) if has_val else None
    return model, fit(model, tr, va, config)


# ----------------------------------------------------------------------------
# evaluation


@torch.no_grad()
def predict(model: Model, dataset: Dataset, batch_size: int = 32) -> dict:
    """Scores for every sample of ``dataset``.

    Returns ``keys``, ``labels`` and ``scores``; plus-mode bundles also give
    the per-view raw logits under ``front`` and ``left``.
    """
    model.eval()
    keys, labels, scores = [], [], []
    per_view = {"front": [], "left": []}
    is_plus = isinstance(model, DualViewModel) and model.mode == "plus"
    for clips, y, k in _loader(dataset, batch_size, False):
        if is_plus:
            logits = model.view_logits(clips["front"], clips["left"])
            for v in per_view:
                per_view[v].append(logits[v])
            from .fusion import plus_fuse

            scores.append(plus_fuse(logits["front"], logits["left"], model.config.plus_combine))
        else:
            scores.append(forward_batch(model, clips))
        keys.extend(k)
        labels.append(y)
    out = {"keys": keys, "labels": torch.cat(labels).numpy(), "scores": torch.cat(scores).numpy()}
    if is_plus:
        out.update({v: torch.cat(t).numpy() for v, t in per_view.items()})
    return out


def view_mode_of(model: Model) -> str:
    return model.view if isinstance(model, SingleViewModel) else "dual"


def evaluate(
    model: Model,
    manifest: Manifest,
    split: str = "test",
    subset: Optional[SubsetSpec] = None,
    ks=(1, 5, 10),
    data: Optional[DataConfig] = None,
    dataset_name: str = "",
    method: Optional[str] = None,
    return_predictions: bool = False,
):
    ds = ClipDataset(manifest, split, subset, model.views, data)
    if len(ds) == 0:
        raise ValueError(f"split {split!r} is empty")
    out = predict(model, ds)
    preds = PredictionSet.from_scores(out["scores"], out["labels"], out["keys"])
    if method is None:
        method = model.mode if isinstance(model, DualViewModel) else "cnn-transformer"
    name = dataset_name or (subset.name if subset is not None else "dataset")
    row = metrics_row(preds, name, view_mode_of(model), method, ks)
    return (row, out) if return_predictions else row


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, extra: Optional[dict] = None) -> None:
    """Self-describing archive: format tag, model config, kind/mode/view, weights."""
    if isinstance(model, SingleViewModel):
        meta = {"kind": "single", "view": model.view}
    else:
        meta = {"kind": "dual", "mode": model.mode}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "num_classes": model.config.num_classes,
        **meta,
        "extra": extra or {},
        "state_dict": model.state_dict(),
    }
    tmp = Path(str(path) + ".partial")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[Model, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    config = ModelConfig.from_dict(copy.deepcopy(payload["config"]))
    if payload["kind"] == "single":
        model: Model = SingleViewModel(config, payload["view"])
    else:
        model = build_dual_view_model(payload["mode"], config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})


def combine_plus(front: SingleViewModel, left: SingleViewModel) -> DualViewModel:
    """Plus-mode bundle from two independently trained single-view models."""
    if (front.view, left.view) != ("front", "left"):
        raise ConfigurationError("plus fusion needs a front-view and a left-view model")
    if front.config.num_classes != left.config.num_classes:
        raise ConfigurationError("the two view models predict different class counts")
    return DualViewModel(
        "plus",
        front.config,
        backbones={"front": front.backbone, "left": left.backbone},
        encoders={"front": front.encoder, "left": left.encoder},
        heads={"front": front.head, "left": left.head},
    )
