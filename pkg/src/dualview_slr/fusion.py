"""Early, late and plus fusion of the front and left views."""

from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from .errors import ConfigurationError, NumericError, ShapeError
from .model import (
    ModelConfig,
    SequenceEncoder,
    SingleViewModel,
    build_backbone,
    build_head,
    encode_sequence,
    extract_spatial_features,
    pool_and_classify,
)

MODES = ("early", "late", "plus")


def fusion_projection(d_in: int, d_out: int) -> nn.Linear:
    """Linear map from concatenated ``2*d_in`` features to ``d_out``; zero bias."""
    proj = nn.Linear(2 * d_in, d_out)
    nn.init.zeros_(proj.bias)
    return proj


def _concat_project(a: torch.Tensor, b: torch.Tensor, proj: nn.Module) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot fuse views of shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return proj(torch.cat([a, b], dim=-1))


def early_fuse(p_front: torch.Tensor, p_left: torch.Tensor, proj: nn.Module) -> torch.Tensor:
    """Framewise ``proj(concat(p_front[t], p_left[t]))`` of spatial features."""
    return _concat_project(p_front, p_left, proj)


def late_fuse(t_front: torch.Tensor, t_left: torch.Tensor, proj: nn.Module) -> torch.Tensor:
    """Framewise ``proj(concat(t_front[t], t_left[t]))`` of encoder outputs."""
    return _concat_project(t_front, t_left, proj)


def plus_fuse(scores_front: torch.Tensor, scores_left: torch.Tensor, combine: str = "logit_sum") -> torch.Tensor:
    """Combine two views' raw logits into class probabilities.

    ``logit_sum`` (default) is ``softmax(front + left)``; ``prob_mean``
    averages the per-view softmax distributions instead.
    """
    scores_front = torch.as_tensor(scores_front)
    scores_left = torch.as_tensor(scores_left)
    if scores_front.shape != scores_left.shape:
        raise ShapeError(f"logit shapes differ: {tuple(scores_front.shape)} vs {tuple(scores_left.shape)}")
    if not (torch.isfinite(scores_front).all() and torch.isfinite(scores_left).all()):
        raise NumericError("plus fusion received non-finite logits")
    if combine == "logit_sum":
        return torch.softmax(scores_front + scores_left, dim=-1)
    if combine == "prob_mean":
        return 0.5 * (torch.softmax(scores_front, dim=-1) + torch.softmax(scores_left, dim=-1))
    raise ConfigurationError(f"unknown plus-fusion combine rule {combine!r}")


_REQUIRED = {
    # mode: (encoder keys, needs projection, head keys)
    "early": ({"early"}, True, {"early"}),
    "late": ({"front", "left"}, True, {"late"}),
    "plus": ({"front", "left"}, False, {"front", "left"}),
}


class DualViewModel(nn.Module):
    """Both views' backbones plus the mode-specific encoders, projection and heads.

    The component set is checked against ``mode`` at construction; use
    :func:`build_dual_view_model` to assemble a fresh one from a config.
    """

    def __init__(
        self,
        mode: str,
        config: ModelConfig,
        backbones: dict,
        encoders: dict,
        heads: dict,
        projection: Optional[nn.Module] = None,
    ):
        super().__init__()
        if mode not in _REQUIRED:
            raise ConfigurationError(f"unknown fusion mode {mode!r}")
        enc_keys, needs_proj, head_keys = _REQUIRED[mode]
        if set(backbones) != {"front", "left"}:
            raise ConfigurationError(f"{mode} fusion needs front and left backbones, got {sorted(backbones)}")
        if set(encoders) != enc_keys:
            raise ConfigurationError(f"{mode} fusion needs encoders {sorted(enc_keys)}, got {sorted(encoders)}")
        if set(heads) != head_keys:
            raise ConfigurationError(f"{mode} fusion needs heads {sorted(head_keys)}, got {sorted(heads)}")
        if needs_proj != (projection is not None):
            raise ConfigurationError(
                f"{mode} fusion {'requires' if needs_proj else 'must not have'} a fusion projection"
            )
        if config.share_backbones and backbones["front"] is not backbones["left"]:
            raise ConfigurationError("share_backbones is set but the two backbones are distinct modules")
        self.mode = mode
        self.config = config
        self.backbones = nn.ModuleDict(backbones)
        self.encoders = nn.ModuleDict(encoders)
        self.heads = nn.ModuleDict(heads)
        self.projection = projection

    @property
    def views(self) -> tuple[str, ...]:
        return ("front", "left")

    def single_view(self, view: str) -> SingleViewModel:
        """The complete per-view model of plus mode (shares parameters)."""
        if self.mode != "plus":
            raise ConfigurationError("only plus-mode bundles decompose into single-view models")
        return SingleViewModel(
            self.config, view, self.backbones[view], self.encoders[view], self.heads[view]
        )

    def view_logits(self, clip_front: torch.Tensor, clip_left: torch.Tensor) -> dict:
        return {
            "front": self.single_view("front")(clip_front),
            "left": self.single_view("left")(clip_left),
        }

    def forward(self, clip_front: torch.Tensor, clip_left: torch.Tensor) -> torch.Tensor:
        if self.mode == "early":
            return forward_early(clip_front, clip_left, self)
        if self.mode == "late":
            return forward_late(clip_front, clip_left, self)
        return forward_plus(clip_front, clip_left, self)

    def train(self, mode: bool = True):
        super().train(mode)
        for bb in self.backbones.values():
            if getattr(bb, "frozen", False):
                bb.eval()
        return self


def build_dual_view_model(mode: str, config: ModelConfig) -> DualViewModel:
    front = build_backbone(config.backbone)
    left = front if config.share_backbones else build_backbone(config.backbone)
    backbones = {"front": front, "left": left}
    d_s, d = config.backbone.feature_dim, config.encoder.embed_dim
    V, hidden = config.num_classes, config.head_hidden
    if mode == "early":
        return DualViewModel(
            mode, config, backbones,
            encoders={"early": SequenceEncoder(config.encoder, config.fusion_dim)},
            heads={"early": build_head(d, V, hidden)},
            projection=fusion_projection(d_s, config.fusion_dim),
        )
    if mode == "late":
        return DualViewModel(
            mode, config, backbones,
            encoders={v: SequenceEncoder(config.encoder, d_s) for v in ("front", "left")},
            heads={"late": build_head(config.fusion_dim, V, hidden)},
            projection=fusion_projection(d, config.fusion_dim),
        )
    if mode == "plus":
        return DualViewModel(
            mode, config, backbones,
            encoders={v: SequenceEncoder(config.encoder, d_s) for v in ("front", "left")},
            heads={v: build_head(d, V, hidden) for v in ("front", "left")},
        )
    raise ConfigurationError(f"unknown fusion mode {mode!r}")


def forward_early(clip_front, clip_left, bundle: DualViewModel) -> torch.Tensor:
    if bundle.mode != "early":
        raise ConfigurationError(f"forward_early called on a {bundle.mode!r} bundle")
    p_front = extract_spatial_features(clip_front, bundle.backbones["front"])
    p_left = extract_spatial_features(clip_left, bundle.backbones["left"])
    v_early = early_fuse(p_front, p_left, bundle.projection)
    return pool_and_classify(encode_sequence(v_early, bundle.encoders["early"]), bundle.heads["early"])


def forward_late(clip_front, clip_left, bundle: DualViewModel) -> torch.Tensor:
    if bundle.mode != "late":
        raise ConfigurationError(f"forward_late called on a {bundle.mode!r} bundle")
    t_front = encode_sequence(extract_spatial_features(clip_front, bundle.backbones["front"]), bundle.encoders["front"])
    t_left = encode_sequence(extract_spatial_features(clip_left, bundle.backbones["left"]), bundle.encoders["left"])
    # no encoder after the fusion: the fused sequence is pooled directly
    return pool_and_classify(late_fuse(t_front, t_left, bundle.projection), bundle.heads["late"])


def forward_plus(clip_front, clip_left, bundle: DualViewModel) -> torch.Tensor:
    """Normalized class probabilities from the two independent view models."""
    logits = bundle.view_logits(clip_front, clip_left)
    return plus_fuse(logits["front"], logits["left"], bundle.config.plus_combine)
