"""Single-view CNN-transformer: framewise backbone, sequence encoder, pooled head."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .errors import ConfigurationError, NumericError, ShapeError


@dataclass
class SpatialBackboneConfig:
    """Framewise feature extractor.

    ``architecture`` is ``"resnet34"`` (the reference, 512-d output),
    ``"resnet18"``, or ``"small"``, a compact residual network whose output
    width is ``feature_dim`` and which suits desk-scale experiments.
    """

    architecture: str = "resnet34"
    pretrained: bool = False
    feature_dim: int = 512
    frozen: bool = False
    in_channels: int = 3

    def __post_init__(self):
        if self.architecture in ("resnet34", "resnet18") and self.feature_dim != 512:
            raise ConfigurationError(f"{self.architecture} produces 512-d features, not {self.feature_dim}")
        if self.architecture not in ("resnet34", "resnet18", "small"):
            raise ConfigurationError(f"unknown backbone architecture {self.architecture!r}")


@dataclass
class EncoderConfig:
    num_layers: int = 4
    num_heads: int = 8
    embed_dim: int = 512
    feedforward_dim: int = 2048
    dropout: float = 0.1
    positional_encoding: str = "sinusoidal"
    max_len: int = 256

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.positional_encoding not in ("sinusoidal", "learned", "none"):
            raise ConfigurationError(f"unknown positional encoding {self.positional_encoding!r}")


@dataclass
class ModelConfig:
    backbone: SpatialBackboneConfig = dataclasses.field(default_factory=SpatialBackboneConfig)
    encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    num_classes: int = 200
    head_hidden: Optional[int] = None
    fusion_dim: int = 512
    share_backbones: bool = False
    plus_combine: str = "logit_sum"

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = SpatialBackboneConfig(**self.backbone)
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.num_classes <= 0:
            raise ConfigurationError("num_classes must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


# ----------------------------------------------------------------------------
# spatial backbone


class _ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.norm1 = nn.GroupNorm(1, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.norm2 = nn.GroupNorm(1, cout)
        self.act = nn.ReLU()
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.GroupNorm(1, cout))

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.act(out + (x if self.skip is None else self.skip(x)))


class SmallResNet(nn.Module):
    """Three-stage residual CNN for small frames.

    Stage widths are ``feature_dim/4, feature_dim/2, feature_dim``. The last
    map is pooled to a ``grid x grid`` layout and linearly projected, so the
    feature keeps coarse spatial position. GroupNorm keeps frames independent.
    """

    def __init__(self, feature_dim: int = 64, in_channels: int = 3, grid: int = 4):
        super().__init__()
        w = [max(feature_dim // 4, 1), max(feature_dim // 2, 1), feature_dim]
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, w[0], 3, 2, 1, bias=False), nn.GroupNorm(1, w[0]), nn.ReLU()
        )
        self.stages = nn.Sequential(
            _ResidualBlock(w[0], w[0], 1), _ResidualBlock(w[0], w[1], 2), _ResidualBlock(w[1], w[2], 2)
        )
        self.pool = nn.AdaptiveAvgPool2d(grid)
        self.proj = nn.Linear(w[2] * grid * grid, feature_dim)

    def forward(self, x):
        return self.proj(self.pool(self.stages(self.stem(x))).flatten(1))


def build_backbone(cfg: SpatialBackboneConfig) -> nn.Module:
    if cfg.architecture == "small":
        if cfg.pretrained:
            raise ConfigurationError("no pretrained weights exist for the small backbone")
        net = SmallResNet(cfg.feature_dim, cfg.in_channels)
    else:
        import torchvision

        ctor = getattr(torchvision.models, cfg.architecture)
        weights = "DEFAULT" if cfg.pretrained else None
        net = ctor(weights=weights)
        net.fc = nn.Identity()
    if cfg.frozen:
        for p in net.parameters():
            p.requires_grad_(False)
    net.feature_dim = cfg.feature_dim
    net.frozen = cfg.frozen
    return net


def extract_spatial_features(clip: torch.Tensor, backbone: nn.Module) -> torch.Tensor:
    """Apply the backbone to every frame independently.

    ``clip`` is ``T x C x H x W`` or batched ``B x T x C x H x W``; the result
    is ``T x d_s`` or ``B x T x d_s``.
    """
    clip = torch.as_tensor(clip)
    if clip.dim() not in (4, 5):
        raise ShapeError(f"expected a (B,) T x C x H x W clip, got shape {tuple(clip.shape)}")
    lead = clip.shape[:-3]
    frames = clip.reshape(-1, *clip.shape[-3:])
    try:
        feats = backbone(frames)
    except RuntimeError as exc:
        raise ConfigurationError(f"clip shape {tuple(clip.shape)} does not fit the backbone: {exc}") from exc
    return feats.reshape(*lead, feats.shape[-1])


# ----------------------------------------------------------------------------
# sequence encoder


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.float()


class EncoderLayer(nn.Module):
    # pre-norm: with zeroed attention/feedforward output weights the layer is the identity
    def __init__(self, d: int, heads: int, ff: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, dropout=dropout, batch_first=True)
        self.drop1 = nn.Dropout(dropout)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff), nn.GELU(), nn.Dropout(dropout), nn.Linear(ff, d))
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x, return_attention: bool = False):
        h = self.norm1(x)
        a, weights = self.attn(h, h, h, need_weights=return_attention, average_attn_weights=False)
        x = x + self.drop1(a)
        x = x + self.drop2(self.ff(self.norm2(x)))
        return (x, weights) if return_attention else x


class SequenceEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, input_dim: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.input_proj = nn.Identity() if input_dim == d else nn.Linear(input_dim, d)
        self.input_dim = input_dim
        if cfg.positional_encoding == "sinusoidal":
            self.register_buffer("pos", sinusoidal_encoding(cfg.max_len, d), persistent=False)
        elif cfg.positional_encoding == "learned":
            self.pos = nn.Parameter(torch.randn(cfg.max_len, d) * 0.02)
        else:
            self.pos = None
        self.layers = nn.ModuleList(
            EncoderLayer(d, cfg.num_heads, cfg.feedforward_dim, cfg.dropout) for _ in range(cfg.num_layers)
        )

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        x = self.input_proj(x)
        if self.pos is not None:
            if x.shape[-2] > self.pos.shape[0]:
                raise ShapeError(f"sequence length {x.shape[-2]} exceeds max_len {self.pos.shape[0]}")
            x = x + self.pos[: x.shape[-2]].to(x.dtype)
        return x

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"encoder expects width {self.input_dim}, got {x.shape[-1]}")
        if not torch.isfinite(x).all():
            raise NumericError("non-finite values entering the sequence encoder")
        unbatched = x.dim() == 2
        if unbatched:
            x = x[None]
        x = self.embed(x)
        maps = []
        for layer in self.layers:
            if return_attention:
                x, w = layer(x, return_attention=True)
                maps.append(w[0] if unbatched else w)
            else:
                x = layer(x)
        x = x[0] if unbatched else x
        return (x, maps) if return_attention else x


def encode_sequence(features: torch.Tensor, encoder: SequenceEncoder) -> torch.Tensor:
    return encoder(features)


# ----------------------------------------------------------------------------
# head


def build_head(in_dim: int, num_classes: int, hidden: Optional[int] = None) -> nn.Module:
    if num_classes <= 0:
        raise ConfigurationError("head width V must be positive")
    if hidden:
        return nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, num_classes))
    return nn.Linear(in_dim, num_classes)


def pool_and_classify(seq: torch.Tensor, head: nn.Module) -> torch.Tensor:
    """Temporal mean over the ``T`` rows, then the head. Returns raw logits."""
    return head(seq.mean(dim=-2))


@dataclass
class ScoreVector:
    scores: torch.Tensor
    normalized: bool = False

    def __post_init__(self):
        if self.normalized:
            s = self.scores
            if (s < 0).any() or not torch.allclose(s.sum(-1), torch.ones((), dtype=s.dtype), atol=1e-6):
                raise NumericError("normalized scores must lie on the probability simplex")


class SingleViewModel(nn.Module):
    """``head(mean_t(encoder(backbone(clip))))`` for one camera view."""

    def __init__(self, config: ModelConfig, view: str = "front", backbone=None, encoder=None, head=None):
        super().__init__()
        self.config = config
        self.view = view
        self.backbone = backbone if backbone is not None else build_backbone(config.backbone)
        self.encoder = encoder if encoder is not None else SequenceEncoder(config.encoder, config.backbone.feature_dim)
        self.head = head if head is not None else build_head(
            config.encoder.embed_dim, config.num_classes, config.head_hidden
        )

    @property
    def views(self) -> tuple[str, ...]:
        return (self.view,)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        return forward_single_view(clip, self)

    def train(self, mode: bool = True):
        super().train(mode)
        if getattr(self.backbone, "frozen", False):
            self.backbone.eval()
        return self


def forward_single_view(clip: torch.Tensor, model: SingleViewModel) -> torch.Tensor:
    feats = extract_spatial_features(clip, model.backbone)
    seq = encode_sequence(feats, model.encoder)
    return pool_and_classify(seq, model.head)
