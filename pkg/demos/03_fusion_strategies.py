"""The three ways of combining the front and left views.

early: concatenate per-frame CNN features, project, encode once.
late:  encode each view, concatenate encoder outputs per frame, project.
plus:  two independent single-view models whose logits are summed.
"""

import torch

from dualview_slr import EncoderConfig, ModelConfig, SpatialBackboneConfig, build_dual_view_model, plus_fuse

torch.manual_seed(0)
cfg = ModelConfig(
    SpatialBackboneConfig("small", feature_dim=32),
    EncoderConfig(num_layers=2, num_heads=4, embed_dim=32, feedforward_dim=64, dropout=0.0),
    num_classes=5,
    fusion_dim=32,
)
front = torch.randn(2, 8, 3, 32, 32)
left = torch.randn(2, 8, 3, 32, 32)

for mode in ("early", "late", "plus"):
    model = build_dual_view_model(mode, cfg).eval()
    n_params = sum(p.numel() for p in model.parameters())
    with torch.no_grad():
        out = model(front, left)
    print(f"{mode:5s}: {n_params:6d} parameters, output {tuple(out.shape)}")

# plus fusion on its own: per-view disagreement resolved by confidence
f = torch.tensor([2.0, 1.9, 0.0])  # front unsure between 0 and 1
l = torch.tensor([0.0, 3.0, 0.0])  # left is confident about 1
print("logit_sum:", plus_fuse(f, l).numpy().round(3))
print("prob_mean:", plus_fuse(f, l, "prob_mean").numpy().round(3))
