"""Desk-scale dual-view dataset of moving disks.

Each class is a 3-D Lissajous trajectory. The front camera sees the (x, y)
projection and the left camera sees (z, y). Classes listed in
``occlusion_pairs`` share x and y exactly and differ only in z, so they are
indistinguishable from the front and separable from the left;
``left_occlusion_pairs`` does the converse.
"""

from __future__ import annotations

import dataclasses
import json
import shutil
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    SPLITS,
    VIEWS,
    GlossVocabulary,
    Manifest,
    SampleRecord,
    ViewStream,
    frame_filename,
    sample_frame_indices,
    save_manifest,
    write_mapping_file,
    write_partition_file,
)
from .errors import ConfigurationError

AMPLITUDE = 0.3
_FREQS = (1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass
class SynthConfig:
    num_classes: int = 10
    samples_per_class_per_split: dict = field(default_factory=lambda: {"train": 8, "val": 2, "test": 2})
    frames_per_video: int = 80
    image_size: int = 64
    occlusion_pairs: list = field(default_factory=lambda: [(0, 1), (2, 3)])
    left_occlusion_pairs: list = field(default_factory=list)
    noise_level: float = 0.0
    seed: int = 0
    disk_radius: float = 0.12
    clip_len: int = 16
    stride: int = 5

    def __post_init__(self):
        self.occlusion_pairs = [tuple(p) for p in self.occlusion_pairs]
        self.left_occlusion_pairs = [tuple(p) for p in self.left_occlusion_pairs]
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        if self.noise_level < 0:
            raise ConfigurationError("noise_level must be >= 0")
        seen: set[int] = set()
        for pair in self.occlusion_pairs + self.left_occlusion_pairs:
            a, b = pair
            if a == b or not (0 <= a < self.num_classes and 0 <= b < self.num_classes):
                raise ConfigurationError(f"invalid occlusion pair {pair}")
            if a in seen or b in seen:
                raise ConfigurationError(f"class in pair {pair} already belongs to another pair")
            seen.update(pair)
        unknown = set(self.samples_per_class_per_split) - set(SPLITS)
        if unknown:
            raise ConfigurationError(f"unknown splits {sorted(unknown)}")
        if self.frames_per_video < self.clip_len * self.stride:
            warnings.warn(
                f"frames_per_video={self.frames_per_video} is shorter than the "
                f"{self.clip_len * self.stride}-frame sampling window",
                stacklevel=2,
            )

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthConfig":
        import yaml

        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["occlusion_pairs"] = [list(p) for p in self.occlusion_pairs]
        d["left_occlusion_pairs"] = [list(p) for p in self.left_occlusion_pairs]
        return d


def class_trajectories(config: SynthConfig) -> np.ndarray:
    """Per-class (frequency, phase) for the x, y and z axes, shape (C, 3, 2)."""
    rng = np.random.default_rng([config.seed, 0x7A])
    C = config.num_classes
    params = np.zeros((C, 3, 2))
    front_twin = {b: a for a, b in config.occlusion_pairs}
    left_twin = {b: a for a, b in config.left_occlusion_pairs}
    t = np.linspace(0.0, 1.0, 32)

    def proj(p, axes):
        return np.concatenate([AMPLITUDE * np.sin(2 * np.pi * (p[a, 0] * t + p[a, 1])) for a in axes])

    def distinct(c, p):
        # every class must differ from every earlier class in at least one view,
        # and in each view unless the pair is declared ambiguous there
        for other in range(c):
            q = params[other]
            for axes, twins in (((0, 1), front_twin), ((2, 1), left_twin)):
                if twins.get(c) == other:
                    continue
                if np.sqrt(np.mean((proj(p, axes) - proj(q, axes)) ** 2)) < 0.08:
                    return False
        return True

    for c in range(C):
        for _ in range(1000):
            p = np.stack([rng.choice(_FREQS, 3), rng.uniform(0, 1, 3)], axis=1)
            if c in front_twin:
                p[[0, 1]] = params[front_twin[c]][[0, 1]]
            if c in left_twin:
                p[[2, 1]] = params[left_twin[c]][[2, 1]]
            if distinct(c, p):
                break
        else:
            raise ConfigurationError("could not draw mutually distinguishable trajectories")
        params[c] = p
    return params


def _signer_jitter(config: SynthConfig, signer: int) -> float:
    if config.noise_level == 0:
        return 0.0
    rng = np.random.default_rng([config.seed, 0x51, signer])
    return float(rng.uniform(-1, 1) * 0.05 * config.noise_level)


def render_video(config: SynthConfig, params: np.ndarray, view: str, jitter: float, rng) -> np.ndarray:
    """Frames of one view as an (F, S, S) uint8 array."""
    S, F = config.image_size, config.frames_per_video
    t = np.arange(F) / max(F - 1, 1) + jitter
    coords = AMPLITUDE * np.sin(2 * np.pi * (params[:, 0, None] * t + params[:, 1, None]))
    horiz = coords[0] if view == "front" else coords[2]
    vert = coords[1]
    yy, xx = np.mgrid[0:S, 0:S] + 0.5
    cx = (0.5 + horiz) * S
    cy = (0.5 + vert) * S
    r = config.disk_radius * S
    inside = (xx[None] - cx[:, None, None]) ** 2 + (yy[None] - cy[:, None, None]) ** 2 <= r * r
    frames = np.where(inside, 220.0, 20.0)
    if config.noise_level > 0:
        frames = frames + rng.uniform(-1, 1, frames.shape) * 60.0 * config.noise_level
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


def generate_synthetic_dataset(config: SynthConfig, out_dir: str | Path) -> Manifest:
    """Write frames, mapping file, partition files and manifest under ``out_dir``.

    Splits are signer-disjoint: signers are numbered consecutively through
    train, val and test, and each (class, signer) pair is one record.
    """
    out = Path(out_dir)
    created = not out.exists()
    try:
        return _generate(config, out)
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise


def _generate(config: SynthConfig, out: Path) -> Manifest:
    out.mkdir(parents=True, exist_ok=True)
    frames_root = out / "frames"
    params = class_trajectories(config)
    vocab = GlossVocabulary(
        tuple(f"shape-{c}" for c in range(config.num_classes)),
        tuple(f"{c:05d}" for c in range(config.num_classes)),
    )

    signer_split: list[tuple[int, str]] = []
    for split in SPLITS:
        for _ in range(config.samples_per_class_per_split.get(split, 0)):
            signer_split.append((len(signer_split), split))

    records, split_keys = [], {s: [] for s in SPLITS if config.samples_per_class_per_split.get(s, 0)}
    split_idx = {s: [] for s in split_keys}
    for c in range(config.num_classes):
        for signer, split in signer_split:
            key = f"{vocab.dirs[c]}/{signer:02d}"
            jitter = _signer_jitter(config, signer)
            views = {}
            for v, view in enumerate(VIEWS):
                rng = np.random.default_rng([config.seed, c, signer, v])
                video = render_video(config, params[c], view, jitter, rng)
                vdir = frames_root / key / view
                vdir.mkdir(parents=True, exist_ok=True)
                for i, frame in enumerate(video):
                    Image.fromarray(np.repeat(frame[:, :, None], 3, axis=2)).save(
                        vdir / frame_filename(i), quality=95
                    )
                views[view] = ViewStream(f"{key}/{view}", len(video))
            split_idx[split].append(len(records))
            split_keys[split].append(key)
            records.append(SampleRecord(c, signer, views, key))

    write_mapping_file(vocab, out / "mapping.tsv")
    (out / "partitions").mkdir(exist_ok=True)
    for split, keys in split_keys.items():
        write_partition_file(keys, out / "partitions" / f"{split}.txt")
    with open(out / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)

    manifest = Manifest(vocab, tuple(records), {s: tuple(i) for s, i in split_idx.items()}, frames_root.resolve())
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest


def front_ambiguous_classes(config: SynthConfig) -> set[int]:
    return {c for pair in config.occlusion_pairs for c in pair}


def clip_indices(config: SynthConfig) -> list[int]:
    return sample_frame_indices(config.frames_per_video, config.clip_len, config.stride)
