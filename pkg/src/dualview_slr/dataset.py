"""Dual-view frame-directory datasets: manifests, subsets, clip sampling.

On-disk layout::

    <root>/<gloss_dir>/<signer>/<view>/00001.jpg, 00002.jpg, ...

with ``view`` in ``{"front", "left"}``. A mapping file (one
``<gloss_dir>\\t<label>`` per line, in vocabulary order) assigns gloss ids,
and partition files (``train.txt`` etc., one record key per line) define the
splits.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import FormatError, IntegrityError, StructuralError

VIEWS = ("front", "left")
SPLITS = ("train", "val", "test")
SUBSET_SIZES = (200, 500, 1000, 2000, 6707)
MANIFEST_FORMAT = "dualview-manifest/1"

# ImageNet statistics, the convention of the published ResNet weights.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_FRAME_RE = re.compile(r"^(\d{5})\.jpg$", re.IGNORECASE)


def frame_filename(index: int) -> str:
    """File name of the 0-based raw frame ``index`` (files are 1-based)."""
    return f"{index + 1:05d}.jpg"


@dataclass(frozen=True)
class GlossVocabulary:
    labels: tuple[str, ...]
    dirs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.dirs:
            object.__setattr__(self, "dirs", tuple(f"{i:05d}" for i in range(len(self.labels))))
        if len(self.dirs) != len(self.labels):
            raise StructuralError("vocabulary labels and directory names differ in length")
        if len(set(self.labels)) != len(self.labels):
            dupes = sorted({x for x in self.labels if self.labels.count(x) > 1})
            raise StructuralError(f"duplicate gloss labels: {dupes[:5]}")
        if len(set(self.dirs)) != len(self.dirs):
            raise StructuralError("duplicate gloss directory names in vocabulary")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def entries(self) -> list[tuple[int, str]]:
        return list(enumerate(self.labels))

    def id_for_dir(self, name: str) -> int:
        try:
            return self.dirs.index(name)
        except ValueError:
            raise StructuralError(f"gloss directory {name!r} is not in the mapping file") from None


@dataclass(frozen=True)
class ViewStream:
    frame_dir: str
    num_raw_frames: int


@dataclass(frozen=True)
class SampleRecord:
    gloss_id: int
    signer_id: int
    views: Mapping[str, ViewStream]
    key: str = ""

    def __post_init__(self):
        if not self.key:
            object.__setattr__(self, "key", f"{self.gloss_id:05d}/{self.signer_id:02d}")


@dataclass(frozen=True)
class Manifest:
    """Immutable catalog of dual-view samples.

    ``root`` anchors the relative ``frame_dir`` paths of every record.
    """

    vocabulary: GlossVocabulary
    records: tuple[SampleRecord, ...]
    splits: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    root: Path = Path(".")

    def split_records(self, split: str) -> list[SampleRecord]:
        if split not in self.splits:
            raise StructuralError(f"manifest has no {split!r} split")
        return [self.records[i] for i in self.splits[split]]

    @property
    def signers(self) -> list[int]:
        return sorted({r.signer_id for r in self.records})

    def frame_dir(self, record: SampleRecord, view: str) -> Path:
        return self.root / record.views[view].frame_dir


@dataclass
class ValidationReport:
    violations: list[str]
    expected_streams: int
    actual_streams: int

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class SubsetSpec:
    K: int
    selected_gloss_ids: tuple[int, ...]
    seed: int

    @property
    def name(self) -> str:
        return f"NationalCSL{self.K}"

    def class_index(self) -> dict[int, int]:
        """Gloss id -> contiguous class index used as the model target."""
        return {g: i for i, g in enumerate(sorted(self.selected_gloss_ids))}


@dataclass
class FrameClip:
    view: str
    frames: np.ndarray  # T x C x H x W float32
    source_indices: list[int]

    def __len__(self) -> int:
        return len(self.source_indices)


# ----------------------------------------------------------------------------
# manifest construction


def read_mapping_file(path: str | Path) -> GlossVocabulary:
    dirs, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected '<gloss_dir>\\t<label>'")
            dirs.append(parts[0].strip())
            labels.append(parts[1].strip())
    if not labels:
        raise StructuralError(f"mapping file {path} is empty")
    return GlossVocabulary(tuple(labels), tuple(dirs))


def write_mapping_file(vocab: GlossVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d, label in zip(vocab.dirs, vocab.labels):
            fh.write(f"{d}\t{label}\n")


def _parse_signer(name: str) -> int:
    digits = re.sub(r"\D", "", name)
    if not digits:
        raise StructuralError(f"signer directory {name!r} carries no numeric id")
    return int(digits)


def count_frames(frame_dir: Path) -> int:
    """Number of sequentially numbered frames; raises on gaps."""
    numbers = sorted(
        int(m.group(1)) for p in frame_dir.iterdir() if (m := _FRAME_RE.match(p.name))
    )
    if not numbers:
        raise IntegrityError(f"no frames in {frame_dir}")
    if numbers != list(range(1, len(numbers) + 1)):
        missing = sorted(set(range(1, numbers[-1] + 1)) - set(numbers))
        raise IntegrityError(
            f"frame numbering gap in {frame_dir}: missing {[frame_filename(i - 1) for i in missing[:5]]}"
        )
    return len(numbers)


def read_partition_file(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def write_partition_file(keys: Iterable[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in keys:
            fh.write(f"{k}\n")


def build_manifest(
    root_dir: str | Path,
    mapping_file: str | Path,
    partition_files: Sequence[str | Path] = (),
) -> Manifest:
    """Scan a frame-directory tree into a :class:`Manifest`.

    Every ``<gloss_dir>/<signer>`` pair becomes one record and must contain
    both view directories. Partition files are named after their split
    (``train.txt``, ``val.txt``, ``test.txt``) and list record keys
    ``<gloss_dir>/<signer_dir>``.
    """
    root = Path(root_dir)
    vocab = read_mapping_file(mapping_file)
    if not root.is_dir():
        raise StructuralError(f"dataset root {root} does not exist")
    gloss_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not gloss_dirs:
        raise StructuralError(f"dataset root {root} contains no gloss directories")

    records: list[SampleRecord] = []
    for gdir in gloss_dirs:
        gloss_id = vocab.id_for_dir(gdir.name)
        for sdir in sorted(p for p in gdir.iterdir() if p.is_dir()):
            key = f"{gdir.name}/{sdir.name}"
            views = {}
            for view in VIEWS:
                vdir = sdir / view
                if not vdir.is_dir():
                    raise StructuralError(f"sample {key} is missing its {view!r} view directory")
                views[view] = ViewStream(f"{key}/{view}", count_frames(vdir))
            records.append(SampleRecord(gloss_id, _parse_signer(sdir.name), views, key))
    if not records:
        raise StructuralError(f"dataset root {root} contains no samples")

    by_key = {r.key: i for i, r in enumerate(records)}
    splits: dict[str, tuple[int, ...]] = {}
    for pf in partition_files:
        name = Path(pf).stem
        if name not in SPLITS:
            raise StructuralError(f"partition file {pf} is not one of {SPLITS}")
        idx = []
        for k in read_partition_file(pf):
            if k not in by_key:
                raise StructuralError(f"partition {name!r} lists unknown sample {k!r}")
            idx.append(by_key[k])
        splits[name] = tuple(idx)
    return Manifest(vocab, tuple(records), splits, root.resolve())


def validate_manifest(manifest: Manifest) -> ValidationReport:
    """Collect invariant violations without raising."""
    problems: list[str] = []
    V = len(manifest.vocabulary)
    seen_keys: set[str] = set()
    streams = 0
    for i, rec in enumerate(manifest.records):
        if not 0 <= rec.gloss_id < V:
            problems.append(f"record {rec.key}: gloss_id {rec.gloss_id} outside vocabulary of size {V}")
        if rec.key in seen_keys:
            problems.append(f"record {rec.key}: duplicate key")
        seen_keys.add(rec.key)
        for view in VIEWS:
            if view not in rec.views:
                problems.append(f"record {rec.key}: missing {view} view")
                continue
            streams += 1
            if rec.views[view].num_raw_frames < 1:
                problems.append(f"record {rec.key}: {view} view has no frames")
        extra = set(rec.views) - set(VIEWS)
        if extra:
            problems.append(f"record {rec.key}: unknown views {sorted(extra)}")

    owner: dict[int, str] = {}
    for name, idx in manifest.splits.items():
        if name not in SPLITS:
            problems.append(f"unknown split {name!r}")
        for j in idx:
            if not 0 <= j < len(manifest.records):
                problems.append(f"split {name}: record index {j} out of range")
            elif j in owner:
                problems.append(
                    f"record {manifest.records[j].key} appears in both {owner[j]!r} and {name!r} splits"
                )
            else:
                owner[j] = name

    expected = V * len(manifest.signers) * len(VIEWS)
    return ValidationReport(problems, expected, streams)


def build_subset(manifest: Manifest, K: int, seed: int, nested: bool = False) -> SubsetSpec:
    """Seeded random choice of ``K`` gloss ids.

    By default each ``K`` is an independent draw; ``nested=True`` takes the
    first ``K`` glosses of one seeded permutation so smaller subsets are
    contained in larger ones.
    """
    V = len(manifest.vocabulary)
    if not 1 <= K <= V:
        raise ValueError(f"K={K} must lie in [1, {V}]")
    rng = np.random.default_rng(seed if nested else [seed, K])
    chosen = rng.permutation(V)[:K]
    return SubsetSpec(K, tuple(sorted(int(g) for g in chosen)), seed)


def filter_manifest(manifest: Manifest, subset: SubsetSpec) -> Manifest:
    keep = set(subset.selected_gloss_ids)
    old_to_new: dict[int, int] = {}
    records = []
    for i, r in enumerate(manifest.records):
        if r.gloss_id in keep:
            old_to_new[i] = len(records)
            records.append(r)
    splits = {
        name: tuple(old_to_new[i] for i in idx if i in old_to_new)
        for name, idx in manifest.splits.items()
    }
    return Manifest(manifest.vocabulary, tuple(records), splits, manifest.root)


# ----------------------------------------------------------------------------
# serialization


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write the manifest as JSON lines: one header, then one record per line."""
    header = {
        "format": MANIFEST_FORMAT,
        "root": str(manifest.root),
        "vocabulary": [{"dir": d, "label": l} for d, l in zip(manifest.vocabulary.dirs, manifest.vocabulary.labels)],
        "splits": {k: [manifest.records[i].key for i in v] for k, v in manifest.splits.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for r in manifest.records:
            row = {
                "key": r.key,
                "gloss_id": r.gloss_id,
                "label": manifest.vocabulary.labels[r.gloss_id],
                "signer_id": r.signer_id,
                "views": {v: {"path": s.frame_dir, "frames": s.num_raw_frames} for v, s in r.views.items()},
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_manifest(path: str | Path, root: str | Path | None = None) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path} is not a {MANIFEST_FORMAT} file")
    header, rows = lines[0], lines[1:]
    vocab = GlossVocabulary(
        tuple(e["label"] for e in header["vocabulary"]), tuple(e["dir"] for e in header["vocabulary"])
    )
    records = tuple(
        SampleRecord(
            row["gloss_id"],
            row["signer_id"],
            {v: ViewStream(s["path"], s["frames"]) for v, s in row["views"].items()},
            row["key"],
        )
        for row in rows
    )
    by_key = {r.key: i for i, r in enumerate(records)}
    splits = {k: tuple(by_key[key] for key in v) for k, v in header["splits"].items()}
    return Manifest(vocab, records, splits, Path(root if root is not None else header["root"]))


# ----------------------------------------------------------------------------
# frames and clips


def sample_frame_indices(num_raw_frames: int, clip_len: int = 16, stride: int = 5) -> list[int]:
    """Centered, fixed-stride frame indices; short videos repeat the last frame.

    >>> sample_frame_indices(200)[:3]
    [60, 65, 70]
    """
    if num_raw_frames <= 0:
        raise ValueError("num_raw_frames must be positive")
    if clip_len < 1 or stride < 1:
        raise ValueError("clip_len and stride must be >= 1")
    window = clip_len * stride
    start = max(0, (num_raw_frames - window) // 2)
    return [min(start + i * stride, num_raw_frames - 1) for i in range(clip_len)]


def center_crop_box(height: int, width: int) -> tuple[int, int, int]:
    """(top, left, side) of the largest centered square."""
    side = min(height, width)
    return (height - side) // 2, (width - side) // 2, side


def preprocess_frame(
    image: np.ndarray,
    target_size: int,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> np.ndarray:
    """Center-crop to a square, resize, scale to [0, 1], normalize.

    Args:
        image: H x W x 3 integer array.
        target_size: output side length.

    Returns:
        3 x target_size x target_size float32 array.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"expected an H x W x 3 image, got shape {image.shape}")
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    top, left, side = center_crop_box(image.shape[0], image.shape[1])
    crop = image[top : top + side, left : left + side]
    if side != target_size:
        crop = np.asarray(Image.fromarray(crop.astype(np.uint8)).resize((target_size, target_size), Image.BILINEAR))
    out = crop.astype(np.float32) / 255.0
    out = (out - np.asarray(mean, np.float32)) / np.asarray(std, np.float32)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def read_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read frame {path}: {exc}") from exc


def load_clip(
    manifest: Manifest,
    record: SampleRecord,
    view: str,
    clip_len: int = 16,
    stride: int = 5,
    target_size: int = 256,
    mean: Sequence[float] = IMAGENET_MEAN,
    std: Sequence[float] = IMAGENET_STD,
) -> FrameClip:
    if view not in record.views:
        raise StructuralError(f"sample {record.key} has no {view!r} view")
    stream = record.views[view]
    indices = sample_frame_indices(stream.num_raw_frames, clip_len, stride)
    frame_dir = manifest.frame_dir(record, view)
    cache: dict[int, np.ndarray] = {}
    for i in indices:
        if i not in cache:
            cache[i] = preprocess_frame(read_frame(frame_dir / frame_filename(i)), target_size, mean, std)
    frames = np.stack([cache[i] for i in indices])
    return FrameClip(view, frames, indices)
