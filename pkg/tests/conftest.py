from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from dualview_slr.dataset import write_mapping_file, write_partition_file, GlossVocabulary

torch.set_num_threads(1)


def make_tree(root: Path, glosses=3, signers=2, frames=20, size=(24, 16), views=("front", "left")):
    """Write a toy frame tree; returns (mapping_path, partition_paths)."""
    vocab = GlossVocabulary(
        tuple(f"词{g} 1-{g + 1}" for g in range(glosses)), tuple(f"{g + 1:05d}" for g in range(glosses))
    )
    frames_root = root / "frames"
    rng = np.random.default_rng(0)
    keys = []
    for g in range(glosses):
        for s in range(signers):
            key = f"{vocab.dirs[g]}/P{s + 1:02d}"
            keys.append(key)
            for view in views:
                d = frames_root / key / view
                d.mkdir(parents=True)
                for i in range(frames):
                    img = rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
                    Image.fromarray(img).save(d / f"{i + 1:05d}.jpg")
    mapping = root / "mapping.tsv"
    write_mapping_file(vocab, mapping)
    train = [k for k in keys if k.endswith("P01")]
    test = [k for k in keys if not k.endswith("P01")]
    write_partition_file(train, root / "train.txt")
    write_partition_file(test, root / "test.txt")
    return frames_root, mapping, [root / "train.txt", root / "test.txt"]


@pytest.fixture
def toy_tree(tmp_path):
    return make_tree(tmp_path)
