import hashlib

import numpy as np
import pytest

from dualview_slr.dataset import build_manifest, load_clip, validate_manifest
from dualview_slr.errors import ConfigurationError
from dualview_slr.synthetic import SynthConfig, generate_synthetic_dataset


def small_config(**kw):
    base = dict(num_classes=10, samples_per_class_per_split={"train": 2, "val": 1, "test": 1},
                frames_per_video=80, image_size=24, occlusion_pairs=[(0, 1), (2, 3)], seed=7)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="module")
def clean_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = small_config()
    return cfg, generate_synthetic_dataset(cfg, out), out


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.jpg")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_paired_classes_identical_from_front_only(clean_set):
    cfg, m, _ = clean_set
    by = {(r.gloss_id, r.signer_id): r for r in m.records}
    for a, b in cfg.occlusion_pairs:
        for signer in m.signers:
            fa = load_clip(m, by[a, signer], "front", target_size=24).frames
            fb = load_clip(m, by[b, signer], "front", target_size=24).frames
            la = load_clip(m, by[a, signer], "left", target_size=24).frames
            lb = load_clip(m, by[b, signer], "left", target_size=24).frames
            assert np.array_equal(fa, fb)
            assert not np.array_equal(la, lb)
            raw_a = (m.frame_dir(by[a, signer], "front")).glob("*.jpg")
            for p in raw_a:
                q = m.frame_dir(by[b, signer], "front") / p.name
                assert p.read_bytes() == q.read_bytes()


def test_unpaired_classes_differ_in_both_views(clean_set):
    _, m, _ = clean_set
    by = {(r.gloss_id, r.signer_id): r for r in m.records}
    for view in ("front", "left"):
        a = load_clip(m, by[4, 0], view, target_size=24).frames
        b = load_clip(m, by[5, 0], view, target_size=24).frames
        assert np.abs(a - b).mean() > 0.05


def test_deterministic_bytes(tmp_path, clean_set):
    cfg, _, out = clean_set
    generate_synthetic_dataset(cfg, tmp_path / "again")
    assert _digest(out / "frames") == _digest(tmp_path / "again" / "frames")


def test_noisy_set_is_deterministic_too(tmp_path):
    cfg = small_config(num_classes=4, occlusion_pairs=[(0, 1)], noise_level=0.5,
                       samples_per_class_per_split={"train": 1, "test": 1})
    generate_synthetic_dataset(cfg, tmp_path / "a")
    generate_synthetic_dataset(cfg, tmp_path / "b")
    assert _digest(tmp_path / "a" / "frames") == _digest(tmp_path / "b" / "frames")


def test_counts_splits_and_roundtrip(tmp_path):
    with pytest.warns(UserWarning, match="sampling window"):
        cfg = small_config(samples_per_class_per_split={"train": 8, "val": 2, "test": 2}, frames_per_video=20,
                           image_size=16)
    m = generate_synthetic_dataset(cfg, tmp_path / "d")
    counts = {s: len(i) for s, i in m.splits.items()}
    assert counts == {"train": 80, "val": 20, "test": 20}
    jpgs = list((tmp_path / "d" / "frames").rglob("*.jpg"))
    assert len(jpgs) == 120 * 2 * 20
    # signer-disjoint
    signers = {s: {m.records[i].signer_id for i in idx} for s, idx in m.splits.items()}
    assert not (signers["train"] & signers["test"]) and not (signers["train"] & signers["val"])
    assert validate_manifest(m).ok
    rebuilt = build_manifest(
        tmp_path / "d" / "frames", tmp_path / "d" / "mapping.tsv",
        [tmp_path / "d" / "partitions" / f"{s}.txt" for s in ("train", "val", "test")],
    )
    report = validate_manifest(rebuilt)
    assert report.ok and report.actual_streams == report.expected_streams == 240
    assert {r.key for r in rebuilt.records} == {r.key for r in m.records}


@pytest.mark.parametrize("pairs", [[(0, 0)], [(0, 10)], [(0, 1), (1, 2)]])
def test_bad_occlusion_pairs_rejected(pairs):
    with pytest.raises(ConfigurationError):
        small_config(occlusion_pairs=pairs)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        SynthConfig.from_dict({"num_classes": 3, "colour": "red"})


def test_unwritable_output_raises(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_synthetic_dataset(small_config(num_classes=2, occlusion_pairs=[]), blocker / "sub")
