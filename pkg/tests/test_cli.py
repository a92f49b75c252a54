import json

import pytest
import torch
import yaml

from dualview_slr.cli import build_parser, main
from dualview_slr.metrics import load_rows

SYNTH = {
    "num_classes": 3,
    "samples_per_class_per_split": {"train": 2, "val": 1, "test": 1},
    "frames_per_video": 20,
    "image_size": 16,
    "occlusion_pairs": [[0, 1]],
    "seed": 5,
    "clip_len": 4,
}
TRAIN = {
    "model": {
        "backbone": {"architecture": "small", "feature_dim": 8},
        "encoder": {"num_layers": 1, "num_heads": 2, "embed_dim": 8, "feedforward_dim": 16, "dropout": 0.0},
        "fusion_dim": 8,
    },
    "train": {"batch_size": 2, "learning_rate": 0.05, "max_epochs": 2, "patience": 5, "seed": 0},
    "data": {"clip_len": 4, "stride": 5, "image_size": 16, "mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5]},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    (ws / "synth.yaml").write_text(yaml.safe_dump(SYNTH))
    (ws / "train.yaml").write_text(yaml.safe_dump(TRAIN))
    assert main(["synth", "--config", str(ws / "synth.yaml"), "--out", str(ws / "data")]) == 0
    return ws


def _parts(ws):
    return [str(ws / "data" / "partitions" / f"{s}.txt") for s in ("train", "val", "test")]


@pytest.mark.parametrize("cmd", ["prepare", "synth", "train", "eval", "fuse-eval", "report"])
def test_help_documents_every_flag(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    sub = next(a for a in build_parser()._subparsers._group_actions[0].choices.items() if a[0] == cmd)[1]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in out


def test_unknown_flag_fails_fast():
    with pytest.raises(SystemExit) as exc:
        main(["report", "--rows", "x", "--bogus"])
    assert exc.value.code == 2


def test_synth_then_prepare_validates(workspace, capsys):
    ws = workspace
    code = main(["prepare", "--root", str(ws / "data" / "frames"), "--mapping", str(ws / "data" / "mapping.tsv"),
                 "--partitions", *_parts(ws), "--out", str(ws / "prepared.jsonl")])
    assert code == 0
    assert "violations=0" in capsys.readouterr().out
    assert (ws / "prepared.jsonl").exists()


def test_prepare_uses_env_root(workspace, monkeypatch, tmp_path):
    monkeypatch.setenv("DUALVIEW_SLR_DATA_ROOT", str(workspace / "data" / "frames"))
    assert main(["prepare", "--mapping", str(workspace / "data" / "mapping.tsv"), "--out", str(tmp_path / "m.jsonl")]) == 0


def test_prepare_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "frames").mkdir()
    (tmp_path / "map.tsv").write_text("00001\tx\n")
    code = main(["prepare", "--root", str(tmp_path / "frames"), "--mapping", str(tmp_path / "map.tsv"),
                 "--out", str(tmp_path / "m.jsonl")])
    assert code == 3
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error: structural: ")
    assert not (tmp_path / "m.jsonl").exists()


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["prepare", "--root", str(tmp_path), "--mapping", str(tmp_path / "nope.tsv"), "--out", "x"]) == 2
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error: usage: ")


def test_synth_refuses_non_empty_output(workspace):
    assert main(["synth", "--out", str(workspace / "data")]) == 2


def test_train_rejects_unknown_config_keys(workspace, tmp_path, capsys):
    bad = dict(TRAIN, train={**TRAIN["train"], "warmup": 3})
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump(bad))
    code = main(["train", "--manifest", str(workspace / "data" / "manifest.jsonl"), "--mode", "front",
                 "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "ck")])
    assert code == 2
    assert "warmup" in capsys.readouterr().err


def test_numeric_failure_exit_code(workspace, tmp_path):
    code = main(["train", "--manifest", str(workspace / "data" / "manifest.jsonl"), "--mode", "front",
                 "--config", str(workspace / "train.yaml"), "--lr", "1e38", "--epochs", "3", "--out", str(tmp_path)])
    assert code == 4


@pytest.fixture(scope="module")
def trained(workspace):
    ws = workspace
    for mode in ("front", "early", "plus"):
        code = main(["train", "--manifest", str(ws / "data" / "manifest.jsonl"), "--mode", mode,
                     "--config", str(ws / "train.yaml"), "--out", str(ws / "ck")])
        assert code == 0
    return ws


def test_train_outputs(trained, capsys):
    ck = trained / "ck"
    for name in ("front", "early", "plus-front", "plus-left"):
        assert (ck / f"{name}.pt").exists()
        hist = json.loads((ck / f"{name}.history.json").read_text())
        assert hist["best_epoch"] <= hist["stopped_epoch"]
    for view, other in (("front", "left"), ("left", "front")):
        payload = torch.load(ck / f"plus-{view}.pt", weights_only=False)
        assert payload["view"] == view
        assert not any(other in k for k in payload["state_dict"])


def test_flag_overrides_config(trained, capsys, tmp_path):
    code = main(["train", "--manifest", str(trained / "data" / "manifest.jsonl"), "--mode", "left",
                 "--config", str(trained / "train.yaml"), "--epochs", "1", "--out", str(tmp_path)])
    assert code == 0
    assert '"max_epochs": 1' in capsys.readouterr().err
    assert len(json.loads((tmp_path / "left.history.json").read_text())["val_loss"]) == 1


def test_eval_dump_and_fuse_eval_agree(trained, tmp_path):
    ck = trained / "ck"
    code = main(["eval", "--checkpoint", str(ck / "plus-front.pt"), "--checkpoint", str(ck / "plus-left.pt"),
                 "--split", "test", "--out", str(tmp_path / "plus.jsonl"), "--dump-scores", str(tmp_path / "scores"),
                 "--dataset-name", "tiny"])
    assert code == 0
    plus_row = load_rows(tmp_path / "plus.jsonl")[0]
    assert plus_row.view_mode == "dual" and plus_row.method == "plus"
    code = main(["fuse-eval", "--front-scores", str(tmp_path / "scores" / "front.scores.jsonl"),
                 "--left-scores", str(tmp_path / "scores" / "left.scores.jsonl"),
                 "--labels", str(tmp_path / "scores" / "labels.tsv"), "--out", str(tmp_path / "fused.jsonl"),
                 "--dataset-name", "tiny"])
    assert code == 0
    assert load_rows(tmp_path / "fused.jsonl")[0] == plus_row


def test_fuse_eval_alignment_error(trained, tmp_path, capsys):
    s = tmp_path / "s.jsonl"
    s.write_text(json.dumps({"key": "a", "logits": [0.0, 1.0]}) + "\n")
    (tmp_path / "y.tsv").write_text("b\t0\n")
    code = main(["fuse-eval", "--front-scores", str(s), "--left-scores", str(s), "--labels", str(tmp_path / "y.tsv"),
                 "--out", str(tmp_path / "o.jsonl")])
    assert code == 3
    assert "error: alignment:" in capsys.readouterr().err


def test_eval_is_idempotent(trained, tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"row{i}.jsonl"
        assert main(["eval", "--checkpoint", str(trained / "ck" / "early.pt"), "--out", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_full_pipeline_report_has_delta(trained, tmp_path, capsys):
    ck = trained / "ck"
    rows = []
    for name, cks in (("front", ["front.pt"]), ("early", ["early.pt"]), ("plus", ["plus-front.pt", "plus-left.pt"])):
        out = tmp_path / f"{name}.jsonl"
        argv = ["eval", "--out", str(out), "--dataset-name", "tiny"]
        for c in cks:
            argv += ["--checkpoint", str(ck / c)]
        assert main(argv) == 0
        rows.append(str(out))
    capsys.readouterr()
    assert main(["report", "--rows", *rows, "--out-json", str(tmp_path / "r.json"), "--out-text", str(tmp_path / "r.txt")]) == 0
    text = capsys.readouterr().out
    assert "improvement" in text
    data = json.loads((tmp_path / "r.json").read_text())
    assert {d["method"] for d in data["improvements"]} == {"early", "plus"}
    assert main(["report", "--rows", *rows, "--out-json", str(tmp_path / "r2.json")]) == 0
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
