"""Command-line entry point: ``dualview-slr {prepare,synth,train,eval,fuse-eval,report}``.

Exit codes: 0 success, 2 usage/configuration error, 3 data or validation
error, 4 numeric failure. Errors are printed as one line
``error: <category>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import yaml

from . import errors
from .dataset import build_manifest, build_subset, load_manifest, save_manifest, validate_manifest
from .fusion import build_dual_view_model
from .metrics import (
    fuse_and_evaluate,
    load_labels,
    load_rows,
    load_scores,
    render_report,
    save_labels,
    save_rows,
    save_scores,
)
from .model import EncoderConfig, ModelConfig, SingleViewModel, SpatialBackboneConfig
from .synthetic import SynthConfig, generate_synthetic_dataset
from .training import DataConfig, TrainConfig, combine_plus, evaluate, load_checkpoint, save_checkpoint, train

DATA_ROOT_ENV = "DUALVIEW_SLR_DATA_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(errors.DualViewError):
    category = "usage"


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, errors.NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (UsageError, errors.ConfigurationError)):
        return EXIT_USAGE
    return EXIT_DATA


def _announce(command: str, settings: dict) -> None:
    print(f"[{command}] effective config: {json.dumps(settings, sort_keys=True, default=str)}", file=sys.stderr)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".partial")
    try:
        writer(tmp)
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} does not exist")
    with open(p, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a mapping")
    return data


def _check_keys(section: str, data: dict, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise UsageError(f"unknown keys in config section {section!r}: {sorted(unknown)}")


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return p


# ----------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    root = args.root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(f"--root is required when {DATA_ROOT_ENV} is unset")
    _require_file(args.mapping, "mapping file")
    for p in args.partitions:
        _require_file(p, "partition file")
    _announce("prepare", {"root": root, "mapping": args.mapping, "partitions": args.partitions, "out": args.out})
    manifest = build_manifest(root, args.mapping, args.partitions)
    report = validate_manifest(manifest)
    print(
        f"records={len(manifest.records)} streams={report.actual_streams} "
        f"expected_streams={report.expected_streams} violations={len(report.violations)}"
    )
    for v in report.violations:
        print(f"  violation: {v}")
    if not report.ok:
        raise errors.IntegrityError(f"manifest has {len(report.violations)} violations; not written")
    _atomic(Path(args.out), lambda tmp: save_manifest(manifest, tmp))
    return EXIT_OK


def cmd_synth(args) -> int:
    data = _load_config_file(args.config)
    for flag, key in (("num_classes", "num_classes"), ("seed", "seed"), ("noise", "noise_level"),
                      ("image_size", "image_size"), ("frames", "frames_per_video")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    config = SynthConfig.from_dict(data)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} is not empty")
    _announce("synth", config.to_dict())
    manifest = generate_synthetic_dataset(config, out)
    print(f"wrote {len(manifest.records)} samples to {out}")
    return EXIT_OK


_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"num_classes"}


def _train_settings(args) -> tuple[ModelConfig | dict, TrainConfig, DataConfig, dict]:
    cfg = _load_config_file(args.config)
    _check_keys("top level", cfg, {"model", "train", "data", "subset"})
    model = dict(cfg.get("model", {}))
    _check_keys("model", model, _MODEL_KEYS)
    backbone = dict(model.pop("backbone", {}))
    encoder = dict(model.pop("encoder", {}))
    _check_keys("model.backbone", backbone, {f.name for f in dataclasses.fields(SpatialBackboneConfig)})
    _check_keys("model.encoder", encoder, {f.name for f in dataclasses.fields(EncoderConfig)})
    tr = dict(cfg.get("train", {}))
    _check_keys("train", tr, {f.name for f in dataclasses.fields(TrainConfig)})
    data = dict(cfg.get("data", {}))
    _check_keys("data", data, {f.name for f in dataclasses.fields(DataConfig)})
    subset = dict(cfg.get("subset", {}))
    _check_keys("subset", subset, {"K", "seed", "nested"})

    overrides = [
        (args.epochs, tr, "max_epochs"), (args.batch_size, tr, "batch_size"), (args.lr, tr, "learning_rate"),
        (args.seed, tr, "seed"), (args.patience, tr, "patience"), (args.image_size, data, "image_size"),
        (args.backbone, backbone, "architecture"), (args.feature_dim, backbone, "feature_dim"),
        (args.embed_dim, encoder, "embed_dim"), (args.layers, encoder, "num_layers"),
        (args.heads, encoder, "num_heads"), (args.subset_k, subset, "K"), (args.subset_seed, subset, "seed"),
    ]
    for value, section, key in overrides:
        if value is not None:
            section[key] = value
    for key in ("mean", "std"):
        if key in data:
            data[key] = tuple(data[key])
    model["backbone"] = backbone
    model["encoder"] = encoder
    return model, TrainConfig(**tr), DataConfig(**data), subset


def cmd_train(args) -> int:
    mpath = _require_file(args.manifest, "manifest")
    model_dict, tcfg, dcfg, subset_cfg = _train_settings(args)
    manifest = load_manifest(mpath)
    subset = None
    if "K" in subset_cfg:
        subset = build_subset(manifest, int(subset_cfg["K"]), int(subset_cfg.get("seed", 0)), bool(subset_cfg.get("nested", False)))
    num_classes = subset.K if subset else len(manifest.vocabulary)
    mcfg = ModelConfig(num_classes=num_classes, **model_dict)
    _announce("train", {"mode": args.mode, "model": mcfg.to_dict(), "train": dataclasses.asdict(tcfg),
                        "data": dataclasses.asdict(dcfg), "subset": subset_cfg})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "manifest": str(mpath.resolve()),
        "subset": dataclasses.asdict(subset) if subset else None,
        "data": dataclasses.asdict(dcfg),
        "train": dataclasses.asdict(tcfg),
    }
    import torch

    torch.manual_seed(tcfg.seed)
    if args.mode in ("front", "left"):
        model = SingleViewModel(mcfg, args.mode)
    else:
        model = build_dual_view_model(args.mode, mcfg)
    model, hist = train(model, manifest, subset, tcfg, dcfg)

    if args.mode == "plus":
        for view in ("front", "left"):
            save_checkpoint(out / f"plus-{view}.pt", model.single_view(view), extra)
            _atomic_write_text(out / f"plus-{view}.history.json", json.dumps(hist[view].to_dict(), indent=2))
            print(f"wrote {out / f'plus-{view}.pt'} (best epoch {hist[view].best_epoch})")
    else:
        save_checkpoint(out / f"{args.mode}.pt", model, extra)
        _atomic_write_text(out / f"{args.mode}.history.json", json.dumps(hist.to_dict(), indent=2))
        print(f"wrote {out / f'{args.mode}.pt'} (best epoch {hist.best_epoch})")
    return EXIT_OK


def _subset_from_extra(extra: dict):
    from .dataset import SubsetSpec

    s = extra.get("subset")
    return SubsetSpec(s["K"], tuple(s["selected_gloss_ids"]), s["seed"]) if s else None


def cmd_eval(args) -> int:
    paths = [_require_file(p, "checkpoint") for p in args.checkpoint]
    if len(paths) not in (1, 2):
        raise UsageError("pass one checkpoint, or a front and a left checkpoint for plus fusion")
    loaded = [load_checkpoint(p) for p in paths]
    extra = loaded[0][1]
    if len(loaded) == 2:
        by_view = {getattr(m, "view", None): m for m, _ in loaded}
        if set(by_view) != {"front", "left"}:
            raise UsageError("plus evaluation needs one front-view and one left-view checkpoint")
        model = combine_plus(by_view["front"], by_view["left"])
    else:
        model = loaded[0][0]
    mpath = _require_file(args.manifest or extra.get("manifest", ""), "manifest")
    data = dict(extra.get("data", {}))
    for key in ("mean", "std"):
        if key in data:
            data[key] = tuple(data[key])
    dcfg = DataConfig(**data)
    subset = _subset_from_extra(extra)
    _announce("eval", {"checkpoints": [str(p) for p in paths], "manifest": str(mpath), "split": args.split})

    manifest = load_manifest(mpath)
    row, out = evaluate(model, manifest, args.split, subset, data=dcfg, dataset_name=args.dataset_name or "",
                        return_predictions=True)
    _atomic(Path(args.out), lambda tmp: save_rows([row], tmp))
    print(json.dumps(row.to_dict()))
    if args.dump_scores:
        d = Path(args.dump_scores)
        d.mkdir(parents=True, exist_ok=True)
        if "front" in out:
            per_view = {v: out[v] for v in ("front", "left")}
        elif isinstance(model, SingleViewModel):
            per_view = {model.view: out["scores"]}
        else:
            raise UsageError("--dump-scores needs single-view or plus-mode checkpoints")
        for view, logits in per_view.items():
            _atomic(d / f"{view}.scores.jsonl", lambda tmp, lg=logits: save_scores(tmp, out["keys"], lg))
        _atomic(d / "labels.tsv", lambda tmp: save_labels(tmp, out["keys"], out["labels"]))
    return EXIT_OK


def cmd_fuse_eval(args) -> int:
    for p, what in ((args.front_scores, "front score file"), (args.left_scores, "left score file"), (args.labels, "label file")):
        _require_file(p, what)
    _announce("fuse-eval", vars(args) | {"func": None})
    row = fuse_and_evaluate(
        load_scores(args.front_scores), load_scores(args.left_scores), load_labels(args.labels),
        dataset=args.dataset_name, combine=args.combine,
    )
    _atomic(Path(args.out), lambda tmp: save_rows([row], tmp))
    print(json.dumps(row.to_dict()))
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for p in args.rows:
        rows.extend(load_rows(_require_file(p, "rows file")))
    baselines = {}
    for item in args.baseline or []:
        if "=" not in item:
            raise UsageError(f"--baseline expects METHOD=FRONT_METHOD, got {item!r}")
        k, v = item.split("=", 1)
        baselines[k] = v
    text, data = render_report(rows, baselines)
    print(text)
    if args.out_json:
        _atomic_write_text(Path(args.out_json), json.dumps(data, indent=2, sort_keys=True) + "\n")
    if args.out_text:
        _atomic_write_text(Path(args.out_text), text + "\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualview-slr", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan a frame tree into a validated manifest", allow_abbrev=False)
    p.add_argument("--root", help=f"dataset root (default: ${DATA_ROOT_ENV})")
    p.add_argument("--mapping", required=True, help="gloss mapping file, '<gloss_dir>\\t<label>' per line")
    p.add_argument("--partitions", nargs="*", default=[], help="train.txt / val.txt / test.txt partition files")
    p.add_argument("--out", required=True, help="manifest output path (.jsonl)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate the synthetic occlusion dataset", allow_abbrev=False)
    p.add_argument("--config", help="YAML/JSON file with SynthConfig fields")
    p.add_argument("--out", required=True, help="output directory (must be empty or absent)")
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="noise level >= 0")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--frames", type=int, help="frames per video")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a single-view model or a fusion bundle", allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", required=True, choices=("front", "left", "early", "late", "plus"))
    p.add_argument("--config", help="YAML/JSON with sections model/train/data/subset")
    p.add_argument("--out", required=True, help="output directory for checkpoints and histories")
    p.add_argument("--epochs", type=int, help="max epochs")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float, help="SGD learning rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--backbone", choices=("resnet34", "resnet18", "small"))
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--layers", type=int, help="encoder layers")
    p.add_argument("--heads", type=int, help="attention heads")
    p.add_argument("--subset-k", dest="subset_k", type=int, help="train on K randomly chosen glosses")
    p.add_argument("--subset-seed", dest="subset_seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoint(s) on a split", allow_abbrev=False)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint path; give front and left checkpoints to evaluate plus fusion")
    p.add_argument("--manifest", help="manifest (default: the one recorded in the checkpoint)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True, help="metrics row output (.jsonl)")
    p.add_argument("--dataset-name", dest="dataset_name")
    p.add_argument("--dump-scores", dest="dump_scores", help="directory for per-view logit files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse-eval", help="plus-fuse stored per-view logits and score them", allow_abbrev=False)
    p.add_argument("--front-scores", dest="front_scores", required=True)
    p.add_argument("--left-scores", dest="left_scores", required=True)
    p.add_argument("--labels", required=True, help="'<key>\\t<class>' per line")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-name", dest="dataset_name", default="")
    p.add_argument("--combine", default="logit_sum", choices=("logit_sum", "prob_mean"))
    p.set_defaults(func=cmd_fuse_eval)

    p = sub.add_parser("report", help="render a comparison table with improvement deltas", allow_abbrev=False)
    p.add_argument("--rows", nargs="+", required=True, help="metrics row files (.jsonl)")
    p.add_argument("--baseline", action="append", help="METHOD=FRONT_METHOD baseline override")
    p.add_argument("--out-json", dest="out_json")
    p.add_argument("--out-text", dest="out_text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (errors.DualViewError, OSError, ValueError, TypeError) as exc:
        category = getattr(exc, "category", "io" if isinstance(exc, OSError) else "invalid-argument")
        print(f"error: {category}: {exc}", file=sys.stderr)
        return _exit_code(exc) if isinstance(exc, errors.DualViewError) else (
            EXIT_DATA if isinstance(exc, OSError) else EXIT_USAGE
        )


if __name__ == "__main__":
    sys.exit(main())
