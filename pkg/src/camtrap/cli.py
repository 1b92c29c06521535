"""``camtrap`` command-line entry point.

Exit codes: 0 ok, 2 config, 3 dataset, 4 compatibility, 5 numerical.
The default output root is taken from ``CAMTRAP_OUTPUT_ROOT`` when a
config's ``output_dir`` is relative.
"""
import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from . import gradcheck
from .autograd import corrupt_backward
from .datakit import (
    ManifestError,
    PartitionError,
    PartitionSpec,
    Pipeline,
    SynthSceneConfig,
    build_partition,
    condition_counts,
    ensure_valid,
    load_split,
    read_manifest,
    synth_generate,
    synth_scenes,
    write_manifest,
)
from .evalkit import bars_csv, emit_report, evaluate, load_report, per_class_csv
from .nets import FAMILIES, ArchitectureSpec, build_architecture, replace_classifier_head
from .seeding import derive_seed
from .trainer import (
    CheckpointError,
    TrainConfig,
    feature_extraction_fit,
    history_text,
    progressive_finetune,
    read_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_COMPAT, EXIT_NUMERICAL = 0, 2, 3, 4, 5
OUTPUT_ROOT_ENV = "CAMTRAP_OUTPUT_ROOT"
TRAIN_MODES = ("scratch", "feature-extraction", "finetune")

log = logging.getLogger("camtrap")


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _reject_unknown(section, data, allowed):
    if not isinstance(data, dict):
        raise CLIError(EXIT_CONFIG, f"config section {section!r} must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise CLIError(EXIT_CONFIG, f"unknown keys in {section!r}: {', '.join(unknown)}")


_TOP = ("seed", "output_dir", "dataset", "architecture", "train", "finetune", "eval")
_DATASET = ("manifest", "synth", "partition", "image_side")
_PARTITION = ("mode", "train_quota", "eval_quota", "seed")
_FINETUNE = ("patience", "min_delta")


def _names(cls):
    return [f.name for f in fields(cls)]


def resolve_config(raw, base_dir=Path(".")):
    """Validate a raw config mapping and fill every default explicitly."""
    raw = raw or {}
    _reject_unknown("top level", raw, _TOP)
    seed = int(raw.get("seed", 0))
    ds = dict(raw.get("dataset") or {})
    _reject_unknown("dataset", ds, _DATASET)
    if ds.get("manifest") is None and ds.get("synth") is None:
        raise CLIError(EXIT_CONFIG, "dataset needs either 'manifest' or 'synth'")
    resolved_ds = {"image_side": int(ds.get("image_side", 32))}
    if ds.get("manifest") is not None:
        path = Path(ds["manifest"])
        resolved_ds["manifest"] = str(path if path.is_absolute() else (base_dir / path))
    if ds.get("synth") is not None:
        synth = dict(ds["synth"])
        _reject_unknown("dataset.synth", synth, _names(SynthSceneConfig))
        synth.setdefault("seed", derive_seed(seed, "synth"))
        try:
            resolved_ds["synth"] = SynthSceneConfig.from_dict(synth).validate().to_dict()
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from None
    if ds.get("partition") is not None:
        part = dict(ds["partition"])
        _reject_unknown("dataset.partition", part, _PARTITION)
        part.setdefault("seed", derive_seed(seed, "partition"))
        try:
            spec = PartitionSpec(**part).validate()
        except (TypeError, ValueError) as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from None
        resolved_ds["partition"] = {k: getattr(spec, k) for k in _PARTITION}

    arch = dict(raw.get("architecture") or {})
    _reject_unknown("architecture", arch, _names(ArchitectureSpec))
    arch.setdefault("input_side", resolved_ds["image_side"])

    tr = dict(raw.get("train") or {})
    mode = tr.pop("mode", "scratch")
    if mode not in TRAIN_MODES:
        raise CLIError(EXIT_CONFIG, f"train.mode must be one of {TRAIN_MODES}, got {mode!r}")
    _reject_unknown("train", tr, _names(TrainConfig))
    tr.setdefault("seed", derive_seed(seed, "train"))
    try:
        train_cfg = TrainConfig.from_dict(tr).validate().to_dict()
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None
    train_cfg["mode"] = mode

    ft = dict(raw.get("finetune") or {})
    _reject_unknown("finetune", ft, _FINETUNE)
    ft = {"patience": int(ft.get("patience", 1)), "min_delta": float(ft.get("min_delta", 0.0))}
    if ft["patience"] < 1:
        raise CLIError(EXIT_CONFIG, "finetune.patience must be >= 1")

    ev = dict(raw.get("eval") or {})
    _reject_unknown("eval", ev, ("ks",))
    ks = sorted({int(k) for k in ev.get("ks", [1, 5])})
    if not ks or ks[0] < 1:
        raise CLIError(EXIT_CONFIG, "eval.ks must be positive integers")

    return {
        "seed": seed,
        "output_dir": str(raw.get("output_dir", "camtrap-run")),
        "dataset": resolved_ds,
        "architecture": arch,
        "train": train_cfg,
        "finetune": ft,
        "eval": {"ks": ks},
    }


def load_config(path, manifest=None):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CLIError(EXIT_CONFIG, f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise CLIError(EXIT_CONFIG, f"malformed config: {exc}") from None
    if manifest is not None and isinstance(raw, dict) and isinstance(raw.get("dataset"), dict):
        raw["dataset"] = {k: v for k, v in raw["dataset"].items() if k != "synth"}
        raw["dataset"]["manifest"] = str(Path(manifest).resolve())
    return resolve_config(raw, path.parent)


def output_dir(cfg, override=None):
    out = Path(override or cfg["output_dir"])
    if not out.is_absolute():
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_echo(cfg, out, name="resolved_config.yaml"):
    (out / name).write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _dataset(cfg):
    """(manifest, image root, in-memory images) with the configured partition applied."""
    ds = cfg["dataset"]
    images, root = None, None
    try:
        if "manifest" in ds:
            manifest = read_manifest(ds["manifest"])
            root = Path(ds["manifest"]).parent
        else:
            images, manifest = synth_scenes(SynthSceneConfig.from_dict(ds["synth"]))
        if "partition" in ds:
            manifest = build_partition(manifest, PartitionSpec(**ds["partition"]))
    except (ManifestError, PartitionError) as exc:
        raise CLIError(EXIT_DATASET, str(exc)) from None
    except (OSError, ValueError) as exc:
        raise CLIError(EXIT_DATASET, f"cannot load dataset: {exc}") from None
    return manifest, root, images


def _splits(cfg, manifest, root, images):
    pipe = Pipeline(side=cfg["dataset"]["image_side"])
    try:
        return (
            load_split(manifest, "train", pipe, root, images),
            load_split(manifest, "eval", pipe, root, images),
        )
    except (OSError, ValueError, RuntimeError) as exc:
        raise CLIError(EXIT_DATASET, str(exc)) from None


def _train_config(cfg):
    return TrainConfig.from_dict({k: v for k, v in cfg["train"].items() if k != "mode"})


def _load_ckpt(path):
    try:
        return read_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise CLIError(EXIT_COMPAT, f"cannot load checkpoint {path}: {exc}") from None


def _adapt_head(model, n_classes, seed):
    """Swap the head when the checkpoint was trained on a different label set."""
    if model.spec.num_classes == n_classes:
        return model
    log.info("replacing %d-way head with %d-way head", model.spec.num_classes, n_classes)
    return replace_classifier_head(model, n_classes, seed=derive_seed(seed, "head"))


def _finetune(cfg, model, train_data, eval_data, out):
    model, state = progressive_finetune(
        model,
        train_data,
        _train_config(cfg),
        patience=cfg["finetune"]["patience"],
        min_delta=cfg["finetune"]["min_delta"],
        eval_data=eval_data,
        checkpoint_dir=out,
    )
    (out / "history.csv").write_text(history_text(state.epochs), encoding="utf-8")
    _write_json(
        out / "finetune_state.json",
        {
            "rounds": state.round + 1,
            "schedule": state.schedule,
            "history": state.history,
            "best_round": state.best_round,
            "best_checkpoint": Path(state.best_checkpoint).name,
            "stop_reason": state.stop_reason,
        },
    )
    print(f"best round {state.best_round} top1={state.history[state.best_round]:.4f} ({state.stop_reason})")
    return model


def cmd_synth(args):
    cfg = load_config(args.config)
    if "synth" not in cfg["dataset"]:
        raise CLIError(EXIT_CONFIG, "config has no dataset.synth section")
    out = output_dir(cfg, args.output_dir)
    synth_cfg = SynthSceneConfig.from_dict(cfg["dataset"]["synth"])
    _, manifest = synth_generate(synth_cfg, out)
    ensure_valid(manifest)
    write_echo(cfg, out)
    for split in ("train", "eval"):
        counts = manifest.class_counts(split)
        print(f"[{split}] " + " ".join(f"{k}={v}" for k, v in counts.items()))
    print("conditions: " + " ".join(f"{k}={v}" for k, v in condition_counts(manifest).items()))
    return EXIT_OK


def cmd_dataset(args):
    try:
        full = read_manifest(args.manifest)
        spec = PartitionSpec(args.mode, args.train_quota, args.eval_quota, args.seed).validate()
    except ManifestError as exc:
        raise CLIError(EXIT_DATASET, str(exc)) from None
    except OSError as exc:
        raise CLIError(EXIT_DATASET, f"cannot read manifest: {exc}") from None
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None
    try:
        part = build_partition(full, spec)
    except PartitionError as exc:
        if exc.report:
            print(json.dumps(exc.report, sort_keys=True), file=sys.stderr)
        raise CLIError(EXIT_DATASET, str(exc)) from None
    out = Path(args.out)
    if out.suffix != ".jsonl":
        out = out / f"manifest_{args.mode}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    src = Path(args.manifest).resolve().parent
    if out.resolve().parent != src:
        # keep image references valid relative to the new location
        for r in part.records:
            if r.uri and not Path(r.uri).is_absolute():
                r.uri = os.path.relpath(src / r.uri, out.resolve().parent)
    write_manifest(part, out)
    report = part.provenance["partition"]
    _write_json(out.with_suffix(".report.json"), report)
    print(f"{args.mode}: {len(part.records)} records ({report['excluded']} excluded)")
    for split, counts in report["counts"].items():
        print(f"[{split}] " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config, args.manifest)
    out = output_dir(cfg, args.output_dir)
    manifest, root, images = _dataset(cfg)
    train_data, eval_data = _splits(cfg, manifest, root, images)
    n_classes = len(manifest.class_table)
    mode = cfg["train"]["mode"]
    seed = cfg["seed"]
    if mode == "scratch":
        arch = dict(cfg["architecture"])
        arch.setdefault("num_classes", n_classes)
        try:
            spec = ArchitectureSpec.from_dict(arch).validate()
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from None
        if spec.num_classes != n_classes:
            raise CLIError(EXIT_COMPAT, f"architecture has {spec.num_classes} classes, dataset {n_classes}")
        model = build_architecture(spec, seed=derive_seed(seed, "init"))
        model, hist = train(model, train_data, _train_config(cfg), model.groups, eval_data=eval_data)
        (out / "history.csv").write_text(history_text(hist), encoding="utf-8")
        print(f"final loss {hist[-1]['loss']:.4f} eval top1 {hist[-1]['eval_top1']:.4f}")
    else:
        if not args.checkpoint:
            raise CLIError(EXIT_CONFIG, f"train.mode={mode} needs --checkpoint")
        model = _adapt_head(_load_ckpt(args.checkpoint).model, n_classes, seed)
        if mode == "finetune":
            model = _finetune(cfg, model, train_data, eval_data, out)
        else:
            model.set_trainable([model.head_name])
            model, hist = feature_extraction_fit(model, train_data, _train_config(cfg), eval_data)
            (out / "history.csv").write_text(history_text(hist), encoding="utf-8")
    save_checkpoint(model, out / "model.ckpt", config=cfg)
    write_echo(cfg, out)
    return EXIT_OK


def cmd_finetune(args):
    cfg = load_config(args.config, args.manifest)
    cfg["train"]["mode"] = "finetune"
    out = output_dir(cfg, args.output_dir)
    manifest, root, images = _dataset(cfg)
    train_data, eval_data = _splits(cfg, manifest, root, images)
    model = _adapt_head(_load_ckpt(args.checkpoint).model, len(manifest.class_table), cfg["seed"])
    model = _finetune(cfg, model, train_data, eval_data, out)
    save_checkpoint(model, out / "model.ckpt", config=cfg)
    write_echo(cfg, out)
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config, args.manifest)
    out = output_dir(cfg, args.output_dir)
    manifest, root, images = _dataset(cfg)
    model = _load_ckpt(args.checkpoint).model
    if model.spec.num_classes != len(manifest.class_table):
        raise CLIError(
            EXIT_COMPAT,
            f"class mismatch: checkpoint predicts {model.spec.num_classes} classes, "
            f"manifest has {len(manifest.class_table)}",
        )
    _, eval_data = _splits(cfg, manifest, root, images)
    ks = [k for k in cfg["eval"]["ks"] if k <= model.spec.num_classes]
    label = args.label or model.spec.family
    meta = {
        "architecture": label,
        "dataset": args.dataset or manifest.conditioning or "D1",
        "seed": cfg["seed"],
    }
    report = evaluate(model, eval_data, ks=ks, class_table=manifest.class_table, metadata=meta)
    emit_report(report, out, fmt="structured-text")
    emit_report(report, out, fmt="csv", label=label)
    write_echo(cfg, out, "resolved_config.eval.yaml")
    print(" ".join(f"top{k}={v:.4f}" for k, v in sorted(report.topk.items())))
    return EXIT_OK


def cmd_report(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by_dataset = {}
    for path in args.reports:
        try:
            rep = load_report(path)
        except (OSError, ValueError, KeyError) as exc:
            raise CLIError(EXIT_CONFIG, f"cannot read report {path}: {exc}") from None
        label = rep.metadata.get("architecture", Path(path).parent.name)
        dataset = rep.metadata.get("dataset", "D1")
        top1 = rep.topk.get(1, 0.0)
        by_dataset.setdefault(dataset, []).append((label, top1, rep.topk.get(5, top1)))
        (out / f"per_class_{label}_{dataset}.csv").write_text(per_class_csv(rep.per_class), encoding="utf-8")
    for dataset, rows in sorted(by_dataset.items()):
        (out / f"bars_{dataset}.csv").write_text(bars_csv(rows), encoding="utf-8")
        print(f"{dataset}: {len(rows)} architecture rows")
    return EXIT_OK


def cmd_gradcheck(args):
    families = [args.arch] if args.arch else None
    tol = args.tol
    worst_name, worst = None, 0.0
    ctx = corrupt_backward(args.corrupt) if args.corrupt else contextlib.nullcontext()
    with ctx:
        results = gradcheck.run(families)
    for name, err, secs in results:
        status = "ok" if err <= tol else "FAIL"
        print(f"{name:32s} {err:.3e} {secs:6.2f}s {status}")
        if err > worst or worst_name is None:
            worst_name, worst = name, err
    print(f"worst relative error {worst:.3e} ({worst_name})")
    failing = [name for name, err, _ in results if err > tol]
    if failing:
        raise CLIError(EXIT_NUMERICAL, f"gradient check failed for op {failing[0]}: {', '.join(failing)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="camtrap", description="Camera-trap species classification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config")
        sp.add_argument("--output-dir", help="override output_dir from the config")
        if name != "synth":
            sp.add_argument("--manifest", help="use this manifest instead of the config's dataset source")
        return sp

    with_config("synth", "generate synthetic scenes and a manifest").set_defaults(fn=cmd_synth)

    sp = sub.add_parser("dataset", help="derive a D1-D4 partition from a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--mode", choices=("D1", "D2", "D3", "D4"), default="D1")
    sp.add_argument("--train-quota", type=int, default=1000)
    sp.add_argument("--eval-quota", type=int, default=240)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output .jsonl path or directory")
    sp.set_defaults(fn=cmd_dataset)

    sp = with_config("train", "train from scratch, or fit/fine-tune from a checkpoint")
    sp.add_argument("--checkpoint")
    sp.set_defaults(fn=cmd_train)

    sp = with_config("finetune", "progressive fine-tuning from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(fn=cmd_finetune)

    sp = with_config("eval", "evaluate a checkpoint on the eval split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--label", help="architecture label for bar rows")
    sp.add_argument("--dataset", help="dataset id recorded in the report")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("report", help="render per-class and bar CSVs from eval reports")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and a micro model")
    sp.add_argument("--arch", choices=FAMILIES)
    sp.add_argument("--tol", type=float, default=gradcheck.TOL)
    sp.add_argument("--corrupt", help=argparse.SUPPRESS)
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
