"""Command-line entry point.

Subcommands: train, synth, study make|serve|report, perceiver convert,
params, dataset. Configs are strict JSON (unknown keys are rejected);
logs are JSONL.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import EncoderDecoderConfig, FullResConfig, build_encoder_decoder, \
    build_fullres, param_count_encdec, param_count_fullres
from .cascade import CascadeConfig, CascadeModel, param_count
from .errors import CrnError, ConfigError
from .layout import Dataset, load_remap_table
from .perceiver import RandomPerceiver, convert_torch_vgg19, load_perceiver_weights
from .study import ResponseStore, SentinelSpec, StudyBatch, aggregate, make_batch, \
    render_report
from .server import serve_study
from .trainer import TrainConfig, synthesize, train


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}")


_MODEL_BUILDERS = {
    "cascade": (CascadeConfig, lambda cfg, res, seed: CascadeModel(cfg, seed=seed)),
    "fullres": (FullResConfig, lambda cfg, res, seed: build_fullres(cfg, resolution=res, seed=seed)),
    "encdec": (EncoderDecoderConfig, lambda cfg, res, seed: build_encoder_decoder(cfg, resolution=res, seed=seed)),
}

_TOP_KEYS = {"kind", "model", "dataset", "train", "perceiver"}
_DATASET_KEYS = {"manifest", "num_classes", "remap", "strict_remap"}
_PERCEIVER_KEYS = {"kind", "seed", "channels", "archive"}


def _build_from_config(obj, seed_override=None):
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kind = obj.get("kind", "cascade")
    if kind not in _MODEL_BUILDERS:
        raise ConfigError(f"unknown model kind {kind!r}")
    for key in ("model", "dataset", "train"):
        if key not in obj:
            raise ConfigError(f"config missing {key!r} section")

    ds_cfg = obj["dataset"]
    unknown = set(ds_cfg) - _DATASET_KEYS
    if unknown:
        raise ConfigError(f"unknown dataset keys {sorted(unknown)}")
    remap = load_remap_table(ds_cfg["remap"]) if ds_cfg.get("remap") else None
    dataset = Dataset.from_manifest(ds_cfg["manifest"], ds_cfg["num_classes"],
                                    remap, ds_cfg.get("strict_remap", False))

    train_cfg = TrainConfig.from_json(obj["train"])
    if seed_override is not None:
        train_cfg.seed = seed_override

    cfg_cls, builder = _MODEL_BUILDERS[kind]
    model_obj = dict(obj["model"])
    model_obj.setdefault("num_classes", ds_cfg["num_classes"])
    if model_obj["num_classes"] != ds_cfg["num_classes"]:
        raise ConfigError("model num_classes disagrees with dataset num_classes")
    model_obj.setdefault("output_multiplicity", train_cfg.k)
    if model_obj["output_multiplicity"] != train_cfg.k:
        raise ConfigError("model output_multiplicity disagrees with train.k")
    model_cfg = cfg_cls.from_json(model_obj)
    resolution = dataset[0][0].shape[:2]
    model = builder(model_cfg, resolution, train_cfg.seed)

    perceiver = None
    if "perceiver" in obj:
        p = obj["perceiver"]
        unknown = set(p) - _PERCEIVER_KEYS
        if unknown:
            raise ConfigError(f"unknown perceiver keys {sorted(unknown)}")
        if p.get("kind", "random") == "random":
            perceiver = RandomPerceiver(seed=p.get("seed", 0),
                                        channels=tuple(p.get("channels", (16, 24, 32))))
        elif p["kind"] == "archive":
            perceiver = load_perceiver_weights(p["archive"])
        else:
            raise ConfigError(f"unknown perceiver kind {p['kind']!r}")
    return model, dataset, train_cfg, perceiver


def cmd_train(args):
    obj = _read_json(args.config)
    model, dataset, train_cfg, perceiver = _build_from_config(obj, args.seed)
    result = train(model, dataset, train_cfg, perceiver, args.out)
    print(f"trained {model.kind} for {result.state.step} steps; "
          f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_synth(args):
    layouts = []
    for item in args.layouts:
        p = Path(item)
        if p.is_dir():
            layouts.extend(sorted(str(q) for q in p.glob("*.png")))
        else:
            layouts.append(str(p))
    if not layouts:
        raise ConfigError("no layout files given")
    remap = load_remap_table(args.remap) if args.remap else None
    refs = args.references.split(",") if args.references else None
    written = synthesize(args.checkpoint, layouts, args.out, select=args.select,
                         remap_table=remap, reference_paths=refs)
    print(f"wrote {len(written)} images to {args.out}")
    return 0


def cmd_params(args):
    obj = _read_json(args.config)
    kind = obj.pop("kind", "cascade")
    if kind == "cascade":
        n = param_count(CascadeConfig.from_json(obj))
    elif kind == "fullres":
        n = param_count_fullres(FullResConfig.from_json(obj))
    elif kind == "encdec":
        n = param_count_encdec(EncoderDecoderConfig.from_json(obj))
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    print(n)
    return 0


def cmd_study_make(args):
    conditions = _read_json(args.conditions)
    if not isinstance(conditions, dict):
        raise ConfigError("conditions manifest must be a JSON object of id -> directory")
    layout_ids = [l.strip() for l in Path(args.layout_ids).read_text().splitlines()
                  if l.strip()]
    sentinel = None
    if args.sentinel_reference:
        if not args.sentinel_weak:
            raise ConfigError("--sentinel-weak is required with --sentinel-reference")
        sentinel = SentinelSpec(args.sentinel_reference, args.sentinel_weak,
                                args.sentinel_count)
    batch = make_batch(conditions, layout_ids, sentinel,
                       timing_mode=args.timing, seed=args.seed)
    batch.save(args.out)
    print(f"wrote batch of {len(batch.trials)} trials to {args.out} "
          f"(hash {batch.content_hash()[:12]})")
    return 0


def cmd_study_serve(args):
    batch = StudyBatch.load(args.batch)
    store = ResponseStore(args.responses, batch)
    server = serve_study(store, batch, args.bind,
                         sentinel_fail_threshold=args.sentinel_threshold,
                         frontend_dir=args.frontend)
    print(f"serving study at {server.url} (Ctrl+C to stop)")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_study_report(args):
    batch = StudyBatch.load(args.batch)
    store = ResponseStore(args.responses, batch)
    result = aggregate(store, batch, args.sentinel_threshold)
    if args.json:
        print(json.dumps(result.to_json(), indent=1, sort_keys=True))
    else:
        print(render_report(result))
    return 0


def cmd_perceiver_convert(args):
    out = convert_torch_vgg19(args.source, args.out)
    perceiver = load_perceiver_weights(out)
    print(f"wrote perceiver archive {out} with taps {list(perceiver.spec.tap_names)}")
    return 0


def cmd_dataset(args):
    from .synthdata import make_synthetic_dataset
    manifest = make_synthetic_dataset(args.out, n_pairs=args.pairs,
                                      size=(args.height, args.width),
                                      num_classes=args.classes, seed=args.seed,
                                      shared_layout_refs=args.shared_layout_refs)
    print(f"wrote {manifest}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="crnsynth",
                                     description="Cascaded refinement synthesis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--select", choices=("all", "best"), default="all")
    p.add_argument("--remap", help="JSON remap table for raw label ids")
    p.add_argument("--references", help="comma-separated reference images for --select best")
    p.add_argument("layouts", nargs="+", help="label-map files or directories")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("params", help="print the parameter count for a model config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)

    study = sub.add_parser("study", help="perceptual study tooling")
    ssub = study.add_subparsers(dest="study_command", required=True)

    p = ssub.add_parser("make", help="build a randomized trial batch")
    p.add_argument("--conditions", required=True, help="JSON {condition: directory}")
    p.add_argument("--layout-ids", required=True, help="text file, one layout id per line")
    p.add_argument("--timing", choices=("unlimited", "timed"), default="unlimited")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sentinel-reference", help="condition id of real photos")
    p.add_argument("--sentinel-weak", help="condition id of the weak synthesis")
    p.add_argument("--sentinel-count", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study_make)

    p = ssub.add_parser("serve", help="serve a batch over HTTP")
    p.add_argument("--batch", required=True)
    p.add_argument("--responses", required=True, help="JSONL response log (appended)")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--sentinel-threshold", type=int, default=2)
    p.add_argument("--frontend", help="directory with the built browser client")
    p.set_defaults(func=cmd_study_serve)

    p = ssub.add_parser("report", help="aggregate a response log")
    p.add_argument("--batch", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--sentinel-threshold", type=int, default=2)
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.set_defaults(func=cmd_study_report)

    perc = sub.add_parser("perceiver", help="perceiver weight tooling")
    psub = perc.add_subparsers(dest="perceiver_command", required=True)
    p = psub.add_parser("convert", help="convert VGG-19 weights to the archive format")
    p.add_argument("--source", required=True, help=".pth state dict or .npz export")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perceiver_convert)

    p = sub.add_parser("dataset", help="generate a synthetic desk-scale dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shared-layout-refs", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CrnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
