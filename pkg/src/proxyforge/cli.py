"""Command-line surface tying the pipeline together.

Subcommands: synth, train-adapt, infer, proxy, train-proxy, eval,
gradcheck. Exit codes: 0 success, 2 usage, 3 missing/dangling input,
4 validation failure, 1 anything else. Errors print one line of the form
``error: <kind>: <message>`` to stderr. Log verbosity comes from the
PROXYFORGE_LOG environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .manifest import ManifestError, load_manifest, save_manifest
from .metrics import format_iou_table, proxy_report
from .nets import ModelConfig, ToyModel
from .proxy import ProxyParams, run_pipeline
from .synthdata import SceneConfig, generate_dataset
from .tensors import LabelMap, TensorError, load_tensor
from .trainer import (
    TrainConfig,
    evaluate_miou,
    infer_maps,
    train_adapt,
    train_on_proxies,
)

log = logging.getLogger("proxyforge")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_VALIDATION = 4


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("PROXYFORGE_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _dataclass_from(cls, overrides: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {
        k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()
    }
    return cls(**coerced)


def _load_configs(args):
    """Config file is JSON with optional scene/model/train sections."""
    sections = {"scene": {}, "model": {}, "train": {}}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        loaded = json.loads(path.read_text(encoding="utf-8"))
        for key in loaded:
            if key not in sections:
                raise ValueError(f"unknown config section {key!r}")
            sections[key] = loaded[key]
    if args.seed is not None:
        sections["scene"]["seed"] = args.seed
        sections["train"]["seed"] = args.seed
    scene = _dataclass_from(SceneConfig, sections["scene"])
    model = _dataclass_from(ModelConfig, sections["model"])
    train = _dataclass_from(TrainConfig, sections["train"])
    return scene, model, train


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="proxyforge",
        description="Toy domain-adaptive segmentation pipeline with "
        "adversarial-confidence proxy labels.",
    )
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="worker threads for embarrassingly parallel stages",
    )
    parser.add_argument("--config", default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic source/target dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-source", type=int, default=200)
    p.add_argument("--n-target", type=int, default=200)

    p = sub.add_parser("train-adapt", help="multi-adversarial training run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="output checkpoint directory")
    p.add_argument("--log-file", default=None)

    p = sub.add_parser("infer", help="export scoremaps and discriminator maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-manifest", default=None)

    p = sub.add_parser("proxy", help="generate proxy labels from exported maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p1", type=float, default=0.6)
    p.add_argument("--p2", type=float, default=0.8)
    p.add_argument("--out-manifest", default=None)

    p = sub.add_parser("train-proxy", help="retrain from scratch on proxy labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log-file", default=None)

    p = sub.add_parser("eval", help="mIoU of a checkpoint and/or proxy quality")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--proxies", action="store_true", help="evaluate proxy maps")

    sub.add_parser("gradcheck", help="finite-difference checks of all autodiff ops")
    return parser


def _cmd_synth(args, scene, model, train):
    man = generate_dataset(scene, args.n_source, args.n_target, args.out)
    print(f"wrote {len(man.entries)} manifest entries under {args.out}")
    return EXIT_OK


def _cmd_train_adapt(args, scene, model_cfg, train_cfg):
    man = load_manifest(args.manifest)
    model = train_adapt(man, model_cfg, train_cfg, log_path=args.log_file)
    model.save(args.checkpoint)
    print(f"checkpoint written to {args.checkpoint}")
    return EXIT_OK


def _load_model(model_cfg, ckpt) -> ToyModel:
    model = ToyModel(model_cfg, np.random.default_rng(0))
    model.load(ckpt)
    return model


def _cmd_infer(args, scene, model_cfg, train_cfg):
    man = load_manifest(args.manifest)
    model = _load_model(model_cfg, args.checkpoint)
    updated = infer_maps(man, model, args.out, threads=args.threads)
    out_manifest = args.out_manifest or args.manifest
    save_manifest(updated, out_manifest)
    print(f"inference maps written to {args.out}; manifest: {out_manifest}")
    return EXIT_OK


def _cmd_proxy(args, scene, model_cfg, train_cfg):
    man = load_manifest(args.manifest)
    params = ProxyParams(p1=args.p1, p2=args.p2)
    updated, report = run_pipeline(
        man, params, args.out, threads=args.threads
    )
    out_manifest = args.out_manifest or args.manifest
    save_manifest(updated, out_manifest)
    print(
        f"t1={report.t1:.6g} labeled_fraction={report.labeled_fraction:.4f} "
        f"report={Path(args.out) / 'report.json'}"
    )
    return EXIT_OK


def _cmd_train_proxy(args, scene, model_cfg, train_cfg):
    man = load_manifest(args.manifest)
    model = train_on_proxies(man, model_cfg, train_cfg, log_path=args.log_file)
    model.save(args.checkpoint)
    print(f"checkpoint written to {args.checkpoint}")
    return EXIT_OK


def _cmd_eval(args, scene, model_cfg, train_cfg):
    man = load_manifest(args.manifest)
    if args.checkpoint:
        model = _load_model(model_cfg, args.checkpoint)
        iou, mean = evaluate_miou(model, man, model_cfg.classes)
        print(format_iou_table(iou, mean))
        print(f"miou={mean:.6f}")
    if args.proxies:
        precisions, coverages = [], []
        for e in man.by_role("target-train"):
            if e.proxy is None:
                raise ManifestError(f"entry {e.id!r} has no proxy map")
            gt_entry = man.entry(e.id + "_eval")
            gt = LabelMap(load_tensor(man.resolve(gt_entry.gt)).data)
            px = LabelMap(load_tensor(man.resolve(e.proxy)).data)
            rep = proxy_report(gt, px, model_cfg.classes)
            precisions.append(rep["precision"])
            coverages.append(rep["coverage"])
        print(f"proxy_precision={np.nanmean(precisions):.6f}")
        print(f"proxy_coverage={float(np.mean(coverages)):.6f}")
    if not args.checkpoint and not args.proxies:
        raise ValueError("eval needs --checkpoint and/or --proxies")
    return EXIT_OK


def _cmd_gradcheck(args, scene, model_cfg, train_cfg):
    from .gradcheck_suite import run_all_checks

    worst = run_all_checks(verbose=True)
    print(f"worst relative error: {worst:.3e}")
    return EXIT_OK if worst < 1e-5 else EXIT_VALIDATION


_COMMANDS = {
    "synth": _cmd_synth,
    "train-adapt": _cmd_train_adapt,
    "infer": _cmd_infer,
    "proxy": _cmd_proxy,
    "train-proxy": _cmd_train_proxy,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        scene, model_cfg, train_cfg = _load_configs(args)
        return _COMMANDS[args.command](args, scene, model_cfg, train_cfg)
    except (FileNotFoundError, ManifestError) as exc:
        print(f"error: missing-input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (TensorError, ValueError, FloatingPointError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: internal: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
