"""Command-line entry point: ``faceinteract <subcommand> ...``.

Failures print one JSON object on stderr, e.g.
``{"error": "missing-file", "message": "...", "path": "x.annot"}``, and exit
with a code specific to the failure kind (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation, facedesc, learn, merge, synth
from .data import FeatureVector, FormatError, ValidationError

log = logging.getLogger("faceinteract")

MODEL_FORMAT = "faceinteract-model"
MODEL_VERSION = 1
SCORES_FORMAT = "faceinteract-scores"
SCORES_VERSION = 1

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    "format": 4,
    "validation": 5,
    "training": 6,
    "io": 7,
    "internal": 1,
}


class CliError(Exception):
    def __init__(self, kind, message, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _csv(text):
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _floats(text):
    return [float(t) for t in _csv(text)]


def _dump_json(obj, path):
    data.atomic_write_text(path, json.dumps(obj, indent=1, allow_nan=False) + "\n")


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc


def _descriptor_config(args):
    return facedesc.DescriptorConfig(args.K, args.alpha, args.grid_rows, args.grid_cols, args.normalize)


def _channel_paths(args):
    base = Path(args.channel_dir) if args.channel_dir else Path(args.input).parent
    paths = {name: base / f"{name}.chan" for name in args.channels}
    for spec in args.chan or []:
        name, sep, path = spec.partition("=")
        if not sep:
            raise CliError("usage", f"--chan expects NAME=PATH, got {spec!r}")
        paths[name] = Path(path)
        if name not in args.channels:
            args.channels.append(name)
    return paths


def _load_mats(args, manifest):
    mats = {}
    for name, path in _channel_paths(args).items():
        vecs = data.load_channel(path, name, manifest)
        mats[name] = data.channel_matrix(vecs, manifest.ids())
    return mats


def _fixed_params(args):
    if args.cost is None and args.gamma is None:
        return None
    if args.cost is None or args.gamma is None:
        raise CliError("usage", "--cost and --gamma must be given together")
    return learn.SvmParams(args.cost, args.gamma, args.tol)


# ---------------------------------------------------------------------------
# subcommands


def cmd_merge(args):
    oriented = data.load_annotations(args.oriented, strict_labels=False).by_id()
    vj_manifest = data.load_annotations(args.vj, strict_labels=False)
    vj = vj_manifest.by_id()
    cfg = merge.MergeConfig(args.iou)
    ids = list(oriented) + [i for i in vj if i not in oriented]
    records, classes = [], []
    for rid in ids:
        base = oriented.get(rid) or vj[rid]
        o_faces = oriented[rid].faces if rid in oriented else ()
        v_faces = vj[rid].faces if rid in vj else ()
        faces = merge.merge_detections(o_faces, v_faces, cfg)
        records.append(data.ImageRecord(rid, base.width, base.height, base.label, tuple(faces)))
        if base.label not in classes:
            classes.append(base.label)
    data.save_annotations(data.DatasetManifest(records, classes), args.out)


def cmd_extract(args):
    manifest = data.load_annotations(args.input, strict_labels=False)
    cfg = _descriptor_config(args)
    names = ["facedesc"] + (list(facedesc.DESCRIPTORS[:-1]) if args.split else [])
    mats = facedesc.extract(manifest.records, cfg, names)
    echo = {"subcommand": "extract", "input": str(args.input), "descriptor": cfg.__dict__}
    out = Path(args.out)
    for name in names:
        path = out if name == "facedesc" else out.with_name(f"{name}.chan")
        vecs = [FeatureVector(rid, name, row) for rid, row in zip(manifest.ids(), mats[name])]
        data.save_channel(vecs, path, config=echo)


def cmd_synth(args):
    specs = synth.default_specs(args.jitter, args.flip_prob, args.dropout)
    manifest = synth.generate(specs, args.per_class, args.seed)
    data.save_annotations(manifest, args.out)


def _stack_to_dict(stack, config):
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": config,
        "channels": [stack.channel_models[ch].to_dict() for ch in stack.channels],
        "fusion": stack.fusion.to_dict(),
    }


def _stack_from_dict(d):
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise FormatError("not a supported model file")
    models = {m["channel"]: learn.TrainedChannelModel.from_dict(m) for m in d["channels"]}
    return learn.StackedModel(models, learn.FusionModel.from_dict(d["fusion"]))


def cmd_train(args):
    manifest = data.load_annotations(args.input)
    mats = _load_mats(args, manifest)
    labels = manifest.labels()
    classes = list(manifest.class_names)
    fixed = _fixed_params(args)
    params = {}
    for ch in mats:
        params[ch] = fixed or learn.grid_search(mats[ch], labels, classes, args.costs, args.gammas,
                                                args.inner_folds, args.seed, args.tol, args.threads)
    stack = learn.fit_stack(mats, labels, classes, params, args.inner_folds, args.seed, args.fusion_cost,
                            args.threads)
    config = {
        "subcommand": "train",
        "input": str(args.input),
        "channels": list(mats),
        "params": {ch: p.to_dict() for ch, p in params.items()},
        "inner_folds": args.inner_folds,
        "seed": args.seed,
        "fusion_cost": args.fusion_cost,
    }
    _dump_json(_stack_to_dict(stack, config), args.out)


def cmd_predict(args):
    stack = _stack_from_dict(_read_json(args.model))
    manifest = data.load_annotations(args.input, class_names=stack.fusion.class_names, strict_labels=False)
    args.channels = list(stack.channels)
    mats = _load_mats(args, manifest)
    per_channel, fused = stack.predict(mats)
    classes = list(stack.fusion.class_names)
    scores = {}
    for k, rid in enumerate(manifest.ids()):
        entry = {"predicted": classes[int(np.argmax(fused[k]))], "fused": fused[k].tolist()}
        for ch in stack.channels:
            entry[ch] = per_channel[ch][k].tolist()
        scores[rid] = entry
    _dump_json({"format": SCORES_FORMAT, "version": SCORES_VERSION, "class_names": classes,
                "channels": list(stack.channels), "scores": scores}, args.out)


def cmd_eval(args):
    manifest = data.load_annotations(args.input)
    mats = _load_mats(args, manifest)
    fixed = _fixed_params(args)
    cfg = evaluation.EvalConfig(
        folds=args.folds,
        inner_folds=args.inner_folds,
        seed=args.seed,
        costs=tuple(args.costs),
        gammas=tuple(args.gammas),
        params=None if fixed is None else {ch: fixed for ch in mats},
        tol=args.tol,
        fusion_cost=args.fusion_cost,
        threads=args.threads,
    )
    report = evaluation.run_cv(manifest, mats, cfg)
    out = report.to_dict()
    out["config"]["input"] = str(args.input)
    if args.out:
        _dump_json(out, args.out)
    print(evaluation.format_table(report))


def cmd_report(args):
    report = evaluation.EvalReport.from_dict(_read_json(args.input))
    print(evaluation.format_table(report))


# ---------------------------------------------------------------------------


def _add_learning_flags(p):
    p.add_argument("--channels", type=_csv, default=["facedesc"], help="comma-separated channel names")
    p.add_argument("--chan", action="append", metavar="NAME=PATH", help="channel file location (repeatable)")
    p.add_argument("--channel-dir", help="directory holding <name>.chan files (default: next to --in)")
    p.add_argument("--cost", type=float, help="fixed SVM cost; skips the grid search (needs --gamma)")
    p.add_argument("--gamma", type=float, help="fixed RBF gamma; skips the grid search (needs --cost)")
    p.add_argument("--costs", type=_floats, default=list(learn.DEFAULT_COSTS))
    p.add_argument("--gammas", type=_floats, default=list(learn.DEFAULT_GAMMAS))
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--inner-folds", type=int, default=5)
    p.add_argument("--fusion-cost", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="faceinteract", description="Facial layout descriptors and interaction classifiers.")
    parser.add_argument("--version", action="store_true", help="print package and file-format versions")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("merge", help="combine oriented and frontal/profile detections")
    p.add_argument("--oriented", required=True)
    p.add_argument("--vj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, default=0.3)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("extract", help="compute facial descriptors into a channel file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", action="store_true", help="also write one channel file per descriptor")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--alpha", type=int, default=60)
    p.add_argument("--grid-rows", type=int, default=1)
    p.add_argument("--grid-cols", type=int, default=3)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic annotation file")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--flip-prob", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train channel classifiers and the fusion layer")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _add_learning_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score images with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chan", action="append", metavar="NAME=PATH")
    p.add_argument("--channel-dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="k-fold cross-validated AP of channels and their fusion")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--folds", type=int, default=5)
    _add_learning_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the AP table of a saved report")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _versions():
    return {
        "faceinteract": __version__,
        data.ANNOTATION_FORMAT: data.ANNOTATION_VERSION,
        data.CHANNEL_FORMAT: data.CHANNEL_VERSION,
        MODEL_FORMAT: MODEL_VERSION,
        SCORES_FORMAT: SCORES_VERSION,
        evaluation.REPORT_FORMAT: evaluation.REPORT_VERSION,
    }


def _fail(kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.version:
            for name, version in _versions().items():
                print(f"{name} {version}")
            return 0
        if not args.command:
            raise CliError("usage", "a subcommand is required")
        args.func(args)
        return 0
    except CliError as exc:
        return _fail(exc.kind, str(exc), **exc.extra)
    except FileNotFoundError as exc:
        return _fail("missing-file", f"no such file: {exc.filename}", path=str(exc.filename))
    except ValidationError as exc:
        return _fail("validation", str(exc), record=exc.record_id)
    except FormatError as exc:
        return _fail("format", str(exc), record=exc.record_id, line=exc.line)
    except learn.DegenerateTrainingError as exc:
        return _fail("training", str(exc))
    except OSError as exc:
        return _fail("io", str(exc), path=str(getattr(exc, "filename", "")))


if __name__ == "__main__":
    sys.exit(main())
