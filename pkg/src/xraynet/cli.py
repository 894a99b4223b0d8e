"""Command-line workflow: split -> train -> eval -> explain.

Exit codes are uniform: 0 success, 1 runtime failure (with a one-line
error on stderr), 2 usage error (argparse). Every run starts with a
single `config ...` echo line and ends with machine-grepable key=value
summary lines. All randomness flows from --seed flags.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data, metrics, models, oracles, persistence, training
from .tensor import Tensor


def _ratio_triple(text: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be comma-separated numbers, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"need exactly 3 ratios, got {len(parts)}")
    return parts


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xraynet",
        description="Train, evaluate, and explain small chest X-ray classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="scan a corpus and write a stratified manifest")
    p.add_argument("--input", required=True, help="dataset root (one subdirectory per class)")
    p.add_argument("--out", required=True, help="manifest CSV to write")
    p.add_argument("--ratios", type=_ratio_triple, default=(0.88, 0.08, 0.04), help="train,val,test fractions")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--model", required=True, choices=("baseline", "densenet121"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--metrics", required=True, help="per-epoch metrics CSV to write")
    p.add_argument("--no-augment", action="store_true", help="disable photometric augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--model-file", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=data.SPLITS)
    p.add_argument("--roc", required=True, help="ROC CSV to write")
    p.add_argument("--confusion", required=True, help="confusion CSV to write")
    p.add_argument("--dump-misclassified", metavar="DIR", help="write misclassified inputs as PNGs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="render a Grad-CAM overlay for one image")
    p.add_argument("--model-file", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="cls", required=True, choices=data.LABELS, help="class to explain")
    p.add_argument("--layer", help="tap layer name (default: the model's deepest block output)")
    p.add_argument("--out", required=True, help="overlay PNG to write")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.add_argument("--full", action="store_true", help="full-size oracle sweeps instead of the quick ones")
    p.add_argument("--inject-fault", metavar="NAME", help="force the named check to fail (harness test hook)")
    p.set_defaults(func=cmd_selftest)
    return parser


def _echo_config(args: argparse.Namespace) -> None:
    skip = {"func", "command"}
    fields = " ".join(
        f"{k.replace('_', '-')}={v}" for k, v in sorted(vars(args).items()) if k not in skip and v is not None
    )
    print(f"config command={args.command} {fields}".rstrip())


# ---------------------------------------------------------------------------
# subcommands


def cmd_split(args: argparse.Namespace) -> int:
    manifest = data.load_dataset(args.input)
    assigned = data.split(manifest, args.ratios, args.seed)
    data.write_manifest(assigned, args.out)
    c = assigned.counts()
    if assigned.skipped:
        print(f"skipped={assigned.skipped}")
    print(f"train={c['train']} val={c['val']} test={c['test']}")
    return 0


def _build_model(kind: str, seed: int) -> models.ModelGraph:
    if kind == "baseline":
        return models.build_baseline_cnn(init_seed=seed)
    return models.build_densenet121(init_seed=seed)


def cmd_train(args: argparse.Namespace) -> int:
    from . import reports  # deferred: matplotlib import is slow

    manifest = data.read_manifest(args.manifest)
    model = _build_model(args.model, args.seed)
    config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        augment=not args.no_augment,
    )
    model, history = training.train(model, manifest, config)
    persistence.save(
        model,
        args.out,
        metadata={
            "seed": str(args.seed),
            "epochs": str(args.epochs),
            "lr": str(args.lr),
            "batch": str(args.batch),
            "augment": "false" if args.no_augment else "true",
        },
    )
    training.write_metrics_csv(history, args.metrics)
    figure = os.path.splitext(args.metrics)[0] + ".png"
    reports.save_training_curves(history, figure)
    last = history[-1]
    print(
        f"epochs={last.epoch} train_acc={last.train_acc:.6f} val_acc={last.val_acc:.6f} "
        f"checkpoint={args.out} metrics={args.metrics} figure={figure}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from . import reports

    model = persistence.load(args.model_file)
    manifest = data.read_manifest(args.manifest)
    labels, scores, preds = training.predict_scores(model, manifest, args.split)
    p_true = np.where(np.asarray(labels) == 1, scores, 1.0 - scores)
    loss = float(-np.log(np.maximum(p_true, 1e-300)).mean())
    cm = metrics.confusion(labels, preds)
    curve = metrics.roc(scores, labels)
    auc_value = metrics.auc(curve)
    band = metrics.classify_auc_band(auc_value)
    metrics.write_roc_csv(curve, args.roc)
    metrics.write_confusion_csv(cm, args.confusion)
    roc_figure = os.path.splitext(args.roc)[0] + ".png"
    cm_figure = os.path.splitext(args.confusion)[0] + ".png"
    reports.save_roc_figure(curve, roc_figure)
    reports.save_confusion_figure(cm, cm_figure)
    if args.dump_misclassified:
        os.makedirs(args.dump_misclassified, exist_ok=True)
        rows = manifest.rows_for(args.split)
        for i, (t, p) in enumerate(zip(labels, preds)):
            if t != p:
                name = f"{i:05d}_true-{data.LABELS[t]}_pred-{data.LABELS[p]}.png"
                data.save_image_png(os.path.join(args.dump_misclassified, name), data.load_image(rows[i].path))
    print(
        f"n={len(labels)} accuracy={cm.accuracy():.6f} loss={loss:.6f} AUC={auc_value:.6f} band={band} "
        f"roc={args.roc} confusion={args.confusion}"
    )
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    model = persistence.load(args.model_file)
    image = data.load_image(args.image)
    c, h, w = model.input_shape
    batch = Tensor(data.preprocess(image, model.input_shape).numpy()[None])
    target = data.LABEL_TO_INDEX[args.cls]
    from . import gradcam as gc

    heat = gc.gradcam(model, batch, target, args.layer)
    heat_full = gc.upsample_bilinear(heat.values, h, w)
    display = data.preprocess(image, (c, h, w), mean=0.0, std=1.0)  # resized, unnormalized
    data.save_image_png(args.out, gc.overlay(heat_full, display))
    print(f"heatmap={args.out} layer={heat.layer} class={args.cls} class_index={target}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = oracles.gradcheck_results(seed=args.seed)
    for r in results:
        print(f"check={r.name} result={'pass' if r.passed else 'fail'} {r.detail}")
    ok = all(r.passed for r in results)
    print(f"gradcheck={'pass' if ok else 'fail'}")
    return 0 if ok else 1


def cmd_selftest(args: argparse.Namespace) -> int:
    results = oracles.run_selftest(args.inject_fault, quick=not args.full)
    for r in results:
        print(f"check={r.name} result={'pass' if r.passed else 'fail'} {r.detail}")
    failing = [r.name for r in results if not r.passed]
    if failing:
        print(f"selftest=fail failing={','.join(failing)}")
        return 1
    print("selftest=pass")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    _echo_config(args)
    try:
        return args.func(args)
    except Exception as e:  # uniform runtime-failure contract
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
