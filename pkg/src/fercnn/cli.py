"""Command-line interface: train, eval, predict, serve.

Training options can also come from a flat key=value config file (keys are
the long flag names without the leading dashes); explicit flags win over the
file, the file wins over built-in defaults. `FER_DATA_DIR` supplies a
default dataset location (expects fer2013.csv inside).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentPolicy
from .data import EMOTIONS, FerFormatError, load_fer2013
from .layers import Model
from .modelio import ModelFormatError, load_model, save_model
from .optim import OptimizerConfig
from .pgm import read_pgm_file
from .presets import PRESETS, build_model
from .tensor import Rng
from .train import TrainConfig, confusion_to_csv, evaluate, history_to_csv, train
from .validation import decode_pixel_list

SPLITS = ("training", "public-test", "private-test")
OPTIMIZERS = ("sgd", "momentum", "adam", "nadam", "adamax")

TRAIN_DEFAULTS = {
    "preset": "fer-ref-v1",
    "epochs": 100,
    "batch": 64,
    "lr": 1e-3,
    "optimizer": "nadam",
    "patience": 10,
    "monitor": "val_loss",
    "subset": 1.0,
    "seed": 0,
    "no-augment": False,
    "class-weights": "balanced",
}


def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _resolve(args, file_values: dict, key: str, cast):
    flag_attr = key.replace("-", "_")
    flag_value = getattr(args, flag_attr)
    if flag_value is not None:
        return flag_value
    if key in file_values:
        raw = file_values[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return TRAIN_DEFAULTS[key]


def _default_data_path(args) -> str:
    if args.data:
        return args.data
    data_dir = os.environ.get("FER_DATA_DIR")
    if data_dir:
        candidate = Path(data_dir) / "fer2013.csv"
        if candidate.exists():
            return str(candidate)
    raise SystemExit("error: no dataset given; pass --data or set FER_DATA_DIR")


def cmd_train(args) -> int:
    file_values = _read_config_file(args.config) if args.config else {}
    preset = _resolve(args, file_values, "preset", str)
    if preset not in PRESETS:
        raise SystemExit(f"error: unknown preset {preset!r}")
    config = TrainConfig(
        epochs=_resolve(args, file_values, "epochs", int),
        batch_size=_resolve(args, file_values, "batch", int),
        optimizer=OptimizerConfig(
            kind=_resolve(args, file_values, "optimizer", str),
            learning_rate=_resolve(args, file_values, "lr", float),
        ),
        patience=_resolve(args, file_values, "patience", int),
        monitor=_resolve(args, file_values, "monitor", str),
        seed=_resolve(args, file_values, "seed", int),
        subset_fraction=_resolve(args, file_values, "subset", float),
        augment_policy=None if _resolve(args, file_values, "no-augment", bool) else AugmentPolicy(),
        architecture=preset,
        class_weights=_resolve(args, file_values, "class-weights", str),
    )
    data = load_fer2013(_default_data_path(args))
    model = build_model(preset, Rng(config.seed).stream("init"))
    result = train(model, data, config)

    out = Path(args.out)
    save_model(result.model, out)
    history_path = args.history or out.with_suffix(".history.csv")
    history_to_csv(result.history, history_path)
    if args.out_best_acc:
        snapshot = result.model.copy()
        snapshot.load_state(result.best_state_by_accuracy)
        save_model(snapshot, args.out_best_acc)
    last = result.history[-1]
    print(f"trained {preset} for {last.epoch} epochs "
          f"(best epoch {result.best_epoch} by {config.monitor})")
    print(f"val_loss {last.val_loss:.4f}  val_acc {last.val_accuracy:.4f}")
    print(f"model: {out}")
    print(f"history: {history_path}")
    return 0


def _print_metrics(metrics) -> None:
    print(f"accuracy: {metrics.accuracy:.4f}")
    print(f"{'class':<10}{'precision':>10}{'recall':>10}")
    for i, name in enumerate(EMOTIONS):
        prec = "n/a" if metrics.precision[i] is None else f"{metrics.precision[i]:.4f}"
        rec = "n/a" if metrics.recall[i] is None else f"{metrics.recall[i]:.4f}"
        print(f"{name:<10}{prec:>10}{rec:>10}")


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = load_fer2013(_default_data_path(args))
    metrics = evaluate(model, data.split(args.split))
    _print_metrics(metrics)
    if args.confusion:
        confusion_to_csv(metrics.confusion, args.confusion, EMOTIONS)
        print(f"confusion matrix: {args.confusion}")
    return 0


def load_image_input(path) -> np.ndarray:
    """48x48 PGM (P2/P5) or a CSV row of 2304 ints -> [1,1,48,48] in [0,1]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        image = read_pgm_file(path)
        if image.shape != (48, 48):
            raise ValueError(f"expected a 48x48 image, got {image.shape[1]}x{image.shape[0]}")
        return (image.astype(np.float32) / 255.0).reshape(1, 1, 48, 48)
    text = path.read_text(encoding="utf-8").strip()
    values = [int(v) for v in text.replace(",", " ").split()]
    return decode_pixel_list(values)


def cmd_predict(args) -> int:
    model = load_model(args.model)
    x = load_image_input(args.image)
    probs, _ = model.forward(x, mode="infer")
    row = probs[0]
    for name, p in zip(EMOTIONS, row):
        print(f"{name:<10}{p:.6f}")
    print(f"predicted: {EMOTIONS[int(row.argmax())]}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve_forever

    model = load_model(args.model)
    serve_forever(model, port=args.port, static_dir=args.static_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fer",
                                     description="Facial expression recognition CNN")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on the FER2013 CSV")
    p_train.add_argument("--data", help="path to fer2013.csv (default: $FER_DATA_DIR/fer2013.csv)")
    p_train.add_argument("--out", required=True, help="output model file (.ferm)")
    p_train.add_argument("--out-best-acc", help="also save the best-by-val-accuracy model here")
    p_train.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p_train.add_argument("--config", help="key=value config file; flags override it")
    p_train.add_argument("--preset", choices=sorted(PRESETS))
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--optimizer", choices=OPTIMIZERS)
    p_train.add_argument("--patience", type=int)
    p_train.add_argument("--monitor", choices=("val_loss", "val_accuracy"))
    p_train.add_argument("--subset", type=float, help="stratified training fraction in (0,1]")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--no-augment", action="store_const", const=True, default=None)
    p_train.add_argument("--class-weights", choices=("balanced", "none"))
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a model on a dataset split")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", help="path to fer2013.csv (default: $FER_DATA_DIR/fer2013.csv)")
    p_eval.add_argument("--split", choices=SPLITS, default="private-test")
    p_eval.add_argument("--confusion", help="write the 7x7 confusion matrix CSV here")
    p_eval.set_defaults(func=cmd_eval)

    p_predict = sub.add_parser("predict", help="classify one 48x48 grayscale image")
    p_predict.add_argument("--model", required=True)
    p_predict.add_argument("image", help="48x48 PGM (P2/P5) or a CSV row of 2304 ints")
    p_predict.set_defaults(func=cmd_predict)

    p_serve = sub.add_parser("serve", help="run the HTTP inference service")
    p_serve.add_argument("--model", required=True)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--static-dir", help="directory of web demo assets to serve at /")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FerFormatError, ModelFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
