"""Command-line entry point: corpus synthesis, training, prediction, evaluation,
model inspection."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from .audio_io import AudioIOError, load_wav
from .evaluator import evaluate_manifest, format_report, write_report
from .frontend import FrontendConfig
from .model import ModelConfig, MosraModel
from .synth import CorpusConfig, build_corpus, load_manifest
from .trainer import LossWeights, TrainConfig, fit, write_history

DEFAULT_CONFIG = {
    "frontend": asdict(FrontendConfig()),
    "model": {"cnn_channels": list(ModelConfig().cnn_channels), "dropout_p": 0.1, "seed": 0},
    "train": asdict(TrainConfig()),
    "loss": {"mos": 2.0, "acoustics": 0.2},
    "synth": {
        "n_mos": 200,
        "n_acoustics": 200,
        "speech_dir": None,
        "clip_seconds": 2.0,
        "t60_range_s": [0.15, 1.5],
        "drr_range_db": [-6.0, 18.0],
        "snr_range_db": [0.0, 40.0],
        "clean_fraction": 0.2,
        "keep_irs": False,
    },
}


class ConfigError(ValueError):
    pass


def load_config(path=None) -> dict:
    """Defaults (the published hyperparameters) overlaid with a JSON file.

    Unknown keys anywhere are rejected.
    """
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is None:
        return config
    with open(path, encoding="utf-8") as f:
        user = json.load(f)
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    for section, values in user.items():
        if section not in config:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in values.items():
            if key not in config[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            config[section][key] = value
    return config


def model_config_from(config: dict) -> ModelConfig:
    m = config["model"]
    p = float(m["dropout_p"])
    base = ModelConfig()
    return ModelConfig(
        cnn_channels=tuple(m["cnn_channels"]),
        shared=replace(base.shared, dropout_p=p),
        head=replace(base.head, dropout_p=p),
        seed=int(m["seed"]),
    )


def _frontend_from(config: dict) -> FrontendConfig:
    return FrontendConfig(**config["frontend"])


def cmd_synth(args) -> int:
    config = load_config(args.config)
    s = config["synth"]
    cfg = CorpusConfig(
        clip_seconds=float(s["clip_seconds"]),
        t60_range_s=tuple(s["t60_range_s"]),
        drr_range_db=tuple(s["drr_range_db"]),
        snr_range_db=tuple(s["snr_range_db"]),
        clean_fraction=float(s["clean_fraction"]),
        keep_irs=bool(s["keep_irs"]),
    )
    rows = build_corpus(
        n_mos=int(s["n_mos"]),
        n_acoustics=int(s["n_acoustics"]),
        speech_dir=s["speech_dir"],
        out_dir=args.out,
        seed=args.seed,
        cfg=cfg,
        threads=args.threads,
    )
    print(f"wrote {len(rows)} rows to {args.out}/manifest.csv")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    t = config["train"]
    train_cfg = TrainConfig(
        lr=float(t["lr"]),
        batch_size=int(t["batch_size"]),
        patience=int(t["patience"]),
        max_epochs=int(t["max_epochs"]) if args.max_epochs is None else args.max_epochs,
        seed=int(t["seed"]) if args.seed is None else args.seed,
    )
    weights = LossWeights(
        mos=float(config["loss"]["mos"]),
        acoustics=0.0 if args.mos_only else float(config["loss"]["acoustics"]),
    )
    model = MosraModel(model_config_from(config))
    train_rows = load_manifest(args.train)
    val_rows = load_manifest(args.val)
    result = fit(
        model, train_rows, val_rows, train_cfg, weights,
        frontend=_frontend_from(config),
        train_dir=Path(args.train).parent,
        val_dir=Path(args.val).parent,
        progress=lambda h: print(
            f"epoch {h['epoch']:3d}  train_loss {h['train_loss']:.4f}  "
            f"val_mos_mse {h['val_mos_mse']:.4f}"
        ),
    )
    model.save(args.out)
    if args.history:
        write_history(result.history, args.history)
    print(f"best epoch {result.best_epoch} (val MOS MSE {result.best_val_mos_mse:.4f}); "
          f"model saved to {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = MosraModel.load(args.model)
    audio = load_wav(args.audio)
    if args.bench:
        import tracemalloc

        tracemalloc.start()
        t0 = time.perf_counter()
        pred = model.predict(audio)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
    else:
        pred = model.predict(audio)

    values = pred.as_dict()
    display = dict(values)
    display["mos"] = min(5.0, max(1.0, display["mos"]))
    if args.json:
        payload = {"prediction": display}
        if args.bench:
            payload["bench"] = {"wall_ms": wall_ms, "peak_bytes": peak}
        print(json.dumps(payload, sort_keys=True))
    else:
        for task, value in display.items():
            print(f"{task}: {value:.4f}")
        if args.bench:
            print(f"wall: {wall_ms:.1f} ms, peak alloc: {peak / 1e6:.1f} MB")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config)
    model = MosraModel.load(args.model)
    rows = load_manifest(args.manifest)
    report = evaluate_manifest(
        model, rows, Path(args.manifest).parent, frontend=_frontend_from(config)
    )
    write_report(report, args.report)
    print(format_report(report))
    return 0


def cmd_inspect(args) -> int:
    model = MosraModel.load(args.model)
    for name, t in model.named_tensors().items():
        kind = "param" if t.requires_grad else "buffer"
        print(f"{name:60s} {str(tuple(t.data.shape)):18s} {kind}")
    print(f"total trainable parameters: {model.param_count()}")
    print(f"config: {json.dumps(asdict(model.config))}")
    print(f"label_norm: {json.dumps({k: list(v) for k, v in model.label_norm.items()})}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosra", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic training corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from manifests")
    p.add_argument("--config", default=None)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mos-only", action="store_true",
                   help="single-task baseline: zero weight on the acoustic losses")
    p.add_argument("--history", default=None, help="write per-epoch CSV here")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict all six outputs for one WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--bench", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a model against a labeled manifest")
    p.add_argument("--config", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print tensors, parameter count, config")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AudioIOError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
