"""Does the auxiliary acoustic supervision help MOS prediction on reverberant speech?

Protocol: one synthetic corpus (500 proxy-MOS rows + 5000 acoustics rows,
400/100 MOS train/val split) and a separate reverb-heavy test set (200 MOS
rows, T60 >= 0.8 s). For each seed, train once multi-task and once MOS-only,
then compare mean test Pearson correlation across seeds.

Usage: python scripts/multitask_benefit.py [--workdir DIR] [--seeds 0 1 2]
"""

import argparse
import json
import tempfile
import time
from pathlib import Path

import numpy as np

from mosra.evaluator import EvalPairs, pearson
from mosra.frontend import FrontendConfig, SegmentTensor
from mosra.model import MosraModel
from mosra.synth import CorpusConfig, build_corpus, load_manifest
from mosra.trainer import LossWeights, TrainConfig, featurize_manifest, fit

TEST_T60_MIN_S = 0.8


def make_datasets(workdir, n_mos=500, n_acoustics=5000, n_test=200):
    """Synthesize (or reuse) the train and test corpora; returns their dirs."""
    workdir = Path(workdir)
    train_dir = workdir / "train"
    test_dir = workdir / "test"
    if not (train_dir / "manifest.csv").is_file():
        build_corpus(
            n_mos=n_mos, n_acoustics=n_acoustics, speech_dir=None,
            out_dir=train_dir, seed=100, cfg=CorpusConfig(clip_seconds=1.0),
        )
    if not (test_dir / "manifest.csv").is_file():
        build_corpus(
            n_mos=n_test, n_acoustics=0, speech_dir=None, out_dir=test_dir,
            seed=200,
            cfg=CorpusConfig(
                clip_seconds=1.0, t60_range_s=(TEST_T60_MIN_S, 1.5), clean_fraction=0.0
            ),
        )
    return train_dir, test_dir


def test_pcc(model, test_examples):
    preds, labels = [], []
    for ex in test_examples:
        preds.append(model.predict_segments(SegmentTensor(values=ex.segments)).mos)
        labels.append(ex.mos)
    return pearson(EvalPairs(np.array(preds), np.array(labels)))


def run_experiment(workdir, seeds=(0, 1, 2), max_epochs=20, patience=8, progress=None):
    t0 = time.time()
    frontend = FrontendConfig()
    train_dir, test_dir = make_datasets(workdir)
    rows = load_manifest(train_dir / "manifest.csv")
    mos_rows = [r for r in rows if r.role == "mos"]
    ra_rows = [r for r in rows if r.role == "acoustics"]
    train_rows = mos_rows[:400] + ra_rows
    val_rows = mos_rows[400:]
    test_examples = featurize_manifest(
        load_manifest(test_dir / "manifest.csv"), test_dir, frontend
    )

    results = {"multi": [], "mos_only": []}
    for seed in seeds:
        for mode, weights in (
            ("multi", LossWeights()),
            ("mos_only", LossWeights(mos=2.0, acoustics=0.0)),
        ):
            model = MosraModel()
            cfg = TrainConfig(max_epochs=max_epochs, patience=patience, seed=seed)
            fitres = fit(
                model, train_rows, val_rows, cfg, weights=weights,
                frontend=frontend, train_dir=train_dir, val_dir=train_dir,
            )
            pcc = test_pcc(model, test_examples)
            results[mode].append(pcc)
            if progress:
                progress(seed, mode, fitres, pcc)

    summary = {
        "seeds": list(seeds),
        "pcc_multi": results["multi"],
        "pcc_mos_only": results["mos_only"],
        "mean_pcc_multi": float(np.mean(results["multi"])),
        "mean_pcc_mos_only": float(np.mean(results["mos_only"])),
        "wall_s": time.time() - t0,
    }
    summary["benefit"] = summary["mean_pcc_multi"] - summary["mean_pcc_mos_only"]
    return summary


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default=None, help="corpus/work dir (default: temp)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--max-epochs", type=int, default=20)
    args = parser.parse_args()

    workdir = args.workdir or tempfile.mkdtemp(prefix="multitask_")

    def progress(seed, mode, fitres, pcc):
        print(
            f"seed {seed}  {mode:8s}  best_epoch {fitres.best_epoch:2d}  "
            f"val_mse {fitres.best_val_mos_mse:.4f}  test_pcc {pcc:.4f}",
            flush=True,
        )

    summary = run_experiment(
        workdir, seeds=tuple(args.seeds), max_epochs=args.max_epochs, progress=progress
    )
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
