"""Memorization check: drive a full-size model to near-zero error on 64 rows.

Synthesizes 32 MOS-role and 32 acoustics-role clips, then trains with both
pools in a single batch per epoch until train MOS RMSE < 0.1 and every
acoustic normalized MSE < 0.05 (or the epoch budget runs out).

Usage: python scripts/overfit_demo.py [--out DIR] [--epochs N] [--seed N]
"""

import argparse
import json
import math
import tempfile
import time
from pathlib import Path

import numpy as np

from mosra import autodiff as ad
from mosra.acoustics import ACOUSTIC_TASKS
from mosra.frontend import FrontendConfig
from mosra.model import MosraModel
from mosra.synth import CorpusConfig, build_corpus
from mosra.trainer import (
    CyclingLoader,
    LossWeights,
    TrainConfig,
    compute_norm_stats,
    featurize_manifest,
    train_epoch,
)

MOS_RMSE_TARGET = 0.1
ACOUSTIC_NMSE_TARGET = 0.05


def train_metrics(model, mos_pool, ra_pool):
    """Eval-mode MOS RMSE and per-task normalized MSE on the training pools."""
    model.set_training(False)
    with ad.no_grad():
        out = model.forward_batch([ex.segments for ex in mos_pool], tasks=("mos",))["mos"]
        ra_out = model.forward_batch([ex.segments for ex in ra_pool], tasks=ACOUSTIC_TASKS)
    labels = np.array([ex.mos for ex in mos_pool]).reshape(-1, 1)
    mos_rmse = float(np.sqrt(np.mean((out.data - labels) ** 2)))
    nmse = {}
    for task in ACOUSTIC_TASKS:
        z = np.array(
            [model.normalize_label(task, ex.acoustics[task]) for ex in ra_pool]
        ).reshape(-1, 1)
        nmse[task] = float(np.mean((ra_out[task].data - z) ** 2))
    return mos_rmse, nmse


def run_overfit(out_dir, epochs=500, seed=0, lr=2e-3, check_every=5, progress=None):
    out_dir = Path(out_dir)
    t0 = time.time()
    rows = build_corpus(
        n_mos=32, n_acoustics=32, speech_dir=None, out_dir=out_dir, seed=1234,
        cfg=CorpusConfig(clip_seconds=0.5),
    )
    examples = featurize_manifest(rows, out_dir, FrontendConfig())
    mos_pool = [ex for ex in examples if ex.mos is not None]
    ra_pool = [ex for ex in examples if ex.acoustics is not None]

    model = MosraModel()
    stats = compute_norm_stats(rows)
    model.label_norm = {t: (stats.mean[t], stats.std[t]) for t in ACOUSTIC_TASKS}
    model.dropout_rng.bit_generator.state = (
        np.random.default_rng(seed + 17).bit_generator.state
    )

    cfg = TrainConfig(lr=lr, batch_size=32, max_epochs=epochs, seed=seed)
    weights = LossWeights()
    optimizer = ad.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    mos_loader = CyclingLoader(len(mos_pool), cfg.batch_size, rng)
    ra_loader = CyclingLoader(len(ra_pool), cfg.batch_size, rng)

    result = {"epochs_used": epochs, "reached": False}
    for epoch in range(1, epochs + 1):
        loss = train_epoch(
            model, mos_pool, ra_pool, optimizer, cfg, weights, mos_loader, ra_loader
        )
        if epoch % check_every and epoch != epochs:
            continue
        mos_rmse, nmse = train_metrics(model, mos_pool, ra_pool)
        if progress:
            progress(epoch, loss, mos_rmse, nmse)
        if mos_rmse < MOS_RMSE_TARGET and all(
            v < ACOUSTIC_NMSE_TARGET for v in nmse.values()
        ):
            result.update(epochs_used=epoch, reached=True)
            break
    result.update(
        mos_rmse=mos_rmse, acoustic_nmse=nmse, wall_s=time.time() - t0, final_loss=loss
    )
    return result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=None, help="work directory (default: temp)")
    parser.add_argument("--epochs", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=2e-3)
    args = parser.parse_args()

    out = args.out or tempfile.mkdtemp(prefix="overfit_")

    def progress(epoch, loss, mos_rmse, nmse):
        worst = max(nmse.values())
        print(
            f"epoch {epoch:4d}  loss {loss:8.4f}  mos_rmse {mos_rmse:.4f}  "
            f"worst_acoustic_nmse {worst:.4f}",
            flush=True,
        )

    result = run_overfit(out, epochs=args.epochs, seed=args.seed, lr=args.lr,
                         progress=progress)
    print(json.dumps(result, indent=2))
    return 0 if result["reached"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
