"""Interleaved multi-task training: one MOS batch and one acoustics batch per
iteration, a single combined weighted loss, Adam, MOS-MSE early stopping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .acoustics import ACOUSTIC_TASKS
from .audio_io import MODEL_RATE_HZ, load_wav, resample
from .frontend import FrontendConfig, featurize
from .model import MosraModel


@dataclass(frozen=True)
class LossWeights:
    mos: float = 2.0  # lambda_1
    acoustics: float = 0.2  # lambda_2, spread over the five acoustic MSEs

    def __post_init__(self):
        if self.mos <= 0 or self.acoustics < 0:
            raise ValueError("mos weight must be positive, acoustics weight non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 32
    patience: int = 15
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class NormStats:
    mean: dict
    std: dict


def compute_norm_stats(rows: list) -> NormStats:
    """Per-task mean/std over the 'acoustics' training rows."""
    acoustic_rows = [r for r in rows if r.role == "acoustics"]
    if not acoustic_rows:
        raise ValueError("no acoustics-role rows to compute normalization from")
    mean, std = {}, {}
    for task in ACOUSTIC_TASKS:
        vals = np.array([getattr(r, task) for r in acoustic_rows], dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite {task} labels in training manifest")
        mean[task] = float(vals.mean())
        s = float(vals.std())
        if s <= 0.0:
            raise ValueError(f"constant {task} label column; cannot z-score")
        std[task] = s
    return NormStats(mean=mean, std=std)


def compute_loss(mos_out, mos_labels, ra_out: dict, ra_labels: dict, w: LossWeights):
    """lambda_1 * MSE_MOS + lambda_2 * sum of the five acoustic MSEs.

    Acoustic labels are expected already normalized; pass ra_out=None for the
    single-task (MOS-only) reduction.
    """
    loss = w.mos * ad.mse(mos_out, mos_labels)
    if ra_out is not None and w.acoustics > 0.0:
        ra_sum = None
        for task in ACOUSTIC_TASKS:
            term = ad.mse(ra_out[task], ra_labels[task])
            ra_sum = term if ra_sum is None else ra_sum + term
        loss = loss + w.acoustics * ra_sum
    return loss


# -- data ----------------------------------------------------------------


@dataclass
class Example:
    segments: np.ndarray  # (n_segments, n_mels, width)
    mos: float | None
    acoustics: dict | None  # raw physical-unit labels


def featurize_manifest(rows: list, base_dir, frontend: FrontendConfig) -> list:
    """Load + featurize every manifest row once; returns Examples in row order."""
    base = Path(base_dir)
    examples = []
    for r in rows:
        buf = load_wav(base / r.path)
        if buf.sample_rate_hz != MODEL_RATE_HZ:
            buf = resample(buf, MODEL_RATE_HZ)
        segs = featurize(buf, frontend).values.astype(np.float32)
        if r.role == "mos":
            examples.append(Example(segments=segs, mos=r.mos, acoustics=None))
        else:
            examples.append(Example(segments=segs, mos=None, acoustics=r.labels().as_dict()))
    return examples


class CyclingLoader:
    """Yields index batches; reshuffles and cycles when the pool is exhausted."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n == 0:
            raise ValueError("empty data pool")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next_batch(self) -> np.ndarray:
        if self.pos >= self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        batch = self.order[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return batch


# -- training loop -------------------------------------------------------


@dataclass
class FitResult:
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_mos_mse
    best_epoch: int = -1
    best_val_mos_mse: float = math.inf


def _ra_targets(model: MosraModel, batch: list) -> dict:
    out = {}
    for task in ACOUSTIC_TASKS:
        vals = [model.normalize_label(task, ex.acoustics[task]) for ex in batch]
        out[task] = ad.Tensor(np.array(vals, dtype=np.float32).reshape(-1, 1))
    return out


def train_epoch(
    model: MosraModel,
    mos_pool: list,
    ra_pool: list | None,
    optimizer: ad.Adam,
    cfg: TrainConfig,
    weights: LossWeights,
    mos_loader: CyclingLoader,
    ra_loader: CyclingLoader | None,
) -> float:
    """One epoch = ceil(|mos_pool| / batch_size) interleaved iterations."""
    model.set_training(True)
    iters = math.ceil(len(mos_pool) / cfg.batch_size)
    total = 0.0
    multi_task = ra_pool is not None and weights.acoustics > 0.0
    for _ in range(iters):
        mos_batch = [mos_pool[i] for i in mos_loader.next_batch()]
        mos_out = model.forward_batch([ex.segments for ex in mos_batch], tasks=("mos",))["mos"]
        mos_labels = ad.Tensor(
            np.array([ex.mos for ex in mos_batch], dtype=np.float32).reshape(-1, 1)
        )
        if multi_task:
            ra_batch = [ra_pool[i] for i in ra_loader.next_batch()]
            ra_out = model.forward_batch(
                [ex.segments for ex in ra_batch], tasks=ACOUSTIC_TASKS
            )
            ra_labels = _ra_targets(model, ra_batch)
        else:
            ra_out, ra_labels = None, None
        loss = compute_loss(mos_out, mos_labels, ra_out, ra_labels, weights)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total += float(loss.data)
    model.set_training(False)
    return total / iters


def mos_mse(model: MosraModel, pool: list, chunk: int = 16) -> float:
    """Eval-mode MOS MSE over a pool of examples (raw, unmapped MOS)."""
    model.set_training(False)
    if not pool:
        raise ValueError("empty evaluation pool")
    err = 0.0
    for lo in range(0, len(pool), chunk):
        batch = pool[lo : lo + chunk]
        with ad.no_grad():
            out = model.forward_batch([ex.segments for ex in batch], tasks=("mos",))["mos"]
        labels = np.array([ex.mos for ex in batch]).reshape(-1, 1)
        err += float(np.sum((out.data - labels) ** 2))
    return err / len(pool)


def fit(
    model: MosraModel,
    train_rows: list,
    val_rows: list,
    cfg: TrainConfig,
    weights: LossWeights = LossWeights(),
    frontend: FrontendConfig = FrontendConfig(),
    train_dir=".",
    val_dir=".",
    progress=None,
) -> FitResult:
    """Train with early stopping on validation MOS MSE; model ends at the best
    epoch's parameters."""
    multi_task = weights.acoustics > 0.0
    if multi_task:
        stats = compute_norm_stats(train_rows)
        model.label_norm = {
            task: (stats.mean[task], stats.std[task]) for task in ACOUSTIC_TASKS
        }

    train_ex = featurize_manifest(train_rows, train_dir, frontend)
    val_ex = featurize_manifest(val_rows, val_dir, frontend)
    mos_pool = [ex for ex in train_ex if ex.mos is not None]
    ra_pool = [ex for ex in train_ex if ex.acoustics is not None]
    val_pool = [ex for ex in val_ex if ex.mos is not None]
    if not mos_pool:
        raise ValueError("no mos-role rows in the training manifest")
    if not val_pool:
        raise ValueError("no mos-role rows in the validation manifest")
    if multi_task and not ra_pool:
        raise ValueError("multi-task training requires acoustics-role rows")

    rng = np.random.default_rng(cfg.seed)
    # deterministic dropout stream per run
    model.dropout_rng.bit_generator.state = np.random.default_rng(cfg.seed + 17).bit_generator.state
    optimizer = ad.Adam(model.parameters(), lr=cfg.lr)
    mos_loader = CyclingLoader(len(mos_pool), cfg.batch_size, rng)
    ra_loader = CyclingLoader(len(ra_pool), cfg.batch_size, rng) if multi_task else None

    result = FitResult()
    best_snapshot = model.state_snapshot()
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = train_epoch(
            model, mos_pool, ra_pool if multi_task else None,
            optimizer, cfg, weights, mos_loader, ra_loader,
        )
        val = mos_mse(model, val_pool)
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_mos_mse": val})
        if progress is not None:
            progress(result.history[-1])
        if val < result.best_val_mos_mse:
            result.best_val_mos_mse = val
            result.best_epoch = epoch
            best_snapshot = model.state_snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.load_snapshot(best_snapshot)
    return result


def write_history(history: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.DictWriter(
            f, fieldnames=["epoch", "train_loss", "val_mos_mse"], lineterminator="\n"
        )
        writer.writeheader()
        writer.writerows(history)
