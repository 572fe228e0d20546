"""The MOSRA network: segment CNN -> shared transformer -> six task heads.

Includes serialization (versioned binary container) and parameter accounting.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .acoustics import ACOUSTIC_TASKS
from .audio_io import MODEL_RATE_HZ, AudioBuffer, resample
from .frontend import FrontendConfig, SegmentTensor, featurize

TASKS = ("mos",) + ACOUSTIC_TASKS

MAGIC = b"MOSRA1"


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    heads: int
    d_model: int
    d_ff: int
    dropout_p: float


@dataclass(frozen=True)
class ModelConfig:
    cnn_channels: tuple = (16, 32, 64, 64, 128, 144)
    feature_dim: int = 64
    shared: EncoderConfig = field(
        default_factory=lambda: EncoderConfig(layers=2, heads=1, d_model=64, d_ff=64, dropout_p=0.1)
    )
    head: EncoderConfig = field(
        default_factory=lambda: EncoderConfig(layers=1, heads=1, d_model=32, d_ff=32, dropout_p=0.1)
    )
    seed: int = 0

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("shared", "head"):
            if key in d and isinstance(d[key], dict):
                d[key] = EncoderConfig(**d[key])
        if "cnn_channels" in d:
            d["cnn_channels"] = tuple(d["cnn_channels"])
        return ModelConfig(**d)


@dataclass(frozen=True)
class Prediction:
    """Per-utterance outputs in physical units (acoustics de-normalized)."""

    mos: float
    snr_db: float
    sti: float
    t60_s: float
    drr_db: float
    c50_db: float

    def as_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(n: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(d // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


class EncoderLayer(ad.Module):
    """Post-norm transformer encoder layer, single attention head."""

    def __init__(self, cfg: EncoderConfig, rng, dropout_rng, dtype=np.float32):
        self.attn = ad.SelfAttention(cfg.d_model, rng, dtype)
        self.ln1 = ad.LayerNorm(cfg.d_model, dtype)
        self.ff1 = ad.Linear(cfg.d_model, cfg.d_ff, rng, dtype)
        self.ff2 = ad.Linear(cfg.d_ff, cfg.d_model, rng, dtype)
        self.ln2 = ad.LayerNorm(cfg.d_model, dtype)
        self.drop = ad.Dropout(cfg.dropout_p, dropout_rng)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        x = self.ln1(x + self.drop(self.attn(x)))
        return self.ln2(x + self.drop(self.ff2(self.ff1(x).relu())))


class SegmentCNN(ad.Module):
    """Per-segment feature extractor: 6 conv blocks, pools after blocks 1/2/4.

    Early pooling keeps the FLOP count low enough for CPU training; the channel
    widths set the parameter budget.
    """

    POOL_AFTER = (0, 1, 3)

    def __init__(self, channels: tuple, feature_dim: int, rng, dtype=np.float32):
        self.convs = []
        self.bns = []
        in_ch = 1
        for ch in channels:
            self.convs.append(ad.Conv2d(in_ch, ch, 3, rng, stride=1, padding=1, dtype=dtype))
            self.bns.append(ad.BatchNorm2d(ch, dtype=dtype))
            in_ch = ch
        self.pool = ad.MaxPool2x2()
        self.out = ad.Linear(channels[-1], feature_dim, rng, dtype)

    def __call__(self, segments: ad.Tensor) -> ad.Tensor:
        """(n_segments, n_mels, width, 1) -> (n_segments, feature_dim)."""
        x = segments
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            x = bn(conv(x)).relu()
            if i in self.POOL_AFTER:
                x = self.pool(x)
        return self.out(x.mean(axis=(1, 2)))


class AttentionPool(ad.Module):
    """Learned softmax weighting over time steps followed by a weighted sum."""

    def __init__(self, d: int, rng, dtype=np.float32):
        self.score1 = ad.Linear(d, d, rng, dtype)
        self.score2 = ad.Linear(d, 1, rng, dtype)

    def weights(self, x: ad.Tensor) -> ad.Tensor:
        scores = self.score2(self.score1(x).relu())  # (T, 1)
        return scores.transpose().softmax(axis=-1)  # (1, T)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return self.weights(x) @ x  # (1, d)


class TaskHead(ad.Module):
    """Projection -> one encoder layer -> attention pooling -> scalar output."""

    def __init__(self, in_dim: int, cfg: EncoderConfig, rng, dropout_rng, dtype=np.float32):
        self.proj = ad.Linear(in_dim, cfg.d_model, rng, dtype)
        self.encoder = [EncoderLayer(cfg, rng, dropout_rng, dtype) for _ in range(cfg.layers)]
        self.pool = AttentionPool(cfg.d_model, rng, dtype)
        self.out = ad.Linear(cfg.d_model, 1, rng, dtype)

    def __call__(self, context: ad.Tensor) -> ad.Tensor:
        x = self.proj(context)
        for layer in self.encoder:
            x = layer(x)
        return self.out(self.pool(x))  # (1, 1)


class MosraModel(ad.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng(config.seed + 1)
        self.cnn = SegmentCNN(config.cnn_channels, config.feature_dim, rng, dtype)
        self.shared = [
            EncoderLayer(config.shared, rng, self.dropout_rng, dtype)
            for _ in range(config.shared.layers)
        ]
        self.heads = {
            task: TaskHead(config.feature_dim, config.head, rng, self.dropout_rng, dtype)
            for task in TASKS
        }
        # per acoustic task (mean, std); identity until fitted on training labels
        self.label_norm = {task: (0.0, 1.0) for task in ACOUSTIC_TASKS}
        self.dtype = dtype
        self.set_training(False)

    # -- forward ---------------------------------------------------------

    def cnn_forward(self, segments: np.ndarray) -> ad.Tensor:
        """(n_segments, n_mels, width) -> (n_segments, feature_dim)."""
        x = ad.Tensor(segments[:, :, :, None].astype(self.dtype))
        return self.cnn(x)

    def shared_encode(self, features: ad.Tensor) -> ad.Tensor:
        """Add sinusoidal positions, then run the shared encoder stack."""
        n, d = features.shape
        x = features + ad.Tensor(sinusoidal_positions(n, d, self.dtype))
        for layer in self.shared:
            x = layer(x)
        return x

    def head_forward(self, context: ad.Tensor, task: str) -> ad.Tensor:
        return self.heads[task](context)

    def forward_tasks(self, segments: np.ndarray, tasks=TASKS) -> dict:
        """Run the full network on one utterance; normalized-scale outputs."""
        context = self.shared_encode(self.cnn_forward(segments))
        return {task: self.head_forward(context, task) for task in tasks}

    def forward_batch(self, segment_list: list, tasks=TASKS) -> dict:
        """Batch the CNN over all segments of all utterances, then per-utterance heads.

        Returns task -> (n_utterances, 1) tensor on the normalized scale.
        """
        counts = [s.shape[0] for s in segment_list]
        all_feats = self.cnn_forward(np.concatenate(segment_list, axis=0))
        outs = {task: [] for task in tasks}
        offset = 0
        for n in counts:
            context = self.shared_encode(all_feats[offset : offset + n])
            for task in tasks:
                outs[task].append(self.head_forward(context, task))
            offset += n
        return {task: ad.concat(outs[task], axis=0) for task in tasks}

    # -- inference -------------------------------------------------------

    def denormalize(self, task: str, value: float) -> float:
        if task == "mos":
            return value
        mean, std = self.label_norm[task]
        return value * std + mean

    def normalize_label(self, task: str, value: float) -> float:
        if task == "mos":
            return value
        mean, std = self.label_norm[task]
        return (value - mean) / std

    def predict_segments(self, segments: SegmentTensor) -> Prediction:
        was_training = self.training
        self.set_training(False)
        try:
            with ad.no_grad():
                raw = self.forward_tasks(segments.values)
        finally:
            self.set_training(was_training)
        values = {task: self.denormalize(task, raw[task].data.item()) for task in TASKS}
        return Prediction(**values)

    def predict(self, audio: AudioBuffer, frontend: FrontendConfig = FrontendConfig()) -> Prediction:
        if audio.sample_rate_hz != MODEL_RATE_HZ:
            audio = resample(audio, MODEL_RATE_HZ)
        return self.predict_segments(featurize(audio, frontend))

    # -- accounting / serialization --------------------------------------

    def named_tensors(self) -> dict:
        """name -> Tensor for every persistent array, params and BN buffers alike."""
        return self.named_state()

    def param_count(self) -> int:
        return sum(t.data.size for t in self.named_tensors().values() if t.requires_grad)

    def state_snapshot(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_tensors().items()}

    def load_snapshot(self, snapshot: dict) -> None:
        for name, t in self.named_tensors().items():
            t.data = snapshot[name].copy()

    def save(self, path) -> None:
        tensors = self.named_tensors()
        meta = {
            "config": asdict(self.config),
            "label_norm": {k: list(v) for k, v in self.label_norm.items()},
            "tensors": [
                [name, list(t.data.shape), bool(t.requires_grad)] for name, t in tensors.items()
            ],
        }
        meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(meta_bytes)))
            f.write(meta_bytes)
            for t in tensors.values():
                f.write(t.data.astype("<f4").tobytes())

    @staticmethod
    def load(path) -> "MosraModel":
        with open(path, "rb") as f:
            magic = f.read(len(MAGIC))
            if magic != MAGIC:
                raise ValueError(f"not a MOSRA model file (magic {magic!r})")
            (meta_len,) = struct.unpack("<I", f.read(4))
            meta = json.loads(f.read(meta_len).decode("utf-8"))
            model = MosraModel(ModelConfig.from_dict(meta["config"]))
            model.label_norm = {k: tuple(v) for k, v in meta["label_norm"].items()}
            tensors = model.named_tensors()
            listed = meta["tensors"]
            if len(listed) != len(tensors):
                raise ValueError(
                    f"tensor count mismatch: file lists {len(listed)}, model has {len(tensors)}"
                )
            for name, shape, _trainable in listed:
                if name not in tensors:
                    raise ValueError(f"unknown tensor {name!r} in model file")
                t = tensors[name]
                if list(t.data.shape) != shape:
                    raise ValueError(
                        f"shape mismatch for {name!r}: file {shape}, model {list(t.data.shape)}"
                    )
                count = int(np.prod(shape)) if shape else 1
                blob = f.read(count * 4)
                if len(blob) != count * 4:
                    raise ValueError(f"truncated tensor data for {name!r}")
                t.data = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32)
        return model
