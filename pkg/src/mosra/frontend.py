"""Mel-spectrogram segment frontend: audio -> overlapping log-mel patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import MODEL_RATE_HZ, AudioBuffer


@dataclass(frozen=True)
class FrontendConfig:
    n_mels: int = 48
    fft_window_ms: float = 20.0
    hop_ms: float = 10.0
    f_min_hz: float = 0.0
    f_max_hz: float = 20000.0
    segment_width_frames: int = 15
    segment_hop_frames: int = 4
    log_floor_db: float = -80.0

    def window_samples(self, rate_hz: int) -> int:
        return int(round(self.fft_window_ms * rate_hz / 1000.0))

    def hop_samples(self, rate_hz: int) -> int:
        return int(round(self.hop_ms * rate_hz / 1000.0))


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-power mel spectrogram, (n_mels x T_frames), values in dB >= log_floor_db."""

    values: np.ndarray
    frame_hop_s: float


@dataclass(frozen=True)
class SegmentTensor:
    """Overlapping spectrogram patches, (n_segments x n_mels x segment_width_frames)."""

    values: np.ndarray

    @property
    def n_segments(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, rate_hz: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular HTK-mel filters, (n_mels x n_fft//2+1), unnormalized."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, rate_hz / 2.0, n_bins)
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_spectrogram(buf: AudioBuffer, cfg: FrontendConfig = FrontendConfig()) -> MelSpectrogram:
    """STFT power -> mel filterbank -> 10*log10(p + 1e-10), clamped at the floor."""
    if buf.sample_rate_hz != MODEL_RATE_HZ:
        raise ValueError(f"frontend expects {MODEL_RATE_HZ} Hz audio, got {buf.sample_rate_hz}")
    if cfg.f_max_hz > buf.sample_rate_hz / 2:
        raise ValueError(f"f_max {cfg.f_max_hz} exceeds Nyquist {buf.sample_rate_hz / 2}")
    win = cfg.window_samples(buf.sample_rate_hz)
    hop = cfg.hop_samples(buf.sample_rate_hz)
    x = buf.samples
    if len(x) < win:
        raise ValueError(f"input too short: {len(x)} samples < window {win}")

    n_frames = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=win, axis=1)) ** 2  # (T, n_bins)

    fb = mel_filterbank(cfg.n_mels, win, buf.sample_rate_hz, cfg.f_min_hz, cfg.f_max_hz)
    mel_power = power @ fb.T  # (T, n_mels)
    log_mel = 10.0 * np.log10(mel_power + 1e-10)
    log_mel = np.maximum(log_mel, cfg.log_floor_db)
    return MelSpectrogram(values=log_mel.T, frame_hop_s=hop / buf.sample_rate_hz)


def segment(spec: MelSpectrogram, cfg: FrontendConfig = FrontendConfig()) -> SegmentTensor:
    """Slice the spectrogram into overlapping width-15 patches with hop 4.

    Short inputs (T < width) yield one right-padded segment; frames past the
    last full segment are dropped.
    """
    width, hop = cfg.segment_width_frames, cfg.segment_hop_frames
    vals = spec.values
    t = vals.shape[1]
    if t < width:
        pad = np.full((vals.shape[0], width - t), cfg.log_floor_db)
        return SegmentTensor(values=np.concatenate([vals, pad], axis=1)[None, :, :])
    n_seg = 1 + (t - width) // hop
    segs = np.stack([vals[:, k * hop : k * hop + width] for k in range(n_seg)], axis=0)
    return SegmentTensor(values=segs)


def featurize(buf: AudioBuffer, cfg: FrontendConfig = FrontendConfig()) -> SegmentTensor:
    """audio @48kHz -> mel segments, the model's input."""
    return segment(mel_spectrogram(buf, cfg), cfg)
