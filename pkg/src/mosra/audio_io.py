"""WAV reading/writing and resampling to the model's native 48 kHz."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

MODEL_RATE_HZ = 48000


class AudioIOError(Exception):
    """Base class for audio file problems."""


class UnreadableFileError(AudioIOError):
    """File missing, truncated, or not a RIFF/WAVE container."""


class UnsupportedFormatError(AudioIOError):
    """WAV exists but uses a codec/bit depth/channel count we do not handle."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal with amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be mono (1-D), got shape {self.samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def load_wav(path) -> AudioBuffer:
    """Load a PCM16 or float32 WAV; stereo is downmixed by channel averaging."""
    path = Path(path)
    if not path.is_file():
        raise UnreadableFileError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        # scipy raises ValueError both for broken containers and exotic codecs;
        # distinguish on the message where possible
        msg = str(exc).lower()
        if "unknown wave file format" in msg or "unsupported" in msg or "bit depth" in msg:
            raise UnsupportedFormatError(f"{path}: {exc}") from exc
        raise UnreadableFileError(f"{path}: {exc}") from exc
    except Exception as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample format {data.dtype}; expected int16 or float32"
        )

    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise UnsupportedFormatError(
                f"{path}: {samples.shape[1]} channels; only mono/stereo supported"
            )
        samples = samples.mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate_hz=int(rate))


def save_wav(path, buf: AudioBuffer, pcm16: bool = False) -> None:
    """Write a mono WAV, float32 by default (bit-exact round trip for float32 data)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        clipped = np.clip(buf.samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(str(path), buf.sample_rate_hz, (clipped * 32768.0).round().astype(np.int16))
    else:
        wavfile.write(str(path), buf.sample_rate_hz, buf.samples.astype(np.float32))


def resample(buf: AudioBuffer, target_hz: int) -> AudioBuffer:
    """Polyphase windowed-sinc resampling; identity when rates already match."""
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    if target_hz == buf.sample_rate_hz:
        return AudioBuffer(samples=buf.samples.copy(), sample_rate_hz=buf.sample_rate_hz)

    g = np.gcd(target_hz, buf.sample_rate_hz)
    up, down = target_hz // g, buf.sample_rate_hz // g
    # 64 taps per phase, Kaiser-windowed sinc
    out = resample_poly(buf.samples, up, down, window=("kaiser", 5.0), padtype="constant")
    n_target = int(round(len(buf.samples) * target_hz / buf.sample_rate_hz))
    if len(out) > n_target:
        out = out[:n_target]
    elif len(out) < n_target:
        out = np.pad(out, (0, n_target - len(out)))
    return AudioBuffer(samples=out, sample_rate_hz=target_hz)
