"""Reference room-acoustics labels (T60, C50, DRR, STI, SNR) from impulse responses.

These are the ground-truth oracles the model is trained to predict blindly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfilt

from .audio_io import AudioBuffer

CLARITY_CAP_DB = 100.0  # finite stand-in for an energyless tail (keeps labels z-scorable)

OCTAVE_CENTERS_HZ = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
MODULATION_FREQS_HZ = (0.63, 0.8, 1.0, 1.25, 1.6, 2.0, 2.5, 3.15, 4.0, 5.0, 6.3, 8.0, 10.0, 12.5)
STI_BAND_WEIGHTS = (0.13, 0.14, 0.11, 0.12, 0.19, 0.17, 0.14)


class InsufficientDecayError(ValueError):
    """The energy decay curve never reaches the -25 dB fit region."""


@dataclass(frozen=True)
class ImpulseResponse:
    h: np.ndarray
    sample_rate_hz: int
    direct_index: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=np.float64))
        if self.h.ndim != 1:
            raise ValueError("impulse response must be 1-D")
        energy = float(np.sum(self.h**2))
        if energy <= 0.0:
            raise ValueError("impulse response has zero energy")
        if self.direct_index < 0:
            object.__setattr__(self, "direct_index", int(np.argmax(np.abs(self.h))))


@dataclass(frozen=True)
class AcousticLabels:
    snr_db: float
    sti: float
    t60_s: float
    drr_db: float
    c50_db: float

    def __post_init__(self):
        if not (0.0 <= self.sti <= 1.0):
            raise ValueError(f"sti must lie in [0, 1], got {self.sti}")
        if self.t60_s <= 0.0:
            raise ValueError(f"t60 must be positive, got {self.t60_s}")

    def as_dict(self) -> dict:
        return {
            "snr_db": self.snr_db,
            "sti": self.sti,
            "t60_s": self.t60_s,
            "drr_db": self.drr_db,
            "c50_db": self.c50_db,
        }


ACOUSTIC_TASKS = ("snr_db", "sti", "t60_s", "drr_db", "c50_db")


def energy_decay_curve(ir: ImpulseResponse) -> np.ndarray:
    """Schroeder backward integral, normalized, in dB."""
    e = ir.h**2
    tail = np.cumsum(e[::-1])[::-1]
    total = tail[0]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(tail / total)


def t60_schroeder(ir: ImpulseResponse) -> float:
    """T60 via line fit on the EDC between -5 and -25 dB (T20 extrapolation)."""
    edc = energy_decay_curve(ir)
    in_range = np.nonzero((edc <= -5.0) & (edc >= -25.0))[0]
    # require a usable fit region, not just the terminal plunge of the integral
    if len(in_range) < 16:
        raise InsufficientDecayError(
            f"EDC decay region [-5, -25] dB holds only {len(in_range)} samples"
        )
    t = in_range / ir.sample_rate_hz
    slope, _ = np.polyfit(t, edc[in_range], 1)
    if slope >= 0.0:
        raise InsufficientDecayError("EDC is not decaying over the fit region")
    return -60.0 / slope


def _window_bounds(ir: ImpulseResponse, half_width_s: float) -> tuple[int, int]:
    half = int(round(half_width_s * ir.sample_rate_hz))
    return max(0, ir.direct_index - half), min(len(ir.h), ir.direct_index + half + 1)


def _ratio_db(num: float, den: float) -> float:
    if den <= 0.0:
        return CLARITY_CAP_DB
    return min(10.0 * math.log10(num / den), CLARITY_CAP_DB)


def c50(ir: ImpulseResponse) -> float:
    """Early(50 ms)-to-late energy ratio in dB, measured from the direct arrival."""
    split = ir.direct_index + int(round(0.050 * ir.sample_rate_hz))
    early = float(np.sum(ir.h[ir.direct_index : split] ** 2))
    late = float(np.sum(ir.h[split:] ** 2))
    return _ratio_db(early, late)


def drr(ir: ImpulseResponse) -> float:
    """Direct(+-2.5 ms window)-to-reverberant energy ratio in dB."""
    lo, hi = _window_bounds(ir, 0.0025)
    direct = float(np.sum(ir.h[lo:hi] ** 2))
    rest = float(np.sum(ir.h**2)) - direct
    return _ratio_db(direct, rest)


def octave_band_sos(center_hz: float, rate_hz: int) -> np.ndarray:
    """4th-order Butterworth band-pass with IEC edges fc/sqrt(2)..fc*sqrt(2)."""
    lo = center_hz / math.sqrt(2.0)
    hi = center_hz * math.sqrt(2.0)
    nyq = rate_hz / 2.0
    return butter(2, [lo / nyq, hi / nyq], btype="bandpass", output="sos")


def sti(ir: ImpulseResponse, snr_per_band_db=None) -> float:
    """Speech Transmission Index via the indirect MTF method.

    For each octave band and modulation frequency:
      m = |sum h_k^2 e^(-j 2 pi f_m t)| / sum h_k^2 * 1/(1 + 10^(-SNR_k/10)),
    apparent SNR = 10 log10(m/(1-m)) clipped to +-15 dB, TI = (SNR + 15)/30,
    STI = band-weighted mean of per-band mean TI.
    """
    if snr_per_band_db is None:
        snr_per_band_db = [math.inf] * len(OCTAVE_CENTERS_HZ)
    if len(snr_per_band_db) != len(OCTAVE_CENTERS_HZ):
        raise ValueError(f"expected {len(OCTAVE_CENTERS_HZ)} band SNRs, got {len(snr_per_band_db)}")

    t = np.arange(len(ir.h)) / ir.sample_rate_hz
    fm = np.asarray(MODULATION_FREQS_HZ)
    phasors = np.exp(-2j * np.pi * fm[:, None] * t[None, :])  # (14, N)

    mtis = []
    for center, snr_db in zip(OCTAVE_CENTERS_HZ, snr_per_band_db):
        hk = sosfilt(octave_band_sos(center, ir.sample_rate_hz), ir.h)
        e = hk**2
        total = float(e.sum())
        if total <= 0.0:
            mtis.append(0.0)
            continue
        m = np.abs(phasors @ e) / total
        noise_factor = 1.0 if math.isinf(snr_db) else 1.0 / (1.0 + 10.0 ** (-snr_db / 10.0))
        m = np.minimum(m * noise_factor, 1.0 - 1e-9)
        snr_app = np.clip(10.0 * np.log10(m / (1.0 - m)), -15.0, 15.0)
        mtis.append(float(np.mean((snr_app + 15.0) / 30.0)))
    return float(np.dot(STI_BAND_WEIGHTS, mtis))


def snr_of_mix(speech: AudioBuffer, noise: AudioBuffer) -> float:
    """Full-file energy ratio in dB; speech and noise as produced by synthesis."""
    if len(speech) != len(noise) or speech.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("speech and noise must share length and sample rate")
    es = float(np.sum(speech.samples**2))
    en = float(np.sum(noise.samples**2))
    if es <= 0.0:
        raise ValueError("speech signal has zero energy")
    if en <= 0.0:
        return math.inf
    return 10.0 * math.log10(es / en)


def labels_from_ir(
    ir: ImpulseResponse, snr_db: float, snr_per_band_db=None
) -> AcousticLabels:
    """All five labels for a degradation built from this IR at the given SNR."""
    return AcousticLabels(
        snr_db=snr_db,
        sti=sti(ir, snr_per_band_db),
        t60_s=t60_schroeder(ir),
        drr_db=drr(ir),
        c50_db=c50(ir),
    )
