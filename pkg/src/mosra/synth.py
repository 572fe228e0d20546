"""Desk-scale corpus synthesis: RIRs with known acoustics, degraded speech, proxy MOS."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, sosfilt

from . import acoustics
from .acoustics import (
    CLARITY_CAP_DB,
    OCTAVE_CENTERS_HZ,
    AcousticLabels,
    ImpulseResponse,
    octave_band_sos,
)
from .audio_io import MODEL_RATE_HZ, AudioBuffer, save_wav

MANIFEST_COLUMNS = ("path", "role", "mos", "snr_db", "sti", "t60_s", "drr_db", "c50_db")

NO_RIR_T60_S = 0.01  # label floor for anechoic rows


@dataclass(frozen=True)
class RirSpec:
    t60_s: float
    drr_db: float
    sample_rate_hz: int = MODEL_RATE_HZ
    length_s: float = 0.0  # 0 -> auto (1.5 * t60)
    seed: int = 0

    def __post_init__(self):
        if not 0.1 <= self.t60_s <= 3.0:
            raise ValueError(f"t60 target {self.t60_s} outside [0.1, 3.0] s")
        if self.length_s == 0.0:
            object.__setattr__(self, "length_s", 1.5 * self.t60_s)
        if self.length_s < 1.5 * self.t60_s:
            raise ValueError(f"length {self.length_s} s < 1.5 * t60 ({self.t60_s} s)")


@dataclass(frozen=True)
class DegradationSpec:
    rir: RirSpec | None = None
    snr_db: float = math.inf
    gain_db: float = 0.0

    def __post_init__(self):
        if math.isfinite(self.snr_db) and not -10.0 <= self.snr_db <= 60.0:
            raise ValueError(f"snr target {self.snr_db} outside [-10, 60] dB")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    role: str  # "mos" or "acoustics"
    mos: float | None = None
    snr_db: float | None = None
    sti: float | None = None
    t60_s: float | None = None
    drr_db: float | None = None
    c50_db: float | None = None

    def labels(self) -> AcousticLabels:
        if self.role != "acoustics":
            raise ValueError("only acoustics rows carry full labels")
        return AcousticLabels(
            snr_db=self.snr_db, sti=self.sti, t60_s=self.t60_s,
            drr_db=self.drr_db, c50_db=self.c50_db,
        )


DIRECT_DELAY_S = 0.005
DIRECT_HALF_WINDOW_S = 0.0025


def synth_rir(spec: RirSpec) -> tuple[ImpulseResponse, AcousticLabels]:
    """Unit direct impulse plus an exponentially shaped noise tail.

    The tail is scaled so the direct-to-reverberant ratio hits the target
    exactly; returned labels are re-measured from the realized IR.
    """
    fs = spec.sample_rate_hz
    n = int(round(spec.length_s * fs))
    t_d = int(round(DIRECT_DELAY_S * fs))
    half = int(round(DIRECT_HALF_WINDOW_S * fs))
    tail_start = t_d + half + 1
    if n <= tail_start + 8:
        raise ValueError(f"IR length {spec.length_s} s leaves no room for a tail")

    rng = np.random.default_rng(spec.seed)
    h = np.zeros(n)
    h[t_d] = 1.0
    t = (np.arange(tail_start, n) - t_d) / fs
    tail = rng.standard_normal(n - tail_start) * 10.0 ** (-3.0 * t / spec.t60_s)

    e_tail = float(np.sum(tail**2))
    if e_tail <= 0.0:
        raise ValueError("degenerate noise tail; cannot reach DRR target")
    # direct window holds exactly the unit impulse; scale tail for the DRR target
    scale = math.sqrt(10.0 ** (-spec.drr_db / 10.0) / e_tail)
    h[tail_start:] = tail * scale

    ir = ImpulseResponse(h=h, sample_rate_hz=fs, direct_index=t_d)
    labels = acoustics.labels_from_ir(ir, snr_db=math.inf)
    return ir, labels


def band_snrs_db(signal: np.ndarray, noise: np.ndarray, fs: int) -> list:
    """Octave-band SNRs of a speech/noise pair, for the STI noise term."""
    out = []
    for center in OCTAVE_CENTERS_HZ:
        sos = octave_band_sos(center, fs)
        es = float(np.sum(sosfilt(sos, signal) ** 2))
        en = float(np.sum(sosfilt(sos, noise) ** 2))
        if en <= 0.0:
            out.append(math.inf)
        elif es <= 0.0:
            out.append(-np.inf if en > 0 else math.inf)
        else:
            out.append(10.0 * math.log10(es / en))
    return out


@dataclass(frozen=True)
class DegradationResult:
    audio: AudioBuffer
    labels: AcousticLabels
    ir: ImpulseResponse | None
    speech_component: np.ndarray
    noise_component: np.ndarray


def degrade_detailed(speech: AudioBuffer, spec: DegradationSpec, seed: int = 0) -> DegradationResult:
    """Reverberate, add calibrated noise, apply gain; labels from the components."""
    if speech.sample_rate_hz != MODEL_RATE_HZ:
        raise ValueError(f"degrade expects {MODEL_RATE_HZ} Hz speech")
    if float(np.sum(speech.samples**2)) <= 0.0:
        raise ValueError("speech input has zero energy")
    fs = speech.sample_rate_hz
    rng = np.random.default_rng(seed)

    if spec.rir is not None:
        ir, ir_labels = synth_rir(spec.rir)
        # convolve, then keep the input length so clip durations stay fixed
        wet = fftconvolve(speech.samples, ir.h)[: len(speech.samples)]
        t60_label, drr_label, c50_label = ir_labels.t60_s, ir_labels.drr_db, ir_labels.c50_db
    else:
        ir = None
        wet = speech.samples.copy()
        t60_label, drr_label, c50_label = NO_RIR_T60_S, CLARITY_CAP_DB, CLARITY_CAP_DB

    if math.isfinite(spec.snr_db):
        noise = rng.standard_normal(len(wet))
        e_wet = float(np.sum(wet**2))
        e_noise = float(np.sum(noise**2))
        noise *= math.sqrt(e_wet / (e_noise * 10.0 ** (spec.snr_db / 10.0)))
        mix = wet + noise
        snr_label = acoustics.snr_of_mix(
            AudioBuffer(wet, fs), AudioBuffer(noise, fs)
        )
        band_snrs = band_snrs_db(wet, noise, fs)
    else:
        noise = np.zeros_like(wet)
        mix = wet
        snr_label = math.inf
        band_snrs = [math.inf] * len(OCTAVE_CENTERS_HZ)

    sti_ir = ir
    if sti_ir is None:
        delta = np.zeros(64)
        delta[0] = 1.0
        sti_ir = ImpulseResponse(h=delta, sample_rate_hz=fs, direct_index=0)
    sti_label = acoustics.sti(sti_ir, band_snrs)

    gain = 10.0 ** (spec.gain_db / 20.0)
    mix = mix * gain
    peak = float(np.max(np.abs(mix))) if len(mix) else 0.0
    ceiling = 10.0 ** (-1.0 / 20.0)  # -1 dBFS
    if peak > 1.0:
        norm = ceiling / peak
        mix = mix * norm
        gain *= norm

    labels = AcousticLabels(
        snr_db=snr_label, sti=sti_label, t60_s=t60_label, drr_db=drr_label, c50_db=c50_label
    )
    return DegradationResult(
        audio=AudioBuffer(mix, fs),
        labels=labels,
        ir=ir,
        speech_component=wet * gain,
        noise_component=noise * gain,
    )


def degrade(speech: AudioBuffer, spec: DegradationSpec, seed: int = 0):
    res = degrade_detailed(speech, spec, seed)
    return res.audio, res.labels


def proxy_mos(labels: AcousticLabels) -> float:
    """Deterministic MOS stand-in: 1 + 4 * sti * logistic((snr-10)/5), clipped to [1, 5]."""
    if math.isinf(labels.snr_db):
        sigma = 1.0
    else:
        sigma = 1.0 / (1.0 + math.exp(-(labels.snr_db - 10.0) / 5.0))
    return float(np.clip(1.0 + 4.0 * labels.sti * sigma, 1.0, 5.0))


# -- speech-like source material -----------------------------------------


def make_speech(duration_s: float, seed: int = 0, rate_hz: int = MODEL_RATE_HZ) -> AudioBuffer:
    """Synthetic speech-like signal: pitched harmonics with a syllabic envelope
    plus fricative noise bursts. Broadband, nonstationary, deterministic."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz

    # slowly wandering fundamental, 100-220 Hz
    n_ctrl = max(4, int(duration_s * 6) + 2)
    f0_ctrl = rng.uniform(100.0, 220.0, size=n_ctrl)
    f0 = np.interp(t, np.linspace(0, duration_s, n_ctrl), f0_ctrl)
    phase = 2.0 * np.pi * np.cumsum(f0) / rate_hz

    voiced = np.zeros(n)
    for k in range(1, 25):
        # spectral tilt roughly -6 dB/octave
        voiced += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    noise = rng.standard_normal(n)

    # syllabic on/off at ~4 Hz, smoothed
    syl_rate = rng.uniform(3.0, 5.0)
    n_syl = max(2, int(duration_s * syl_rate) + 1)
    gates = (rng.random(n_syl) < 0.75).astype(float)
    env = np.interp(t, np.linspace(0, duration_s, n_syl), gates)
    win = max(1, int(0.02 * rate_hz))
    env = np.convolve(env, np.ones(win) / win, mode="same")
    if env.max() <= 0:
        env[:] = 1.0

    x = env * (voiced + 0.15 * noise) + 0.02 * noise
    x = x / (np.max(np.abs(x)) + 1e-12) * 0.5
    return AudioBuffer(samples=x, sample_rate_hz=rate_hz)


# -- corpus construction --------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def write_manifest(rows: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.path, r.role] + [_fmt(getattr(r, c)) for c in MANIFEST_COLUMNS[2:]]
            )


def load_manifest(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise ValueError(f"bad manifest header in {path}: {reader.fieldnames}")
        for rec in reader:
            kwargs = {"path": rec["path"], "role": rec["role"]}
            for c in MANIFEST_COLUMNS[2:]:
                kwargs[c] = float(rec[c]) if rec[c] != "" else None
            rows.append(ManifestRow(**kwargs))
    return rows


@dataclass(frozen=True)
class CorpusConfig:
    clip_seconds: float = 2.0
    t60_range_s: tuple = (0.15, 1.5)
    drr_range_db: tuple = (-6.0, 18.0)
    snr_range_db: tuple = (0.0, 40.0)
    clean_fraction: float = 0.2
    keep_irs: bool = False


def _row_spec(rng, cfg: CorpusConfig, rir_seed: int) -> DegradationSpec:
    snr = float(rng.uniform(*cfg.snr_range_db))
    if rng.random() < cfg.clean_fraction:
        # reverb-free rows; SNR stays finite so the label remains z-scorable
        return DegradationSpec(rir=None, snr_db=snr)
    lo, hi = cfg.t60_range_s
    t60 = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    drr = float(rng.uniform(*cfg.drr_range_db))
    return DegradationSpec(
        rir=RirSpec(t60_s=t60, drr_db=drr, seed=rir_seed), snr_db=snr
    )


def _speech_files(speech_dir) -> list:
    files = sorted(Path(speech_dir).glob("*.wav"))
    if not files:
        raise ValueError(f"speech_dir {speech_dir} contains no WAV files")
    return files


def build_corpus(
    n_mos: int,
    n_acoustics: int,
    speech_dir,
    out_dir,
    seed: int = 0,
    cfg: CorpusConfig = CorpusConfig(),
    threads: int = 1,
) -> list:
    """Generate WAVs plus a manifest with 'mos' and 'acoustics' role pools.

    With speech_dir=None, source speech is synthesized per row. Returns the
    manifest rows; also writes out_dir/manifest.csv.
    """
    from .audio_io import load_wav, resample

    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    if cfg.keep_irs:
        (out_dir / "ir").mkdir(parents=True, exist_ok=True)
    files = _speech_files(speech_dir) if speech_dir is not None else None

    def build_row(i: int) -> ManifestRow:
        role = "mos" if i < n_mos else "acoustics"
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        rir_seed = int(rng.integers(0, 2**31))
        deg_seed = int(rng.integers(0, 2**31))
        spec = _row_spec(rng, cfg, rir_seed)

        if files is not None:
            buf = load_wav(files[rng.integers(0, len(files))])
            if buf.sample_rate_hz != MODEL_RATE_HZ:
                buf = resample(buf, MODEL_RATE_HZ)
            need = int(cfg.clip_seconds * MODEL_RATE_HZ)
            if len(buf) > need:
                start = int(rng.integers(0, len(buf) - need + 1))
                buf = AudioBuffer(buf.samples[start : start + need], MODEL_RATE_HZ)
        else:
            buf = make_speech(cfg.clip_seconds, seed=deg_seed + 1)

        res = degrade_detailed(buf, spec, seed=deg_seed)
        rel = f"audio/row_{i:06d}.wav"
        save_wav(out_dir / rel, res.audio)
        if cfg.keep_irs and res.ir is not None:
            save_wav(
                out_dir / "ir" / f"row_{i:06d}.wav",
                AudioBuffer(res.ir.h, res.ir.sample_rate_hz),
            )
        if role == "mos":
            return ManifestRow(path=rel, role="mos", mos=proxy_mos(res.labels))
        return ManifestRow(path=rel, role="acoustics", **res.labels.as_dict())

    indices = range(n_mos + n_acoustics)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(build_row, indices))
    else:
        rows = [build_row(i) for i in indices]

    write_manifest(rows, out_dir / "manifest.csv")
    return rows
