import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosra.audio_io import MODEL_RATE_HZ, AudioBuffer
from mosra.frontend import (
    FrontendConfig,
    MelSpectrogram,
    featurize,
    hz_to_mel,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    segment,
)

CFG = FrontendConfig()


def _buf(seconds, freq=440.0):
    t = np.arange(int(seconds * MODEL_RATE_HZ)) / MODEL_RATE_HZ
    return AudioBuffer(samples=0.2 * np.sin(2 * np.pi * freq * t), sample_rate_hz=MODEL_RATE_HZ)


def _spec(values):
    return MelSpectrogram(values=values, frame_hop_s=0.010)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.0, max_value=24000.0))
def test_mel_scale_inverse(f):
    assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f, abs=1e-6)


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank(48, 960, MODEL_RATE_HZ, 0.0, 20000.0)
    assert fb.shape == (48, 481)
    assert np.all(fb >= 0.0)
    # every filter has support
    assert np.all(fb.max(axis=1) > 0.0)


def test_frame_count_8s():
    spec = mel_spectrogram(_buf(8.0), CFG)
    assert spec.values.shape == (48, 799)
    assert spec.frame_hop_s == pytest.approx(0.010)


def test_segment_count_8s():
    segs = featurize(_buf(8.0), CFG)
    assert segs.values.shape == (197, 48, 15)


def test_segment_slices_exact(rng):
    vals = rng.uniform(-80.0, 0.0, (48, 61))
    segs = segment(_spec(vals), CFG)
    assert segs.n_segments == 1 + (61 - 15) // 4
    for k in (0, 3, segs.n_segments - 1):
        np.testing.assert_array_equal(segs.values[k], vals[:, 4 * k : 4 * k + 15])


@settings(max_examples=30, deadline=None)
@given(
    n_frames=st.integers(min_value=15, max_value=200),
    k=st.integers(min_value=0, max_value=10**6),
    j=st.integers(min_value=0, max_value=14),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_segment_column_property(n_frames, k, j, seed):
    vals = np.random.default_rng(seed).uniform(-80.0, 0.0, (48, n_frames))
    segs = segment(_spec(vals), CFG).values
    k = k % segs.shape[0]
    np.testing.assert_array_equal(segs[k][:, j], vals[:, 4 * k + j])


def test_short_input_padded():
    vals = np.full((48, 9), -20.0)
    segs = segment(_spec(vals), CFG)
    assert segs.values.shape == (1, 48, 15)
    np.testing.assert_array_equal(segs.values[0][:, :9], vals)
    assert np.all(segs.values[0][:, 9:] == CFG.log_floor_db)


def test_log_floor():
    buf = AudioBuffer(samples=np.zeros(48000), sample_rate_hz=MODEL_RATE_HZ)
    spec = mel_spectrogram(buf, CFG)
    assert np.all(spec.values == CFG.log_floor_db)


def test_wrong_rate_rejected():
    buf = AudioBuffer(samples=np.zeros(16000), sample_rate_hz=16000)
    with pytest.raises(ValueError):
        mel_spectrogram(buf, CFG)


def test_fmax_above_nyquist_rejected():
    with pytest.raises(ValueError):
        mel_spectrogram(_buf(1.0), FrontendConfig(f_max_hz=30000.0))


def test_too_short_rejected():
    buf = AudioBuffer(samples=np.zeros(100), sample_rate_hz=MODEL_RATE_HZ)
    with pytest.raises(ValueError):
        mel_spectrogram(buf, CFG)
