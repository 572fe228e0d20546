import numpy as np
import pytest

from mosra.audio_io import MODEL_RATE_HZ, AudioBuffer
from mosra.model import EncoderConfig, ModelConfig, MosraModel
from mosra.synth import make_speech


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tone_1s():
    """1 s, 440 Hz sine at 48 kHz."""
    t = np.arange(MODEL_RATE_HZ) / MODEL_RATE_HZ
    return AudioBuffer(samples=0.3 * np.sin(2 * np.pi * 440.0 * t), sample_rate_hz=MODEL_RATE_HZ)


@pytest.fixture
def speech_1s():
    return make_speech(1.0, seed=7)


@pytest.fixture(scope="session")
def tiny_model_config():
    """A deliberately small model so forward passes stay cheap in unit tests."""
    return ModelConfig(
        cnn_channels=(4, 4, 8, 8, 8, 16),
        feature_dim=16,
        shared=EncoderConfig(layers=1, heads=1, d_model=16, d_ff=16, dropout_p=0.1),
        head=EncoderConfig(layers=1, heads=1, d_model=8, d_ff=8, dropout_p=0.1),
        seed=0,
    )


@pytest.fixture
def tiny_model(tiny_model_config):
    return MosraModel(tiny_model_config)
