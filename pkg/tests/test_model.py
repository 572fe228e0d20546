import numpy as np
import pytest

from mosra.audio_io import MODEL_RATE_HZ, AudioBuffer
from mosra.frontend import SegmentTensor
from mosra.model import (
    TASKS,
    ModelConfig,
    MosraModel,
    sinusoidal_positions,
)


def segs(n_seg=4, seed=0):
    return np.random.default_rng(seed).uniform(-80, 0, (n_seg, 48, 15)).astype(np.float32)


def test_positions_shape_and_values():
    pe = sinusoidal_positions(10, 8)
    assert pe.shape == (10, 8)
    assert pe[0, 0] == 0.0  # sin(0)
    assert pe[0, 1] == 1.0  # cos(0)
    assert np.all(np.abs(pe) <= 1.0)


def test_default_param_count_in_band():
    model = MosraModel()
    assert 350_000 <= model.param_count() <= 470_000


def test_forward_shapes(tiny_model):
    out = tiny_model.forward_tasks(segs())
    assert set(out) == set(TASKS)
    for t in TASKS:
        assert out[t].shape == (1, 1)


def test_forward_batch_matches_single(tiny_model):
    seg_list = [segs(3, 1), segs(5, 2)]
    batched = tiny_model.forward_batch(seg_list, tasks=("mos", "sti"))
    assert batched["mos"].shape == (2, 1)
    for i, s in enumerate(seg_list):
        single = tiny_model.forward_tasks(s, tasks=("mos", "sti"))
        np.testing.assert_allclose(
            batched["mos"].data[i], single["mos"].data[0], rtol=1e-5, atol=1e-6
        )


def test_same_seed_same_outputs(tiny_model_config):
    a = MosraModel(tiny_model_config)
    b = MosraModel(tiny_model_config)
    x = segs()
    np.testing.assert_array_equal(
        a.forward_tasks(x)["mos"].data, b.forward_tasks(x)["mos"].data
    )


def test_predict_is_deterministic_in_eval(tiny_model):
    tiny_model.set_training(True)  # predict must force eval mode regardless
    st = SegmentTensor(values=segs())
    p1 = tiny_model.predict_segments(st)
    p2 = tiny_model.predict_segments(st)
    assert p1 == p2
    assert tiny_model.training  # restored


def test_heads_are_independent(tiny_model):
    out = tiny_model.forward_tasks(segs())
    vals = [out[t].data.item() for t in TASKS]
    assert len(set(vals)) == len(vals)


def test_label_norm_round_trip(tiny_model):
    tiny_model.label_norm["t60_s"] = (0.5, 0.3)
    z = tiny_model.normalize_label("t60_s", 1.1)
    assert z == pytest.approx(2.0)
    assert tiny_model.denormalize("t60_s", z) == pytest.approx(1.1)
    # MOS passes through untouched
    assert tiny_model.normalize_label("mos", 3.7) == 3.7


def test_predict_resamples(tiny_model):
    rng = np.random.default_rng(0)
    lo = AudioBuffer(rng.uniform(-0.1, 0.1, 16000), 16000)
    hi = AudioBuffer(rng.uniform(-0.1, 0.1, MODEL_RATE_HZ), MODEL_RATE_HZ)
    assert tiny_model.predict(lo).mos != tiny_model.predict(hi).mos


def test_save_load_round_trip(tmp_path, tiny_model):
    tiny_model.label_norm["snr_db"] = (20.0, 9.0)
    path = tmp_path / "m.mosra"
    tiny_model.save(path)
    loaded = MosraModel.load(path)
    assert loaded.label_norm["snr_db"] == (20.0, 9.0)
    assert loaded.config == tiny_model.config
    x = SegmentTensor(values=segs())
    assert loaded.predict_segments(x) == tiny_model.predict_segments(x)


def test_save_is_byte_stable(tmp_path, tiny_model):
    p1, p2 = tmp_path / "a.mosra", tmp_path / "b.mosra"
    tiny_model.save(p1)
    MosraModel.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.mosra"
    p.write_bytes(b"NOTMOS" + b"\x00" * 64)
    with pytest.raises(ValueError):
        MosraModel.load(p)


def test_load_rejects_truncation(tmp_path, tiny_model):
    p = tmp_path / "m.mosra"
    tiny_model.save(p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-100])
    with pytest.raises(ValueError):
        MosraModel.load(p)


def test_snapshot_restore(tiny_model):
    snap = tiny_model.state_snapshot()
    x = SegmentTensor(values=segs())
    before = tiny_model.predict_segments(x)
    for p in tiny_model.parameters():
        p.data += 0.1
    assert tiny_model.predict_segments(x) != before
    tiny_model.load_snapshot(snap)
    assert tiny_model.predict_segments(x) == before


def test_config_from_dict_round_trip():
    from dataclasses import asdict

    cfg = ModelConfig()
    assert ModelConfig.from_dict(asdict(cfg)) == cfg
