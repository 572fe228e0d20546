"""End-to-end acceptance checks, one test per criterion.

Run `pytest -v tests/test_acceptance.py` to get a pass/fail line per criterion.
The two training-based criteria (07, 08) are marked `slow`; deselect them with
`-m "not slow"` for a quick pass.
"""

import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mosra import acoustics
from mosra.acoustics import OCTAVE_CENTERS_HZ, ImpulseResponse
from mosra.audio_io import MODEL_RATE_HZ, AudioBuffer, save_wav
from mosra.cli import main as cli_main
from mosra.evaluator import EvalPairs, pearson, rmse, rmse_after_mapping
from mosra.frontend import FrontendConfig, SegmentTensor, featurize, mel_spectrogram
from mosra.model import TASKS, EncoderConfig, ModelConfig, MosraModel
from mosra.synth import DegradationSpec, RirSpec, degrade_detailed, make_speech, synth_rir

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))
from test_autodiff import gradcheck  # noqa: E402  (shared FD utility)


def _report(criterion, detail):
    print(f"[acceptance] criterion {criterion}: PASS ({detail})")


# -- 1. gradient integrity ------------------------------------------------


def test_criterion_01_end_to_end_gradcheck():
    t0 = time.time()
    cfg = ModelConfig(
        cnn_channels=(2, 2, 2, 2, 2, 2),
        feature_dim=8,
        shared=EncoderConfig(layers=1, heads=1, d_model=8, d_ff=8, dropout_p=0.0),
        head=EncoderConfig(layers=1, heads=1, d_model=8, d_ff=8, dropout_p=0.0),
        seed=0,
    )
    model = MosraModel(cfg, dtype=np.float64)
    model.set_training(True)
    segments = np.random.default_rng(0).uniform(-1, 1, (2, 48, 15))

    def loss_fn(*params):
        outs = model.forward_tasks(segments)
        total = None
        for task in TASKS:
            term = (outs[task] * outs[task]).sum()
            total = term if total is None else total + term
        return total

    params = model.parameters()
    worst = gradcheck(loss_fn, params, h=1e-5, tol=1e-4)
    wall = time.time() - t0
    assert wall < 60.0, f"gradcheck took {wall:.1f} s"
    _report("01 gradient integrity", f"max rel err {worst:.2e} over "
            f"{sum(p.data.size for p in params)} params in {wall:.1f} s")


# -- 2. frontend shapes ---------------------------------------------------


def test_criterion_02_frontend_shapes():
    t = np.arange(8 * MODEL_RATE_HZ) / MODEL_RATE_HZ
    buf = AudioBuffer(0.1 * np.sin(2 * np.pi * 300 * t), MODEL_RATE_HZ)
    spec = mel_spectrogram(buf)
    assert spec.values.shape == (48, 799), spec.values.shape
    segs = featurize(buf)
    assert segs.values.shape == (197, 48, 15), segs.values.shape
    _report("02 frontend shapes", "8 s @48 kHz -> 799 frames -> 197 segments")


# -- 3. parameter budget --------------------------------------------------


def test_criterion_03_param_budget(tmp_path, capsys):
    model = MosraModel()
    path = tmp_path / "default.mosra"
    model.save(path)
    assert cli_main(["inspect", "--model", str(path)]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("total trainable parameters:"))
    count = int(line.split(":")[1])
    assert 350_000 <= count <= 470_000, count
    assert count == model.param_count()
    _report("03 parameter budget", f"{count} params in [350k, 470k]")


# -- 4. acoustic oracles --------------------------------------------------


def test_criterion_04_acoustic_oracles():
    t0 = time.time()
    for t60 in (0.2, 0.6, 1.2):
        for drr_db in (-3.0, 6.0, 15.0):
            _, labels = synth_rir(RirSpec(t60_s=t60, drr_db=drr_db, seed=7))
            assert abs(labels.t60_s - t60) <= 0.10 * t60, (t60, drr_db, labels.t60_s)
            assert abs(labels.drr_db - drr_db) <= 0.5, (t60, drr_db, labels.drr_db)

    delta = np.zeros(64)
    delta[0] = 1.0
    delta_ir = ImpulseResponse(h=delta, sample_rate_hz=MODEL_RATE_HZ, direct_index=0)
    sti_clean = acoustics.sti(delta_ir)
    assert abs(sti_clean - 1.0) <= 1e-6, sti_clean
    sti_0db = acoustics.sti(delta_ir, [0.0] * len(OCTAVE_CENTERS_HZ))
    assert abs(sti_0db - 0.5) <= 1e-3, sti_0db

    reverb_ir, _ = synth_rir(RirSpec(t60_s=0.8, drr_db=0.0, seed=3))
    curve = [
        acoustics.sti(reverb_ir, [s] * len(OCTAVE_CENTERS_HZ))
        for s in (math.inf, 10.0, 0.0)
    ]
    assert curve[0] > curve[1] > curve[2], curve
    wall = time.time() - t0
    assert wall < 120.0
    _report("04 acoustic oracles",
            f"9 IRs within tolerance; STI(delta,inf)={sti_clean:.6f}, "
            f"STI(delta,0dB)={sti_0db:.4f}, monotone in noise; {wall:.1f} s")


# -- 5. mix calibration ---------------------------------------------------


def test_criterion_05_mix_calibration():
    speech = make_speech(1.0, seed=5)
    worst = 0.0
    for target in (0.0, 10.0, 20.0, 40.0):
        res = degrade_detailed(
            speech,
            DegradationSpec(rir=RirSpec(t60_s=0.5, drr_db=4.0, seed=2), snr_db=target),
            seed=11,
        )
        realized = acoustics.snr_of_mix(
            AudioBuffer(res.speech_component, MODEL_RATE_HZ),
            AudioBuffer(res.noise_component, MODEL_RATE_HZ),
        )
        worst = max(worst, abs(realized - target))
    assert worst <= 0.05, worst
    _report("05 mix calibration", f"worst |realized-requested| = {worst:.2e} dB")


# -- 6. evaluator identities ----------------------------------------------


def test_criterion_06_evaluator():
    y = np.linspace(1, 5, 100)
    perfect = EvalPairs(y, y)
    assert abs(pearson(perfect) - 1.0) <= 1e-9
    assert rmse_after_mapping(perfect) <= 1e-9

    affine = EvalPairs(0.4 * y - 2.0, y)
    assert rmse_after_mapping(affine) < 1e-6

    for seed in range(20):
        r = np.random.default_rng(seed)
        noisy = EvalPairs(y + r.normal(0, 0.7, y.size), y)
        assert rmse_after_mapping(noisy) <= rmse(noisy.y_pred, noisy.y_true) + 1e-9
    _report("06 evaluator", "PCC=1/mapped RMSE=0 on perfect, affine mapped away, "
            "mapped<=raw on 20 random sets")


# -- 7. overfit capability (slow) -----------------------------------------


@pytest.mark.slow
def test_criterion_07_overfit(tmp_path):
    from overfit_demo import run_overfit

    result = run_overfit(tmp_path / "corpus", epochs=500, seed=0)
    assert result["reached"], result
    assert result["mos_rmse"] < 0.1, result
    assert all(v < 0.05 for v in result["acoustic_nmse"].values()), result
    assert result["wall_s"] < 900.0, result
    _report("07 overfit capability",
            f"mos_rmse {result['mos_rmse']:.4f}, worst acoustic nmse "
            f"{max(result['acoustic_nmse'].values()):.4f} after "
            f"{result['epochs_used']} epochs in {result['wall_s']:.0f} s")


# -- 8. multi-task benefit (slow) -----------------------------------------


@pytest.mark.slow
def test_criterion_08_multitask_benefit(tmp_path):
    from multitask_benefit import run_experiment

    workdir = os.environ.get("MOSRA_BENEFIT_DIR") or tmp_path / "benefit"
    summary = run_experiment(workdir, seeds=(0, 1, 2))
    assert summary["wall_s"] < 7200.0, summary
    assert summary["mean_pcc_multi"] >= summary["mean_pcc_mos_only"] - 0.02, summary
    _report("08 multi-task benefit",
            f"mean test PCC multi {summary['mean_pcc_multi']:.4f} vs "
            f"mos-only {summary['mean_pcc_mos_only']:.4f} over 3 seeds "
            f"({summary['wall_s']:.0f} s)")


# -- 9. runtime / footprint -----------------------------------------------


def test_criterion_09_predict_bench(tmp_path, capsys):
    model_path = tmp_path / "default.mosra"
    MosraModel().save(model_path)
    wav_path = tmp_path / "clip8s.wav"
    save_wav(wav_path, make_speech(8.0, seed=1))

    args = ["predict", "--model", str(model_path), "--audio", str(wav_path),
            "--json", "--bench"]
    assert cli_main(args) == 0  # warm-up (BLAS thread pools, page cache)
    capsys.readouterr()
    assert cli_main(args) == 0
    payload = json.loads(capsys.readouterr().out)
    wall_ms = payload["bench"]["wall_ms"]
    peak_mb = payload["bench"]["peak_bytes"] / 1e6
    assert wall_ms < 500.0, wall_ms
    assert peak_mb < 100.0, peak_mb
    _report("09 runtime/footprint", f"{wall_ms:.0f} ms, {peak_mb:.0f} MB peak on 8 s clip")


# -- 10. serialization ----------------------------------------------------


def test_criterion_10_serialization(tmp_path):
    model = MosraModel()
    model.label_norm = {t: (float(i), 1.5 + i) for i, t in enumerate(model.label_norm)}
    segments = SegmentTensor(
        values=np.random.default_rng(4).uniform(-80, 0, (12, 48, 15)).astype(np.float32)
    )
    before = model.predict_segments(segments)

    p1, p2 = tmp_path / "a.mosra", tmp_path / "b.mosra"
    model.save(p1)
    loaded = MosraModel.load(p1)
    loaded.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    after = loaded.predict_segments(segments)
    assert before == after  # bit-exact, dataclass equality on floats
    _report("10 serialization",
            "save->load->save byte-identical; predictions bit-exact")
