import numpy as np
import pytest

from mosra import autodiff as ad
from mosra.acoustics import ACOUSTIC_TASKS
from mosra.synth import CorpusConfig, ManifestRow, build_corpus
from mosra.trainer import (
    CyclingLoader,
    LossWeights,
    TrainConfig,
    compute_loss,
    compute_norm_stats,
    featurize_manifest,
    fit,
    mos_mse,
    write_history,
)


def _t(values):
    return ad.Tensor(np.asarray(values, dtype=np.float32).reshape(-1, 1))


def test_loss_arithmetic():
    # MOS MSE = 1; each acoustic MSE = 1 -> 2*1 + 0.2*5 = 3.0
    mos_out, mos_lab = _t([2.0, 4.0]), _t([3.0, 3.0])
    ra_out = {t: _t([1.0]) for t in ACOUSTIC_TASKS}
    ra_lab = {t: _t([2.0]) for t in ACOUSTIC_TASKS}
    loss = compute_loss(mos_out, mos_lab, ra_out, ra_lab, LossWeights(mos=2.0, acoustics=0.2))
    assert float(loss.data) == pytest.approx(3.0, rel=1e-6)


def test_loss_mos_only():
    mos_out, mos_lab = _t([2.0, 4.0]), _t([3.0, 3.0])
    loss = compute_loss(mos_out, mos_lab, None, None, LossWeights(mos=2.0, acoustics=0.0))
    assert float(loss.data) == pytest.approx(2.0, rel=1e-6)


def test_loss_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(mos=0.0)
    with pytest.raises(ValueError):
        LossWeights(acoustics=-1.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def _ra_row(i, t60):
    return ManifestRow(
        path=f"r{i}.wav", role="acoustics",
        snr_db=10.0 + i, sti=0.5 + 0.01 * i, t60_s=t60, drr_db=float(i), c50_db=2.0 * i,
    )


def test_norm_stats_values():
    rows = [_ra_row(0, 0.2), _ra_row(1, 0.4), ManifestRow(path="m.wav", role="mos", mos=3.0)]
    stats = compute_norm_stats(rows)
    assert stats.mean["t60_s"] == pytest.approx(0.3)
    assert stats.std["t60_s"] == pytest.approx(0.1)
    assert set(stats.mean) == set(ACOUSTIC_TASKS)


def test_norm_stats_errors():
    with pytest.raises(ValueError):
        compute_norm_stats([ManifestRow(path="m.wav", role="mos", mos=3.0)])
    with pytest.raises(ValueError):
        compute_norm_stats([_ra_row(0, 0.5), _ra_row(1, 0.5)])  # constant t60
    bad = ManifestRow(
        path="b.wav", role="acoustics",
        snr_db=float("inf"), sti=0.5, t60_s=0.3, drr_db=0.0, c50_db=0.0,
    )
    with pytest.raises(ValueError):
        compute_norm_stats([bad, _ra_row(1, 0.4)])


def test_cycling_loader_covers_everything():
    rng = np.random.default_rng(0)
    loader = CyclingLoader(10, 4, rng)
    seen = np.concatenate([loader.next_batch() for _ in range(3)])
    assert sorted(seen) == list(range(10))
    # keeps going after exhaustion with a fresh permutation
    more = loader.next_batch()
    assert len(more) == 4


def test_cycling_loader_rejects_empty():
    with pytest.raises(ValueError):
        CyclingLoader(0, 4, np.random.default_rng(0))


def test_write_history(tmp_path):
    hist = [{"epoch": 1, "train_loss": 2.0, "val_mos_mse": 1.5}]
    write_history(hist, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mos_mse"
    assert lines[1].startswith("1,2.0")


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rows = build_corpus(
        n_mos=6, n_acoustics=6, speech_dir=None, out_dir=out, seed=21,
        cfg=CorpusConfig(clip_seconds=0.4),
    )
    return out, rows


def test_featurize_manifest(tiny_corpus):
    out, rows = tiny_corpus
    examples = featurize_manifest(rows, out, __import__("mosra.frontend", fromlist=["FrontendConfig"]).FrontendConfig())
    assert len(examples) == len(rows)
    assert examples[0].mos is not None and examples[0].acoustics is None
    assert examples[-1].acoustics is not None and examples[-1].mos is None
    assert examples[0].segments.ndim == 3


def test_fit_end_to_end(tiny_corpus, tiny_model):
    out, rows = tiny_corpus
    cfg = TrainConfig(batch_size=4, max_epochs=3, patience=2, seed=0)
    result = fit(tiny_model, rows, rows, cfg, train_dir=out, val_dir=out)
    assert len(result.history) <= 3
    assert result.best_epoch >= 1
    assert np.isfinite(result.best_val_mos_mse)
    # label normalization was fitted from the acoustics rows
    assert tiny_model.label_norm["snr_db"] != (0.0, 1.0)
    # model was restored to the best epoch: validation MSE must match the record
    examples = featurize_manifest(
        rows, out, __import__("mosra.frontend", fromlist=["FrontendConfig"]).FrontendConfig()
    )
    val_pool = [e for e in examples if e.mos is not None]
    assert mos_mse(tiny_model, val_pool) == pytest.approx(result.best_val_mos_mse, rel=1e-5)


def test_fit_is_deterministic(tiny_corpus, tiny_model_config):
    from mosra.model import MosraModel

    out, rows = tiny_corpus
    cfg = TrainConfig(batch_size=4, max_epochs=2, patience=5, seed=3)
    r1 = fit(MosraModel(tiny_model_config), rows, rows, cfg, train_dir=out, val_dir=out)
    r2 = fit(MosraModel(tiny_model_config), rows, rows, cfg, train_dir=out, val_dir=out)
    assert r1.history == r2.history


def test_fit_mos_only_needs_no_acoustics(tiny_corpus, tiny_model):
    out, rows = tiny_corpus
    mos_rows = [r for r in rows if r.role == "mos"]
    cfg = TrainConfig(batch_size=4, max_epochs=1, patience=5, seed=0)
    result = fit(
        tiny_model, mos_rows, mos_rows, cfg,
        weights=LossWeights(mos=2.0, acoustics=0.0), train_dir=out, val_dir=out,
    )
    assert len(result.history) == 1
    # no normalization stats were fitted
    assert tiny_model.label_norm["snr_db"] == (0.0, 1.0)


def test_fit_requires_mos_rows(tiny_corpus, tiny_model):
    out, rows = tiny_corpus
    ra_rows = [r for r in rows if r.role == "acoustics"]
    cfg = TrainConfig(batch_size=4, max_epochs=1)
    with pytest.raises(ValueError):
        fit(tiny_model, ra_rows, rows, cfg, train_dir=out, val_dir=out)
