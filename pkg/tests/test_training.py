import numpy as np
import pytest

from kjepa import synthgen as sg
from kjepa.errors import ConfigError, DimensionError, NumericError
from kjepa.models import ModelConfig, init_params, read_checkpoint
from kjepa.numerics import ModelParams
from kjepa.training import (
    EpochRecord,
    TrainConfig,
    TrainHistory,
    evaluate,
    mean_loss,
    shuffle_order,
    train,
    train_ae,
    train_jepa,
)


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    return sg.build_dataset(sg.DatasetConfig(10, 1, str(tmp_path_factory.mktemp("d"))))


@pytest.fixture(scope="module")
def splits(files):
    return {s: sg.read_dataset(files[s]) for s in sg.SPLITS}


def single_regime(splits, rid):
    return {s: d.subset(d.labels == rid) for s, d in splits.items()}


def test_shuffle_order_is_a_seeded_permutation():
    a = shuffle_order(100, 3, 2)
    assert sorted(a.tolist()) == list(range(100))
    assert np.array_equal(a, shuffle_order(100, 3, 2))
    assert not np.array_equal(a, shuffle_order(100, 3, 3))


def test_zero_epochs_returns_initial_params(splits):
    cfg = ModelConfig()
    res = train(cfg, TrainConfig(epochs=0), splits["train"], splits["val"])
    init = init_params(cfg, np.random.default_rng(0))
    assert all(np.array_equal(res.params[n].data, init[n].data) for n in init)
    assert res.history.records == []
    assert np.isfinite(res.initial_val_loss)


def test_initial_jepa_loss_finite_and_nonzero(splits):
    p = init_params(ModelConfig(), 0)
    v = mean_loss(p, splits["val"], "jepa")
    assert np.isfinite(v) and v > 0


def test_ae_initial_loss_near_one(splits):
    # standardized windows have roughly unit second moment; the fresh decoder
    # output is small next to them
    p = init_params(ModelConfig(mode="ae"), 0)
    target_power = float(np.mean(splits["val"].context.astype(np.float64) ** 2))
    assert target_power == pytest.approx(1.0, abs=0.1)
    assert mean_loss(p, splits["val"], "ae") == pytest.approx(1.0, abs=0.3)


def test_single_regime_loss_decreases(splits):
    d = single_regime(splits, 1)
    res = train(ModelConfig(), TrainConfig(epochs=5, batch_size=4), d["train"], d["val"])
    assert res.history.val_losses[-1] < res.initial_val_loss


def test_ae_loss_decreases(splits):
    res = train(ModelConfig(mode="ae"), TrainConfig(epochs=2, batch_size=32), splits["train"], splits["val"])
    assert res.history.val_losses[-1] < res.initial_val_loss


def test_ema_alpha_one_freezes_target(splits):
    d = single_regime(splits, 0)
    res = train(ModelConfig(), TrainConfig(epochs=1, batch_size=4, ema_alpha=1.0), d["train"], d["val"])
    init = init_params(ModelConfig(), np.random.default_rng(0))
    for n in res.params:
        if n.startswith("ema."):
            assert np.array_equal(res.params[n].data, init[n].data)
    assert not np.array_equal(res.params["encoder.conv0.weight"].data, init["encoder.conv0.weight"].data)


def test_ema_tracks_online(splits):
    d = single_regime(splits, 0)
    res = train(ModelConfig(), TrainConfig(epochs=2, batch_size=2, ema_alpha=0.0), d["train"], d["val"])
    for n, t in res.params.items():
        if n.startswith("ema."):
            assert np.array_equal(t.data, res.params[n[4:]].data)


def test_training_is_deterministic(splits, tmp_path):
    kw = dict(epochs=2, batch_size=32)
    a = train(ModelConfig(), TrainConfig(**kw), splits["train"], splits["val"], tmp_path / "a.kjc")
    b = train(ModelConfig(), TrainConfig(**kw), splits["train"], splits["val"], tmp_path / "b.kjc")
    assert a.history.train_losses == b.history.train_losses
    assert a.history.val_losses == b.history.val_losses
    assert (tmp_path / "a.kjc").read_bytes() == (tmp_path / "b.kjc").read_bytes()


def test_log_and_checkpoint(files, tmp_path):
    res = train_jepa(ModelConfig(), TrainConfig(epochs=2, batch_size=64), files.train, files.val, tmp_path / "m.kjc", tmp_path / "m.log")
    hist = TrainHistory.from_text((tmp_path / "m.log").read_text())
    assert [r.epoch for r in hist.records] == [0, 1]
    assert hist.val_losses == res.history.val_losses
    params, cfg = read_checkpoint(tmp_path / "m.kjc")
    assert cfg.mode == "jepa" and "ema.encoder.conv0.weight" in params
    assert evaluate(tmp_path / "m.kjc", files.val) == pytest.approx(res.history.val_losses[-1], rel=1e-6)


def test_train_ae_checkpoint(files, tmp_path):
    train_ae(ModelConfig(), TrainConfig(epochs=1, batch_size=64), files.train, files.val, tmp_path / "a.kjc")
    params, cfg = read_checkpoint(tmp_path / "a.kjc")
    assert cfg.mode == "ae" and "decoder.deconv3.weight" in params


def test_non_finite_loss_reports_step(splits):
    d = single_regime(splits, 0)
    bad = d["train"].subset(np.ones(len(d["train"]), bool))
    bad.context[-1, 10] = np.nan
    with pytest.raises(NumericError, match=r"step [01]:"):
        train(ModelConfig(), TrainConfig(epochs=1, batch_size=4), bad, d["val"])


def test_geometry_mismatch(splits):
    with pytest.raises(DimensionError):
        train(ModelConfig(input_len=512), TrainConfig(epochs=1), splits["train"], splits["val"])


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(ema_alpha=1.5).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()


def test_history_order_enforced():
    h = TrainHistory()
    h.append(EpochRecord(0, 1.0, 1.0, 5))
    with pytest.raises(ValueError):
        h.append(EpochRecord(2, 1.0, 1.0, 5))
    assert TrainHistory.from_text(h.to_text()).records == h.records


def test_grad_clip_limits_update(splits):
    d = single_regime(splits, 3)
    res = train(ModelConfig(), TrainConfig(epochs=1, batch_size=4, grad_clip=1e-3), d["train"], d["val"])
    assert all(np.isfinite(t.data).all() for t in res.params.values())
    assert isinstance(res.params, ModelParams)


def test_zero_learning_rate_keeps_loss_constant(splits):
    d = single_regime(splits, 2)
    res = train(ModelConfig(), TrainConfig(epochs=3, batch_size=4, lr=0.0), d["train"], d["val"])
    assert len(set(res.history.val_losses)) == 1
    assert res.history.val_losses[0] == res.initial_val_loss
