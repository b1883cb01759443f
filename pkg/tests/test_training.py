import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corenet import models, training
from corenet.autodiff import Tensor
from corenet.metrics import MSE_FLOOR, snr_db_batch
from corenet.training import (
    LOG_COLUMNS,
    NumericalAbort,
    OptimizerState,
    TrainConfig,
    adam_step,
    cosine_lr,
    init_seed,
    params_sha256,
    read_epoch_log,
    train_corenet,
    validate,
    with_overrides,
)


def scalar_param(v):
    return {"x": Tensor(np.array([v], dtype=np.float64), requires_grad=True)}


def test_adam_zero_gradient():
    p = scalar_param(1.5)
    state = OptimizerState.zeros_like(p)
    state.first_moment["x"][:] = 0.2
    state.second_moment["x"][:] = 0.3
    adam_step(p, {"x": np.zeros(1)}, state, 0.01)
    # m is nonzero, so the parameter still moves; with zero moments it does not
    assert state.first_moment["x"][0] == pytest.approx(0.18)
    assert state.second_moment["x"][0] == pytest.approx(0.3 * 0.999)
    q = scalar_param(1.5)
    fresh = OptimizerState.zeros_like(q)
    adam_step(q, {}, fresh, 0.01)
    assert q["x"].data[0] == 1.5 and fresh.step_count == 1


def test_adam_first_step_moves_by_lr():
    p = scalar_param(0.0)
    state = OptimizerState.zeros_like(p)
    adam_step(p, {"x": np.ones(1)}, state, 5e-3)
    # m_hat = 1, v_hat = 1
    assert p["x"].data[0] == pytest.approx(-5e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_matches_reference_loop(rng):
    grads = rng.standard_normal((20, 3))
    p = {"x": Tensor(np.zeros(3), requires_grad=True)}
    state = OptimizerState.zeros_like(p)
    theta, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        adam_step(p, {"x": g}, state, 1e-2)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["x"].data, theta, rtol=1e-12)
    with pytest.raises(ValueError):
        adam_step(p, {"x": np.zeros(2)}, state, 1e-2)


def test_cosine_examples():
    assert cosine_lr(0, 5e-3, 100) == 5e-3
    assert cosine_lr(50, 5e-3, 100) == pytest.approx(2.5e-3, rel=1e-12)
    # the restart: the formula's modulus wraps t_max back to lr0, zero is the left limit
    assert cosine_lr(100 - 1e-9, 5e-3, 100) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(100, 5e-3, 100) == 5e-3
    with pytest.raises(ValueError):
        cosine_lr(-1, 5e-3, 100)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 500), st.floats(1e-6, 1.0))
def test_cosine_periodic_and_bounded(t, t_max, lr0):
    a = cosine_lr(t, lr0, t_max)
    assert a == cosine_lr(t + t_max, lr0, t_max)
    assert 0.0 <= a <= lr0


def test_config_validation_and_round_trip():
    cfg = TrainConfig(max_epochs=3, seed=5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert with_overrides(cfg, {"lr_ar": 1e-3}).lr_ar == 1e-3
    for bad in ({"batch_size": 0}, {"lr_mr": 0.0}, {"seed": -1}, {"t_max": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_batch_larger_than_dataset(tiny_data, tiny_models):
    _, train, val = tiny_data
    with pytest.raises(ValueError, match="batch_size"):
        train_corenet(train, val, TrainConfig(max_epochs=1, batch_size=len(train) + 1), *tiny_models)


def test_step_isolation(tiny_data, tiny_models, tiny_train_config):
    _, train, val = tiny_data
    seen = {}
    events = []

    def digest(params):
        return params_sha256(params, {})

    def hook(stage, b, ar, mr):
        if stage == "before":
            seen["ar"], seen["mr"] = digest(ar), digest(mr)
            return
        if stage == "after_ar":
            assert digest(mr) == seen["mr"], "master changed during the apprentice step"
            assert digest(ar) != seen["ar"]
            assert all(p.grad is None for p in mr.values())
            assert any(p.grad is not None for p in ar.values())
            seen["ar"] = digest(ar)
        else:
            assert digest(ar) == seen["ar"], "apprentice changed during the master step"
            assert digest(mr) != seen["mr"]
            assert all(p.grad is None for p in ar.values())
            assert any(p.grad is not None for p in mr.values())
        events.append((stage, b))

    train_corenet(train, val, with_overrides(tiny_train_config, {"max_epochs": 1}), *tiny_models, hooks=hook)
    assert events == [(s, b) for b in range(3) for s in ("after_ar", "after_mr")]


def test_deterministic_logs_and_checkpoints(tmp_path, tiny_data, tiny_models, tiny_train_config):
    _, train, val = tiny_data
    a = train_corenet(train, val, tiny_train_config, *tiny_models, run_dir=tmp_path / "a")
    b = train_corenet(train, val, tiny_train_config, *tiny_models, run_dir=tmp_path / "b")
    for name in ("epoch_log.csv", "best.ckpt", "last.ckpt", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert a.files == b.files
    c = train_corenet(train, val, with_overrides(tiny_train_config, {"seed": 12}), *tiny_models)
    assert [r.val_snr for r in c.epoch_log] != [r.val_snr for r in a.epoch_log]


def test_epoch_log_contents(tmp_path, tiny_data, tiny_models, tiny_train_config):
    _, train, val = tiny_data
    result = train_corenet(train, val, tiny_train_config, *tiny_models, run_dir=tmp_path)
    log = result.epoch_log
    assert [r.epoch for r in log] == list(range(tiny_train_config.max_epochs + 1))
    assert all(math.isnan(getattr(log[0], c)) for c in ("L_A", "L_fid", "L_time", "L_freq", "L_M"))
    assert all(math.isfinite(getattr(r, c)) for r in log[1:] for c in LOG_COLUMNS[1:])
    # the epoch-0 row scores the initial parameters
    init_ar = models.init_ar(tiny_models[0], init_seed(11, "ar"))
    assert log[0].val_snr == validate(init_ar, tiny_models[0], val, 8)
    on_disk = read_epoch_log(tmp_path / "epoch_log.csv")
    for x, y in zip(on_disk, log):
        for c in LOG_COLUMNS:
            vx, vy = getattr(x, c), getattr(y, c)
            assert vx == vy or (math.isnan(vx) and math.isnan(vy))
    assert result.best_val_snr == max(r.val_snr for r in log)
    first_best = next(r.epoch for r in log if r.val_snr == result.best_val_snr)
    assert result.best_checkpoint.epoch == first_best
    assert result.baseline_val_snr == float(np.mean(snr_db_batch(val.clean, val.corrupted)))


def test_warm_start_epoch_zero(tiny_data, tiny_models, tiny_train_config):
    _, train, val = tiny_data
    first = train_corenet(train, val, tiny_train_config, *tiny_models)
    best = first.best_checkpoint
    second = train_corenet(train, val, tiny_train_config, *tiny_models, init=(best.ar_params, best.mr_params), pass_index=1)
    assert second.initial_sha256 == params_sha256(best.ar_params, best.mr_params)
    assert second.epoch_log[0].val_snr == best.val_snr_db
    assert second.best_val_snr >= best.val_snr_db
    with pytest.raises(ValueError):
        train_corenet(train, val, tiny_train_config, *tiny_models, init=({}, best.mr_params))


@pytest.mark.parametrize("debug", [False, True])
def test_non_finite_input_aborts(tiny_data, tiny_models, tiny_train_config, debug):
    _, train, val = tiny_data
    bad = train.subset(slice(None))
    bad.corrupted = bad.corrupted.copy()
    bad.corrupted[:, 0, 5] = np.nan
    cfg = with_overrides(tiny_train_config, {"debug": debug})
    with pytest.raises(NumericalAbort) as info:
        train_corenet(bad, val, cfg, *tiny_models)
    snap = info.value.snapshot
    assert snap["epoch"] == 1 and snap["batch"] == 0


def test_identity_and_perfect_validation(tiny_data, tiny_models, monkeypatch):
    _, _, val = tiny_data
    ar = models.init_ar(tiny_models[0], 0)
    monkeypatch.setattr(training, "restore", lambda x, *a, **k: x)
    assert validate(ar, tiny_models[0], val) == float(np.mean(snr_db_batch(val.clean, val.corrupted)))
    lookup = {id(val.corrupted): val.clean}
    monkeypatch.setattr(training, "restore", lambda x, *a, **k: lookup[id(x)])
    ceiling = 10 * np.log10(np.sum(val.clean.astype(np.float64) ** 2, axis=(1, 2)) / MSE_FLOOR)
    assert validate(ar, tiny_models[0], val) == pytest.approx(float(np.mean(ceiling)))
    with pytest.raises(ValueError):
        validate(ar, tiny_models[0], val.subset(slice(0, 0)))


def test_interrupted_run_leaves_loadable_checkpoints(tmp_path, tiny_data, tiny_models, tiny_train_config):
    from corenet.checkpoint import load_checkpoint

    _, train, val = tiny_data

    def stop(stage, b, ar, mr):
        if stage == "before" and stop.calls == 4:
            raise KeyboardInterrupt
        stop.calls += stage == "before"

    stop.calls = 0
    with pytest.raises(KeyboardInterrupt):
        train_corenet(train, val, with_overrides(tiny_train_config, {"max_epochs": 3}), *tiny_models,
                      run_dir=tmp_path, hooks=stop)
    last = load_checkpoint(tmp_path / "last.ckpt")
    assert last.epoch == 1
    assert load_checkpoint(tmp_path / "best.ckpt").epoch in (0, 1)
    assert len(read_epoch_log(tmp_path / "epoch_log.csv")) == 2
