import numpy as np
import pytest

from aligngroup.params import (PARAM_NAMES, Adam, NonFiniteError, ParameterSet, TrainConfig, adam_step,
                               init_parameters, load_checkpoint, save_checkpoint)


def test_same_seed_bitwise_identical():
    cfg = TrainConfig(seed=7)
    a = init_parameters(cfg, 50, 30, 10)
    b = init_parameters(cfg, 50, 30, 10)
    for k in PARAM_NAMES:
        assert np.array_equal(a[k], b[k])


def test_shapes():
    p = init_parameters(TrainConfig(d=6), 5, 4, 3)
    assert p.shapes() == {
        "user_emb": (5, 6), "item_emb": (4, 6), "group_emb": (3, 6),
        "w_fuse": (12, 6), "w1": (6, 8), "w2": (8, 1),
    }
    for k in PARAM_NAMES:
        assert p.grads[k].shape == p.m[k].shape == p.v[k].shape == p[k].shape


def test_xavier_bound():
    p = init_parameters(TrainConfig(d=32), 5275, 1513, 995)
    assert np.abs(p["user_emb"]).max() <= np.sqrt(6 / (5275 + 32))
    assert np.abs(p["item_emb"]).max() <= np.sqrt(6 / (1513 + 32))
    # uniform on the full interval, not a narrower one
    assert np.abs(p["user_emb"]).max() > 0.99 * np.sqrt(6 / (5275 + 32))


def test_gaussian_hidden_layers():
    # pool w1 (32 x 8) over seeds until there are >= 10^6 draws
    draws = np.concatenate([init_parameters(TrainConfig(seed=s), 1, 1, 1)["w1"].ravel() for s in range(3907)])
    assert draws.size >= 1_000_000
    assert abs(draws.mean()) < 0.001
    assert abs(draws.std() - 0.1) < 0.005


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(layers=0)
    with pytest.raises(ValueError):
        TrainConfig(tau=0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_align=-1)
    with pytest.raises(ValueError):
        TrainConfig(d=1)
    with pytest.raises(ValueError):
        TrainConfig(strategy="median")


def _scalar_params(value, grad):
    p = ParameterSet({k: np.zeros((1, 1)) for k in PARAM_NAMES})
    p.values["w2"][...] = value
    p.grads["w2"][...] = grad
    return p


def test_adam_zero_gradient_leaves_parameters():
    p = init_parameters(TrainConfig(), 5, 4, 3)
    before = {k: p[k].copy() for k in PARAM_NAMES}
    adam_step(p, lr=1e-3)
    for k in PARAM_NAMES:
        assert np.array_equal(p[k], before[k])


def test_adam_first_step_hand_value():
    p = _scalar_params(0.5, 1.0)
    adam_step(p, lr=1e-3)
    # m_hat = 1, v_hat = 1 -> step = lr * 1 / (1 + eps)
    assert p["w2"][0, 0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_descent_direction():
    p = init_parameters(TrainConfig(), 5, 4, 3)
    rng = np.random.default_rng(0)
    before = {}
    for k in PARAM_NAMES:
        p.grads[k][...] = rng.normal(size=p[k].shape)
        before[k] = p[k].copy()
    Adam(lr=1e-3).step(p)
    for k in PARAM_NAMES:
        assert np.array_equal(np.sign(p[k] - before[k]), -np.sign(p.grads[k]))


def test_adam_moments_advance():
    p = _scalar_params(0.0, 2.0)
    Adam().step(p)
    assert p.m["w2"][0, 0] == pytest.approx(0.2)
    assert p.v["w2"][0, 0] == pytest.approx(0.004)
    assert p.step == 1


def test_non_finite_gradient_names_parameter():
    p = init_parameters(TrainConfig(), 5, 4, 3)
    grads = {k: np.zeros_like(p[k]) for k in PARAM_NAMES}
    grads["w_fuse"][0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="w_fuse"):
        p.set_grads(grads)


def test_no_aliasing():
    p = init_parameters(TrainConfig(), 5, 4, 3)
    before = {k: p[k].copy() for k in PARAM_NAMES}
    p.grads["item_emb"][...] = 1.0
    Adam().step(p)
    for k in PARAM_NAMES:
        if k != "item_emb":
            assert np.array_equal(p[k], before[k])


def test_checkpoint_round_trip(tmp_path):
    cfg = TrainConfig(seed=3, tau=0.4)
    p = init_parameters(cfg, 5, 4, 3)
    p.grads["w1"][...] = 0.3
    Adam().step(p)
    save_checkpoint(tmp_path / "c.npz", p, cfg, rng_state={"seed": 3})
    q, cfg2, header = load_checkpoint(tmp_path / "c.npz")
    assert cfg2 == cfg
    assert header["version"] == 1 and header["rng_state"] == {"seed": 3}
    assert q.step == p.step
    for k in PARAM_NAMES:
        assert np.array_equal(q[k], p[k])
        assert np.array_equal(q.m[k], p.m[k])
        assert np.array_equal(q.v[k], p.v[k])


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.npz")
