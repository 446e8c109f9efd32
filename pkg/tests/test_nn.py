import numpy as np
import pytest

from gridreconf.errors import BatchTooSmall, NonFiniteGradient
from gridreconf.nn import MLP, Adam, init_he


def _loss(mlp, x, target, train=True):
    out, cache = mlp.forward(x, train=train, update_stats=False)
    r = out - target
    return 0.5 * np.sum(r * r), cache, r


@pytest.mark.parametrize("train", [True, False])
def test_backward_matches_finite_differences(train):
    rng = np.random.default_rng(3)
    mlp = MLP.create(4, 6, 3, seed=1)
    mlp.running["var1"] = rng.uniform(0.5, 2.0, 6)
    mlp.running["mean2"] = rng.normal(size=6)
    x = rng.normal(size=(7, 4))
    target = rng.normal(size=(7, 3))
    _, cache, r = _loss(mlp, x, target, train)
    grads = mlp.backward(cache, r)
    h = 1e-6
    for name, arr in mlp.params.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = _loss(mlp, x, target, train)[0]
            arr[idx] = old - h
            down = _loss(mlp, x, target, train)[0]
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(grads[name], num, rtol=1e-5, atol=1e-7, err_msg=name)


def test_running_statistics_update():
    mlp = MLP.create(3, 4, 2, seed=0)
    x = np.random.default_rng(0).normal(2.0, 3.0, size=(50, 3))
    a1 = x @ mlp.params["W1"] + mlp.params["b1"]
    mlp.forward(x, train=True)
    np.testing.assert_allclose(mlp.running["mean1"], 0.1 * a1.mean(axis=0))
    np.testing.assert_allclose(mlp.running["var1"], 0.9 + 0.1 * a1.var(axis=0, ddof=1))
    before = {k: v.copy() for k, v in mlp.running.items()}
    mlp.forward(x, train=True, update_stats=False)
    mlp.forward(x, train=False)
    for k in before:
        np.testing.assert_array_equal(before[k], mlp.running[k])


def test_eval_mode_is_row_independent():
    mlp = MLP.create(3, 4, 2, seed=0)
    x = np.random.default_rng(1).normal(size=(5, 3))
    full, _ = mlp.forward(x)
    one, _ = mlp.forward(x[2:3])
    np.testing.assert_allclose(full[2:3], one)


def test_he_init_statistics():
    (w, b), = init_he([(400, 300)], seed=0)
    assert np.all(b == 0)
    assert abs(w.std() - np.sqrt(2 / 400)) < 2e-3
    with pytest.raises(ValueError):
        init_he([(0, 3)], 0)


def test_adam_first_step_is_lr_times_sign():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    adam = Adam(lr=0.1)
    adam.step(params, {"w": np.array([3.0, -0.01, 0.0])})
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)


def test_adam_minimizes_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    adam = Adam(lr=0.05)
    for _ in range(2000):
        adam.step(params, {"w": 2 * params["w"]})
    assert np.abs(params["w"]).max() < 1e-2


def test_adam_rejects_nonfinite():
    params = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteGradient):
        Adam().step(params, {"w": np.array([np.nan, 0.0])})
    assert np.all(params["w"] == 0)


def test_batch_too_small():
    mlp = MLP.create(3, 4, 2, seed=0)
    with pytest.raises(BatchTooSmall):
        mlp.forward(np.zeros((1, 3)), train=True)
    with pytest.raises(BatchTooSmall):
        mlp.forward(np.zeros((0, 3)))
    mlp.forward(np.zeros((1, 3)))


def test_serialization_round_trip():
    mlp = MLP.create(3, 4, 2, seed=5)
    mlp.forward(np.random.default_rng(0).normal(size=(9, 3)), train=True)
    blob = mlp.to_bytes({"note": "x"})
    back, meta = MLP.from_bytes(blob)
    assert meta == {"format": 1, "note": "x"}
    x = np.random.default_rng(2).normal(size=(4, 3))
    np.testing.assert_array_equal(mlp.forward(x)[0], back.forward(x)[0])
    assert back.shapes == (3, 4, 2)
