import io
import math
from dataclasses import replace

import numpy as np
import pytest

from oracles import central_difference
from tnprivacy.data import Dataset, gen_surrogate, gen_toy
from tnprivacy.mps import forward, init_mps, random_mps
from tnprivacy.neural import Mlp, ToyModel, flatten_params
from tnprivacy.train import (
    AdamState, EmptyClassError, TrainConfig, accuracy, adam_step, batch_cross_entropy,
    cross_entropy, embed_dataset, mps_gradients, onehot_encode, train_arrays, train_model,
    write_history)


def test_cross_entropy_reference_values():
    loss, grad = cross_entropy(np.zeros(2), 0)
    assert loss == pytest.approx(math.log(2))
    np.testing.assert_allclose(grad, [-0.5, 0.5])
    loss, _ = cross_entropy(np.array([30.0, -30.0]), 0)
    assert 0.0 <= loss < 1e-20
    loss, _ = cross_entropy(np.array([1000.0, -1000.0]), 1)
    assert np.isfinite(loss) and loss == pytest.approx(2000.0)


def test_cross_entropy_gradient_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(size=3)
        label = int(rng.integers(3))
        _, g = cross_entropy(z, label)
        for i in range(3):
            fd = central_difference(lambda: cross_entropy(z, label)[0], [z], (0, (i,)))
            assert abs(fd - g[i]) < 1e-6


def test_batch_loss_is_the_mean():
    rng = np.random.default_rng(1)
    z, y = rng.normal(size=(5, 2)), rng.integers(2, size=5)
    loss, g = batch_cross_entropy(z, y)
    assert loss == pytest.approx(np.mean([cross_entropy(a, b)[0] for a, b in zip(z, y)]))
    np.testing.assert_allclose(g, np.array([cross_entropy(a, b)[1] for a, b in zip(z, y)]) / 5)


def test_adam_zero_gradient_is_a_fixed_point():
    p = [np.array([1.0, -2.0])]
    adam_step(AdamState(lr=0.1), p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_constant_gradient_step_tends_to_lr():
    p = [np.zeros(1)]
    st = AdamState(lr=0.01)
    prev = 0.0
    for _ in range(2000):
        adam_step(st, p, [np.array([3.0])])
        step = prev - p[0][0]
        prev = p[0][0]
        assert abs(step) <= 0.01 * (1 + 1e-6)
    assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_coupled_l2_adds_lambda_theta():
    a, b = [np.array([2.0])], [np.array([2.0])]
    adam_step(AdamState(lr=0.1, l2=0.5), a, [np.array([0.0])])
    adam_step(AdamState(lr=0.1), b, [np.array([1.0])])
    np.testing.assert_array_equal(a[0], b[0])


@pytest.mark.parametrize("out_site", [0, 3, 5])
def test_mps_gradients_match_finite_differences(out_site):
    rng = np.random.default_rng(out_site)
    m = random_mps(6, 2, 2, output_site=out_site, seed=out_site, stddev=0.7)
    x = rng.uniform(size=(4, 5, 2))
    y = rng.integers(2, size=4)
    sites = [s.copy() for s in m.sites]

    def loss():
        return batch_cross_entropy(forward(m.replace_sites(sites), x), y)[0]

    _, grads = mps_gradients(m, x, y)
    for _ in range(40):
        k = int(rng.integers(len(sites)))
        pos = tuple(int(rng.integers(s)) for s in sites[k].shape)
        fd = central_difference(loss, sites, (k, pos))
        assert abs(fd - grads[k][pos]) <= 1e-5 * max(1.0, abs(fd))


def test_mps_gradient_is_mean_invariant_under_duplication():
    rng = np.random.default_rng(2)
    m = random_mps(4, 2, 2, seed=1)
    x, y = rng.uniform(size=(1, 3, 2)), np.array([1])
    _, g1 = mps_gradients(m, x, y)
    _, g2 = mps_gradients(m, np.concatenate([x, x]), np.concatenate([y, y]))
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_onehot_width_for_reference_network():
    d = gen_surrogate(50, seed=0)
    x = onehot_encode(d)
    assert x.shape == (50, 9)
    assert np.all((x[:, :2].sum(axis=1)) == 1.0)


def test_toy_model_learns_separable_data_within_200_epochs():
    d = gen_toy(400, 1, seed=0)
    cfg = TrainConfig(batch_size=20, lr=1e-2, epochs=200, seed=0)
    m, hist = train_model(ToyModel.init(seed=0), d, cfg)
    assert max(h["train_acc"] for h in hist) >= 0.99


def test_mps_learns_toy_task():
    d = gen_toy(400, -1, seed=1)
    m, hist = train_model(init_mps(3, 2, 2, 2, seed=0), d, TrainConfig(batch_size=20, lr=0.01, epochs=200, seed=0))
    assert accuracy(m, d, 0) >= 0.99


def test_final_loss_below_initial_for_most_seeds():
    wins = 0
    for seed in range(100):
        d = gen_toy(60, 1, seed=seed)
        _, hist = train_model(ToyModel.init(seed=seed), d, TrainConfig(batch_size=20, lr=1e-2, epochs=5, seed=seed))
        wins += hist[-1]["train_loss"] < hist[0]["train_loss"]
    assert wins >= 95


def test_zero_epochs_returns_initial_model():
    net = Mlp.init([9, 4, 2], seed=0)
    d = gen_surrogate(40, seed=0)
    out, hist = train_model(net, d, TrainConfig(epochs=0))
    assert hist == []
    np.testing.assert_array_equal(flatten_params(out), flatten_params(net))


def test_training_is_bit_deterministic():
    d = gen_surrogate(200, seed=3)
    cfg = TrainConfig(batch_size=8, lr=3e-4, l2=6e-3, epochs=3, val_fraction=0.2, seed=7)
    a, _ = train_model(Mlp.init([9, 16, 16, 8, 4, 2], seed=1), d, cfg)
    b, _ = train_model(Mlp.init([9, 16, 16, 8, 4, 2], seed=1), d, cfg)
    np.testing.assert_array_equal(flatten_params(a), flatten_params(b))
    c, _ = train_model(init_mps(6, 2, 2, 2, seed=1), d, replace(cfg, batch_size=100, lr=0.1))
    e, _ = train_model(init_mps(6, 2, 2, 2, seed=1), d, replace(cfg, batch_size=100, lr=0.1))
    np.testing.assert_array_equal(flatten_params(c), flatten_params(e))


def test_best_validation_snapshot_is_returned():
    d = gen_surrogate(300, seed=4)
    cfg = TrainConfig(batch_size=8, lr=3e-3, epochs=8, val_fraction=0.3, seed=1)
    m, hist = train_model(Mlp.init([9, 8, 2], seed=0), d, cfg)
    best = max(h["val_acc"] for h in hist)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(d))
    val = d.take(order[:90])
    assert accuracy(m, val) == pytest.approx(best)


def test_missing_class_raises():
    d = gen_toy(30, 1, seed=0)
    only_pos = d.take(np.flatnonzero(d.labels() == 1))
    with pytest.raises(EmptyClassError):
        train_model(ToyModel.init(), only_pos, TrainConfig())


def test_history_csv():
    buf = io.StringIO()
    write_history([{"epoch": 1, "train_loss": 0.5, "train_acc": 0.75, "val_acc": float("nan")}], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_acc"
    assert lines[1].startswith("1,0.5,0.75,")


def test_train_arrays_fits_blobs():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-2, 0.5, size=(100, 2)), rng.normal(2, 0.5, size=(100, 2))])
    y = np.repeat([0, 1], 100)
    net, hist = train_arrays(Mlp.init([2, 8, 2], seed=0), x, y, TrainConfig(batch_size=32, lr=1e-2, epochs=50))
    assert hist[-1]["train_acc"] >= 0.99
