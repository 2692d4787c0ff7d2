import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpkan.basis import BSplineGrid
from dpkan.data import Dataset
from dpkan.layers import FlatGradient, LinearLayer, Model, build_model, per_sample_gradient_matrix
from dpkan.numerics import Rng, l2_norm
from dpkan.optim import (
    AdamState,
    ClippedGradient,
    DivergenceError,
    DpSgdConfig,
    TrainingLog,
    adam_step,
    clip_gradient,
    noisy_aggregate,
    train,
)


def test_clip_scales_large_gradient():
    g = FlatGradient(np.array([3.0, 4.0]) * 0.4, 0)  # norm 2 = 2C for C=1
    c = clip_gradient(g, 1.0)
    assert abs(l2_norm(c.values) - 1.0) < 1e-12
    assert np.allclose(c.values / l2_norm(c.values), g.values / l2_norm(g.values))


def test_clip_leaves_small_gradient_alone():
    g = FlatGradient(np.array([0.3, 0.4]), 5)
    c = clip_gradient(g, 1.0)
    assert c.values.tobytes() == g.values.tobytes()
    assert c.sample_index == 5 and c.clip_norm == 1.0


def test_clip_zero_and_nonfinite():
    assert np.all(clip_gradient(FlatGradient(np.zeros(3), 0), 1.0).values == 0)
    with pytest.raises(ValueError):
        clip_gradient(FlatGradient(np.array([np.inf, 0.0]), 0), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(1e-3, 1e3))
def test_clip_bound_property(values, c):
    out = clip_gradient(FlatGradient(np.array(values), 0), c)
    assert l2_norm(out.values) <= c * (1 + 1e-12)


def clipped(rows, c=1.0):
    return [clip_gradient(FlatGradient(np.asarray(r, dtype=float), i), c) for i, r in enumerate(rows)]


def test_aggregate_without_noise_is_mean():
    rows = np.random.default_rng(0).normal(size=(4, 3)) * 0.1
    out = noisy_aggregate(clipped(rows), 0.0, 1.0, 4, Rng(0))
    assert np.allclose(out.values, rows.mean(axis=0), atol=1e-15)
    same = noisy_aggregate(clipped([rows[0]] * 7), 0.0, 1.0, 7, Rng(0))
    assert np.allclose(same.values, rows[0], atol=1e-15)


def test_aggregate_empty_batch():
    with pytest.raises(ValueError):
        noisy_aggregate([], 0.0, 1.0, 4, Rng(0))
    out = noisy_aggregate([], 1.0, 1.0, 4, Rng(0), n_params=3)
    assert out.values.shape == (3,) and np.all(out.values != 0)


def test_aggregate_rejects_unclipped_input():
    with pytest.raises(TypeError):
        noisy_aggregate([FlatGradient(np.ones(2), 0)], 1.0, 1.0, 1, Rng(0))
    with pytest.raises(ValueError):
        noisy_aggregate(clipped([[0.1, 0.1]], c=2.0), 1.0, 1.0, 1, Rng(0))


def test_aggregate_noise_std():
    rng = Rng(17)
    rows = clipped(np.full((10, 4), 0.1), c=0.5)
    draws = np.array([noisy_aggregate(rows, 1.0, 0.5, 10, rng).values for _ in range(100_000)])
    std = draws.std(axis=0)
    assert np.all((0.0485 <= std) & (std <= 0.0515)), std


def test_adam_zero_gradient_keeps_parameters():
    p = np.array([1.0, -2.0])
    new, state = adam_step(AdamState.zeros(2), p, np.zeros(2), 0.1)
    assert np.array_equal(new, p) and state.t == 1


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -0.5, 1e-2])
    new, _ = adam_step(AdamState.zeros(3), np.zeros(3), g, 0.01)
    assert np.allclose(new, -0.01 * np.sign(g), rtol=1e-5)


def test_adam_two_step_trace():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    theta = 0.0
    m = v = 0.0
    for t, g in ((1, 1.0), (2, -1.0)):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    state = AdamState.zeros(1)
    p = np.zeros(1)
    for g in (1.0, -1.0):
        p, state = adam_step(state, p, np.array([g]), lr)
    assert p[0] == pytest.approx(theta, rel=1e-12)


def test_adam_length_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3), 0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-6), st.integers(1, 60))
def test_adam_update_bounded_for_constant_gradient(g, steps):
    state, p, lr = AdamState.zeros(1), np.zeros(1), 0.01
    for _ in range(steps):
        new, state = adam_step(state, p, np.array([g]), lr)
        assert abs(new[0] - p[0]) <= lr * (1 + 1e-9)
        p = new


def test_adamw_decay_is_decoupled():
    new, _ = adam_step(AdamState.zeros(1, weight_decay=0.1), np.array([2.0]), np.zeros(1), 0.5)
    assert new[0] == pytest.approx(2.0 - 0.5 * 0.1 * 2.0)


def regression_data(n=64, d=3, seed=0):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(n, d))
    return Dataset(x, x @ np.array([1.0, -2.0, 0.5][:d]) + 0.1 * gen.normal(size=n), task="regression")


def quadratic_problem():
    # one weight, no bias: loss mean (w x - y)^2, optimum sum(xy)/sum(x^2)
    gen = np.random.default_rng(1)
    x = gen.normal(size=(32, 1))
    y = 1.7 * x[:, 0] + 0.2 * gen.normal(size=32)
    return Dataset(x, y, task="regression"), float(x[:, 0] @ y / (x[:, 0] @ x[:, 0]))


@pytest.mark.parametrize("lr", [0.1, 0.3])
@pytest.mark.parametrize("w0", [0.0, -2.0, 3.0])
def test_quadratic_converges_in_200_steps(lr, w0):
    # beta1 = 0.9 leaves a ~1e-5 momentum oscillation at step 200; 0.8 damps it
    data, optimum = quadratic_problem()
    model = Model([LinearLayer(1, 1, bias=False)])
    model.set_flat(np.array([w0]))
    cfg = DpSgdConfig(epochs=200, learning_rate=lr, clip_norm=1e9, noise_multiplier=0.0, batch_size=32,
                      sampling="full", seed=3, beta1=0.8)
    fitted, _ = train(model, data, cfg)
    assert abs(fitted.get_flat()[0] - optimum) < 1e-6


def test_quadratic_converges_with_default_betas():
    data, optimum = quadratic_problem()
    model = Model([LinearLayer(1, 1, bias=False)])
    model.set_flat(np.zeros(1))
    cfg = DpSgdConfig(epochs=1000, learning_rate=0.1, clip_norm=1e9, noise_multiplier=0.0, batch_size=32,
                      sampling="full", seed=3)
    fitted, _ = train(model, data, cfg)
    assert abs(fitted.get_flat()[0] - optimum) < 1e-12


def test_dp_disabled_training_is_plain_adam():
    data, _ = quadratic_problem()
    model = Model([LinearLayer(1, 1, bias=False)])
    model.set_flat(np.zeros(1))
    cfg = DpSgdConfig(epochs=25, learning_rate=0.1, clip_norm=1e9, noise_multiplier=0.0, batch_size=32,
                      sampling="full")
    fitted, _ = train(model, data, cfg)
    x, y = data.features[:, 0], data.targets
    state, w = AdamState.zeros(1), np.zeros(1)
    for _ in range(25):
        g = np.zeros(1)
        for xi, yi in zip(x, y):
            g += np.array([2 * (w[0] * xi - yi) * xi])
        w, state = adam_step(state, w, g / 32, 0.1)
    assert fitted.get_flat()[0] == pytest.approx(w[0], rel=1e-12)


def test_noise_free_private_step_equals_nonprivate_step():
    data = regression_data()
    model = build_model("kan", [3, 1], gen=np.random.default_rng(2), kan_grid=BSplineGrid(2, 3))
    grads, _ = per_sample_gradient_matrix(model, data.features, data.targets, "mse")
    big_c = 2 * float(np.max(np.linalg.norm(grads, axis=1)))
    common = dict(epochs=1, learning_rate=0.01, batch_size=64, seed=4, clip_norm=big_c)
    private, _ = train(model, data, DpSgdConfig(private=True, noise_multiplier=0.0, sampling="full", **common))
    plain, _ = train(model, data, DpSgdConfig(private=False, **common))
    assert private.get_flat().tobytes() == plain.get_flat().tobytes()


@pytest.mark.parametrize("private", [True, False])
def test_training_is_deterministic(private):
    data = regression_data(n=200)
    model = build_model("kan", [3, 1], gen=np.random.default_rng(5), kan_grid=BSplineGrid(2, 3))
    cfg = DpSgdConfig(epochs=3, learning_rate=0.01, batch_size=32, seed=6, private=private)
    a_model, a_log = train(model, data, cfg)
    b_model, b_log = train(model, data, cfg)
    assert a_model.get_flat().tobytes() == b_model.get_flat().tobytes()
    assert a_log == b_log
    assert a_log.steps == 3 * 7


def test_training_does_not_mutate_input_model():
    data = regression_data()
    model = build_model("mlp", [3, 4, 1], gen=np.random.default_rng(0))
    before = model.get_flat().copy()
    train(model, data, DpSgdConfig(epochs=1, batch_size=16, seed=0))
    assert np.array_equal(model.get_flat(), before)


def test_clipping_checks_record_no_violations():
    data = regression_data(n=300)
    model = build_model("kan", [3, 1], gen=np.random.default_rng(7), kan_grid=BSplineGrid(2, 3))
    cfg = DpSgdConfig(epochs=2, learning_rate=0.05, clip_norm=0.01, batch_size=30, seed=8, check_clipping=True)
    _, log = train(model, data, cfg)
    assert log.clip_checks == log.samples_seen > 0
    assert log.clip_violations == 0


def test_nonprivate_batch_larger_than_dataset():
    with pytest.raises(ValueError):
        train(Model([LinearLayer(3, 1)]), regression_data(n=10), DpSgdConfig(batch_size=11, private=False))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    # Adam moves each weight by about lr per step, so the second loss overflows
    cfg = DpSgdConfig(batch_size=16, private=False, learning_rate=1e300)
    with pytest.raises(DivergenceError) as info:
        train(Model([LinearLayer(3, 1)]), regression_data(), cfg)
    assert info.value.step == 2


def test_epsilon_grows_over_epochs():
    data = regression_data(n=200)
    cfg = DpSgdConfig(epochs=3, batch_size=20, seed=0, noise_multiplier=1.0)
    _, log = train(Model([LinearLayer(3, 1)]), data, cfg)
    eps = [r.epsilon for r in log.records]
    assert eps[0] < eps[1] < eps[2] < np.inf


def test_training_log_round_trip():
    _, log = train(Model([LinearLayer(3, 1)]), regression_data(), DpSgdConfig(epochs=2, batch_size=16))
    assert TrainingLog.from_text(log.to_text()) == log


def test_config_validation():
    with pytest.raises(ValueError):
        DpSgdConfig(clip_norm=0)
    with pytest.raises(ValueError):
        DpSgdConfig(sampling="uniform")
    with pytest.raises(ValueError):
        DpSgdConfig(delta=1.5)


def test_clipped_gradient_is_flat_gradient():
    assert issubclass(ClippedGradient, FlatGradient)
