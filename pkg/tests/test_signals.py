import numpy as np
import pytest

from hankelfit import (
    ChannelStack,
    DimensionError,
    SystemSpec,
    WeightedLoss,
    add_noise,
    constraint_violation,
    default_weights,
    generate_signals,
    hankel_map,
    make_instance,
    rank_distance,
    violation,
)


def test_default_weights_pattern():
    w = default_weights(6)
    assert np.array_equal(w, [1, 10, 1, 10, 1, 10])


def test_system_spec_validation():
    SystemSpec(n1=2, n2=2, nc=2, n=50)
    with pytest.raises(DimensionError):
        SystemSpec(n1=10, n2=10, nc=10, n=50)  # total order too large
    with pytest.raises(DimensionError):
        SystemSpec(n1=0, n2=1, nc=0, n=20)  # channel 1 has order 0
    with pytest.raises(DimensionError):
        SystemSpec(n1=1, n2=1, nc=1, n=20, sigma=-0.1)


@pytest.mark.parametrize(
    "orders,n", [((2, 2, 2), 50), ((2, 6, 4), 50), ((1, 1, 1), 20)]
)
def test_generated_signals_feasible(orders, n):
    n1, n2, nc = orders
    spec = SystemSpec(n1=n1, n2=n2, nc=nc, n=n, seed=5)
    y1, y2, poles = generate_signals(spec)
    H1 = hankel_map(y1, spec.m1)
    H2 = hankel_map(y2, spec.m2)
    assert rank_distance(H1, spec.m1) <= 1e-8 * np.linalg.norm(H1, "fro")
    assert rank_distance(H2, spec.m2) <= 1e-8 * np.linalg.norm(H2, "fro")
    W = np.hstack([hankel_map(y1, spec.m), hankel_map(y2, spec.m)])
    assert rank_distance(W, spec.m) <= 1e-8 * np.linalg.norm(W, "fro")
    assert len(poles["common"][0]) == nc // 2
    # unit RMS normalization
    assert np.isclose(np.mean(y1**2), 1.0)


def test_shared_modes_limit():
    # channels built only from common poles: the coupled matrix collapses
    spec = SystemSpec(n1=0, n2=0, nc=2, n=30, seed=9)
    y1, y2, _ = generate_signals(spec)
    W = np.hstack([hankel_map(y1, 2), hankel_map(y2, 2)])
    assert rank_distance(W, 2) <= 1e-8 * np.linalg.norm(W, "fro")


def test_generation_deterministic():
    spec = SystemSpec(n1=2, n2=2, nc=2, n=50, seed=123)
    a1, a2, _ = generate_signals(spec)
    b1, b2, _ = generate_signals(spec)
    assert np.array_equal(a1, b1) and np.array_equal(a2, b2)


def test_add_noise_sigma_zero():
    y = np.arange(5.0)
    assert np.array_equal(add_noise(y, 0.0, np.ones(5), seed=3), y)


def test_add_noise_identity_weights_and_determinism():
    y = np.zeros(8)
    a = add_noise(y, 0.5, np.ones(8), seed=11)
    b = add_noise(y, 0.5, np.ones(8), seed=11)
    assert np.array_equal(a, b)
    direct = 0.5 * np.random.default_rng(11).standard_normal(8)
    assert np.allclose(a, direct)


def test_add_noise_whitened_variance():
    n = 10_000
    w = default_weights(n)
    y = np.zeros(n)
    sigma = 0.3
    ybar = add_noise(y, sigma, w, seed=21)
    whitened = np.sqrt(w) * (ybar - y) / sigma
    assert abs(np.var(whitened) - 1.0) < 0.05


def test_violation_feasible_pair_zero():
    spec = SystemSpec(n1=1, n2=1, nc=1, n=20, seed=2)
    y1, y2, _ = generate_signals(spec)
    vio, comps = violation(y1, y2, spec)
    assert vio <= 1e-10
    assert len(comps) == 3


def test_violation_single_component():
    spec = SystemSpec(n1=0, n2=0, nc=1, n=12, seed=3)
    t = np.arange(12.0)
    y1 = np.cos(0.9 * t) + 0.3 * np.sin(2.2 * t)  # order 4 > 1: violated
    y2 = np.ones(12)  # constant: order 1, feasible
    vio, comps = violation(y1, y2, spec)
    assert comps[1] <= 1e-10
    assert vio >= comps[0] and vio >= comps[2]
    assert vio == max(comps)


def test_violation_dual_path():
    spec = SystemSpec(n1=1, n2=2, nc=1, n=24, seed=4)
    rng = np.random.default_rng(8)
    y1, y2 = rng.standard_normal(24), rng.standard_normal(24)
    vio, comps = violation(y1, y2, spec)
    # independent recomputation
    H1, H2 = hankel_map(y1, spec.m1), hankel_map(y2, spec.m2)
    W = np.hstack([hankel_map(y1, spec.m), hankel_map(y2, spec.m)])
    expect = [
        rank_distance(H1, spec.m1) / np.linalg.svd(H1, compute_uv=False)[0],
        rank_distance(H2, spec.m2) / np.linalg.svd(H2, compute_uv=False)[0],
        rank_distance(W, spec.m) / np.linalg.svd(W, compute_uv=False)[0],
    ]
    assert np.allclose(comps, expect, atol=1e-12)
    assert np.isclose(vio, max(expect), atol=1e-12)


def test_violation_zero_matrix_convention():
    spec = SystemSpec(n1=1, n2=1, nc=1, n=20, seed=0)
    vio, comps = violation(np.zeros(20), np.zeros(20), spec)
    assert vio == 0.0 and comps == (0.0, 0.0, 0.0)


def test_weighted_loss_value_and_grad():
    ybar = ChannelStack.from_channels([[1.0, 2.0], [3.0, 4.0]])
    loss = WeightedLoss(ybar=ybar, weights=np.array([1.0, 10.0]))
    y = np.array([2.0, 2.0, 3.0, 3.0])
    assert np.isclose(loss.value(y), 0.5 * (1 * 1 + 10 * 0 + 0 + 10 * 1))
    assert np.allclose(loss.grad(y), [1.0, 0.0, 0.0, -10.0])
    with pytest.raises(DimensionError):
        WeightedLoss(ybar=ybar, weights=np.array([1.0, -1.0]))


def test_make_instance_protocol():
    spec = SystemSpec(n1=1, n2=1, nc=1, n=20, sigma=0.1, seed=42)
    a = make_instance(spec, noise_seed=1)
    b = make_instance(spec, noise_seed=2)
    # same clean signals, different noise
    assert np.array_equal(a.clean.data, b.clean.data)
    assert not np.array_equal(a.ybar.data, b.ybar.data)
    # determinism per (spec, noise seed)
    c = make_instance(spec, noise_seed=1)
    assert np.array_equal(a.ybar.data, c.ybar.data)
    vio, _ = constraint_violation(a.clean, a.rank_spec)
    assert vio <= 1e-8
