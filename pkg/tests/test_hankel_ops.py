import numpy as np
import pytest

from hankelfit import (
    ChannelStack,
    DimensionError,
    HankelShape,
    RankSpec,
    block_hankel_adjoint,
    block_hankel_map,
    hankel_adjoint,
    hankel_map,
    rank_distance,
    rank_project,
)


def test_hankel_map_basic():
    H = hankel_map([1.0, 2.0, 3.0, 4.0], 1)
    assert np.array_equal(H, [[1, 2, 3], [2, 3, 4]])


def test_hankel_map_zero_and_constant():
    assert np.array_equal(hankel_map(np.zeros(5), 2), np.zeros((3, 3)))
    ones = hankel_map(np.ones(5), 2)
    assert np.array_equal(ones, np.ones((3, 3)))
    assert np.linalg.matrix_rank(ones) == 1


def test_hankel_map_dimension_error():
    with pytest.raises(DimensionError):
        hankel_map([1.0, 2.0], 2)


def test_hankel_adjoint_examples():
    assert np.array_equal(hankel_adjoint([[1.0, 0.0], [0.0, 1.0]]), [1, 0, 1])
    a, b, c, d = 1.7, -0.3, 2.2, 5.0
    assert np.allclose(hankel_adjoint([[a, b], [c, d]]), [a, b + c, d])


@pytest.mark.parametrize("n,s", [(5, 1), (20, 4), (50, 6)])
def test_hankel_adjoint_identity(n, s):
    rng = np.random.default_rng(n * 31 + s)
    for _ in range(50):
        y = rng.standard_normal(n)
        Y = rng.standard_normal((s + 1, n - s))
        lhs = hankel_adjoint(Y) @ y
        rhs = float(np.sum(Y * hankel_map(y, s)))
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(rhs))


def test_block_hankel_map_examples():
    stack = ChannelStack.from_channels([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    W = block_hankel_map(stack, 1)
    assert np.array_equal(W, [[1, 2, 4, 5], [2, 3, 5, 6]])

    single = ChannelStack.from_channels([[1.0, 2.0, 3.0]])
    assert np.array_equal(block_hankel_map(single, 1), hankel_map([1, 2, 3], 1))

    zero = ChannelStack(np.zeros(6), n=3, N=2)
    assert np.array_equal(block_hankel_map(zero, 1), np.zeros((2, 4)))


def test_block_hankel_adjoint_example():
    W = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    stack = block_hankel_adjoint(W, 2)
    assert np.array_equal(stack.channel(0), [1, 0, 0])
    assert np.array_equal(stack.channel(1), [0, 0, 1])
    zero = block_hankel_adjoint(np.zeros((2, 4)), 2)
    assert not np.any(zero.data)


@pytest.mark.parametrize("n,N,r", [(5, 2, 1), (20, 3, 4), (50, 2, 6)])
def test_block_adjoint_identity(n, N, r):
    rng = np.random.default_rng(n + 7 * N + r)
    for _ in range(30):
        stack = ChannelStack(rng.standard_normal(N * n), n=n, N=N)
        W = rng.standard_normal((r + 1, N * (n - r)))
        lhs = block_hankel_adjoint(W, N).data @ stack.data
        rhs = float(np.sum(W * block_hankel_map(stack, r)))
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(rhs))


def test_block_adjoint_shape_mismatch():
    with pytest.raises(DimensionError):
        block_hankel_adjoint(np.zeros((2, 5)), 2)


def test_hankel_map_linear():
    rng = np.random.default_rng(0)
    y, z = rng.standard_normal(12), rng.standard_normal(12)
    a, b = -1.3, 0.4
    assert np.allclose(
        hankel_map(a * y + b * z, 3),
        a * hankel_map(y, 3) + b * hankel_map(z, 3),
        rtol=0,
        atol=1e-14,
    )


def test_rank_project_diag():
    P = rank_project(np.diag([3.0, 1.0]), 1)
    assert np.allclose(P, [[3, 0], [0, 0]])
    assert np.isclose(rank_distance(np.diag([3.0, 1.0]), 1), 1.0)


def test_rank_project_fixed_point():
    rng = np.random.default_rng(1)
    Y = np.outer(rng.standard_normal(5), rng.standard_normal(7))
    assert np.allclose(rank_project(Y, 2), Y, atol=1e-12)
    assert rank_distance(Y, 1) <= 1e-12


def test_rank_distance_vs_singular_values():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((4, 6))
    s = np.linalg.svd(Y, compute_uv=False)
    expect = np.sqrt(s[2] ** 2 + s[3] ** 2)
    assert np.isclose(
        np.linalg.norm(Y - rank_project(Y, 2), "fro"), expect, atol=1e-12
    )
    assert np.isclose(rank_distance(Y, 2), expect, atol=1e-12)


def test_rank_distance_full_rank_bound_vacuous():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((3, 8))
    assert rank_distance(Y, 3) == 0.0


def test_rank_project_idempotent():
    rng = np.random.default_rng(4)
    for _ in range(20):
        Y = rng.standard_normal((6, 9))
        P = rank_project(Y, 2)
        assert np.linalg.norm(rank_project(P, 2) - P, "fro") <= 1e-12 * (
            1 + np.linalg.norm(P, "fro")
        )


def test_eckart_young_against_candidates():
    rng = np.random.default_rng(5)
    for _ in range(30):
        rows, cols = rng.integers(2, 8), rng.integers(2, 10)
        k = int(rng.integers(1, min(rows, cols) + 1))
        Y = rng.standard_normal((rows, cols))
        best = np.linalg.norm(Y - rank_project(Y, k), "fro")
        for _ in range(20):
            Z = rng.standard_normal((rows, k)) @ rng.standard_normal((k, cols))
            assert best <= np.linalg.norm(Y - Z, "fro") + 1e-10


def test_channel_stack_validation():
    with pytest.raises(DimensionError):
        ChannelStack(np.zeros(5), n=3, N=2)
    with pytest.raises(DimensionError):
        ChannelStack.from_channels([[1.0, 2.0], [1.0, 2.0, 3.0]])
    stack = ChannelStack(np.arange(6.0), n=3, N=2)
    assert np.array_equal(stack.channel(1), [3, 4, 5])
    with pytest.raises(IndexError):
        stack.channel(2)


def test_rank_spec_validation():
    RankSpec(per_channel_ranks=(4, 4), coupled_rank=6, n=50)
    with pytest.raises(DimensionError):
        RankSpec(per_channel_ranks=(7,), coupled_rank=6, n=50)
    with pytest.raises(DimensionError):
        RankSpec(per_channel_ranks=(2,), coupled_rank=3, n=6)
    with pytest.raises(DimensionError):
        RankSpec(per_channel_ranks=(), coupled_rank=1, n=9)


def test_hankel_shape_validation():
    HankelShape.single(50, 6)
    with pytest.raises(DimensionError):
        HankelShape(rows=4, cols=2)
