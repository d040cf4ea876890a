import numpy as np
import pytest

from triplethash import linalg


def random_spd(n, rng):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 5))
    assert np.array_equal(linalg.matmul(np.eye(3), a), a)


def test_matmul_zeros():
    out = linalg.matmul(np.zeros((2, 3)), np.ones((3, 2)))
    assert np.array_equal(out, np.zeros((2, 2)))


def test_matmul_small_exact():
    out = linalg.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert np.array_equal(out, np.array([[3.0], [7.0]]))


def test_matmul_mismatch_carries_shapes():
    with pytest.raises(linalg.ShapeError) as info:
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert info.value.shape_a == (2, 3)
    assert info.value.shape_b == (2, 3)
    assert "(2, 3)" in str(info.value)


def test_matmul_associativity():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
        left = linalg.matmul(linalg.matmul(a, b), c)
        right = linalg.matmul(a, linalg.matmul(b, c))
        assert np.abs(left - right).max() <= 1e-10 * max(1.0, np.abs(left).max())


def test_solve_spd_scaled_identity():
    rng = np.random.default_rng(2)
    b = rng.normal(size=(4, 3))
    x = linalg.solve_spd(2.0 * np.eye(4), b)
    assert np.allclose(x, 0.5 * b, rtol=0, atol=1e-14)


def test_solve_spd_diagonal():
    a = np.diag([1.0, 2.0, 4.0])
    b = np.ones((3, 1))
    x = linalg.solve_spd(a, b)
    assert np.allclose(x.ravel(), [1.0, 0.5, 0.25], rtol=0, atol=1e-14)


def test_solve_spd_residual_bound():
    rng = np.random.default_rng(3)
    a = random_spd(6, rng)
    b = rng.normal(size=(6, 4))
    x = linalg.solve_spd(a, b)
    resid = np.abs(a @ x - b).max()
    assert resid <= 1e-8 * (1.0 + np.abs(b).max())


def test_solve_spd_recovers_solution():
    rng = np.random.default_rng(4)
    for _ in range(5):
        a = random_spd(5, rng)
        x0 = rng.normal(size=(5, 2))
        x = linalg.solve_spd(a, a @ x0)
        assert np.abs(x - x0).max() <= 1e-8 * max(1.0, np.abs(x0).max())


def test_solve_spd_rejects_non_spd():
    a = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(linalg.NotSPDError) as info:
        linalg.solve_spd(a, np.ones((3, 1)))
    assert info.value.pivot == 1
    assert "pivot 1" in str(info.value)


def test_solve_spd_rejects_asymmetric():
    a = np.array([[2.0, 1.0], [0.0, 2.0]])
    with pytest.raises(ValueError, match="symmetric"):
        linalg.solve_spd(a, np.ones((2, 1)))


def test_cholesky_factor_reuse():
    rng = np.random.default_rng(5)
    a = random_spd(4, rng)
    factor = linalg.cholesky_spd(a)
    for _ in range(3):
        b = rng.normal(size=(4, 2))
        assert np.allclose(a @ factor.solve(b), b, atol=1e-10)


def test_seeded_normal_deterministic():
    a = linalg.seeded_normal(7, 5, seed=42, stddev=0.3)
    b = linalg.seeded_normal(7, 5, seed=42, stddev=0.3)
    assert np.array_equal(a, b)


def test_seeded_normal_seed_sensitivity():
    a = linalg.seeded_normal(4, 4, seed=1)
    b = linalg.seeded_normal(4, 4, seed=2)
    assert np.any(a != b)


def test_seeded_normal_statistics():
    m = linalg.seeded_normal(1000, 1000, seed=9, stddev=1.0)
    assert 0.99 <= m.std() <= 1.01
    assert abs(m.mean()) <= 5.0 / np.sqrt(m.size)


def test_seeded_normal_rejects_bad_args():
    with pytest.raises(ValueError):
        linalg.seeded_normal(0, 3, seed=0)
    with pytest.raises(ValueError):
        linalg.seeded_normal(3, 3, seed=0, stddev=0.0)


def test_bitwise_repeatability():
    rng1 = np.random.default_rng(11)
    rng2 = np.random.default_rng(11)
    a1, b1 = rng1.normal(size=(6, 6)), rng1.normal(size=(6, 6))
    a2, b2 = rng2.normal(size=(6, 6)), rng2.normal(size=(6, 6))
    assert linalg.matmul(a1, b1).tobytes() == linalg.matmul(a2, b2).tobytes()
    s1 = linalg.solve_spd(a1 @ a1.T + 6 * np.eye(6), b1)
    s2 = linalg.solve_spd(a2 @ a2.T + 6 * np.eye(6), b2)
    assert s1.tobytes() == s2.tobytes()
