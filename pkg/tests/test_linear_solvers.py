import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nemo_opt.linear_solvers import (InvalidSystemError, LinearSystem, NonConvergenceError,
                                     NotPositiveDefiniteError, SymmetricGaussSeidel,
                                     direct_spd_solve, galerkin_product, smoother_sweep,
                                     two_grid_solve)
from nemo_opt.operators import RankDeficiencyError, TransferPair, build_interp_1d, build_interp_2d
from nemo_opt.problems import build_laplacian_1d, build_laplacian_2d, build_poisson_1d


def random_spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


class TestLinearSystem:
    def test_asymmetric(self):
        with pytest.raises(InvalidSystemError):
            LinearSystem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidSystemError):
            LinearSystem(np.eye(3), np.ones(2))


class TestDirect:
    def test_hand_example(self):
        x = direct_spd_solve(LinearSystem(np.array([[2.0, -1.0], [-1.0, 2.0]]), np.array([1.0, 0.0])))
        np.testing.assert_allclose(x, [2 / 3, 1 / 3], rtol=1e-14)

    def test_identity(self):
        b = np.array([3.0, -1.0, 0.5])
        np.testing.assert_array_equal(direct_spd_solve(LinearSystem(sp.identity(3, format="csr"), b)), b)

    def test_poisson_residual(self):
        prob = build_poisson_1d(64)
        system = LinearSystem(prob.A, prob.b)
        assert system.scaled_residual(direct_spd_solve(system)) <= 1e-12

    @pytest.mark.parametrize("dense", [True, False])
    def test_indefinite(self, dense):
        A = np.diag([1.0, -1.0, 2.0])
        A = A if dense else sp.csr_matrix(A)
        with pytest.raises(NotPositiveDefiniteError):
            direct_spd_solve(LinearSystem(A, np.ones(3)))

    def test_random_systems(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 201))
            A = random_spd(rng, n)
            A = sp.csr_matrix(A) if n % 2 else A
            system = LinearSystem(A, rng.standard_normal(n))
            assert system.scaled_residual(direct_spd_solve(system)) <= 1e-12


class TestSmoother:
    def test_fixed_point(self):
        A = build_laplacian_1d(16)
        x = np.random.default_rng(0).standard_normal(15)
        out = smoother_sweep(LinearSystem(A, A @ x), x, 2)
        np.testing.assert_allclose(out, x, rtol=1e-12, atol=1e-12)

    def test_residual_decreases(self):
        A = build_laplacian_1d(16)
        system = LinearSystem(A, np.random.default_rng(1).standard_normal(15))
        gs = SymmetricGaussSeidel(A)
        x = np.zeros(15)
        res = [np.linalg.norm(system.residual(x))]
        for _ in range(3):
            x = gs.sweep(x, system.rhs)
            res.append(np.linalg.norm(system.residual(x)))
        assert all(b < a for a, b in zip(res, res[1:]))

    def test_diagonal_one_sweep(self):
        A = sp.diags([1.0, 2.0, 5.0]).tocsr()
        b = np.array([1.0, 1.0, 1.0])
        np.testing.assert_allclose(smoother_sweep(LinearSystem(A, b), np.zeros(3), 1),
                                   [1.0, 0.5, 0.2], rtol=1e-15)

    def test_zero_diagonal(self):
        A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(InvalidSystemError):
            smoother_sweep(LinearSystem(A, np.ones(2)), np.zeros(2), 1)

    def test_bad_sweeps(self):
        with pytest.raises(ValueError):
            smoother_sweep(LinearSystem(np.eye(2), np.ones(2)), np.zeros(2), 0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_energy_monotone(self, seed):
        rng = np.random.default_rng(seed)
        n = 12
        A = random_spd(rng, n)
        x_star = rng.standard_normal(n)
        gs = SymmetricGaussSeidel(A)
        x = rng.standard_normal(n)

        def energy(v):
            return (v - x_star) @ A @ (v - x_star)

        prev = energy(x)
        for _ in range(5):
            x = gs.sweep(x, A @ x_star)
            cur = energy(x)
            assert cur <= prev * (1 + 1e-12)
            prev = cur


class TestGalerkin:
    @pytest.mark.parametrize("N", [4, 8, 16, 32])
    def test_rediscretization(self, N):
        G = galerkin_product(build_laplacian_1d(N), build_interp_1d(N))
        P = build_interp_1d(N).P.toarray()
        dense = (P.T / 2) @ build_laplacian_1d(N).toarray() @ P
        np.testing.assert_allclose(G.toarray(), dense, atol=1e-10)
        np.testing.assert_allclose(G.toarray(), build_laplacian_1d(N // 2).toarray(), atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            galerkin_product(build_laplacian_1d(8), build_interp_1d(16))


class TestTwoGrid:
    def test_zero_rhs(self):
        A = build_laplacian_1d(16)
        x, it = two_grid_solve(LinearSystem(A, np.zeros(15)), build_interp_1d(16))
        assert it == 0 and not np.any(x)

    def test_level4_2d(self):
        A = build_laplacian_2d(4)
        b = np.random.default_rng(0).standard_normal(A.shape[0])
        system = LinearSystem(A, b)
        x, it = two_grid_solve(system, build_interp_2d(3), tol=0.1)
        assert it <= 10
        assert system.scaled_residual(x) <= 0.1

    def test_contraction_1d(self):
        A = build_laplacian_1d(64)
        b = np.random.default_rng(2).standard_normal(63)
        pair = build_interp_1d(64)
        system = LinearSystem(A, b)
        res, x = [], np.zeros(63)
        for _ in range(5):
            x, _ = _one_cycle(system, pair, x)
            res.append(np.linalg.norm(system.residual(x)))
        ratios = np.array(res[1:]) / np.array(res[:-1])
        assert np.all(ratios < 1)

    def test_agrees_with_direct(self):
        A = build_laplacian_2d(4)
        b = np.random.default_rng(3).standard_normal(A.shape[0])
        system = LinearSystem(A, b)
        tol = 1e-3
        x, _ = two_grid_solve(system, build_interp_2d(3), tol=tol)
        x_ref = direct_spd_solve(system)
        sigma_min = np.linalg.eigvalsh(A.toarray())[0]
        assert np.linalg.norm(x - x_ref) <= tol * np.linalg.norm(b) / sigma_min

    def test_cycle_limit(self):
        A = build_laplacian_2d(4)
        system = LinearSystem(A, np.ones(A.shape[0]))
        with pytest.raises(NonConvergenceError) as err:
            two_grid_solve(system, build_interp_2d(3), tol=1e-30, max_cycles=3)
        assert err.value.iterations == 3 and err.value.residual > 0

    def test_singular_coarse(self):
        P = np.zeros((15, 2))
        P[0, 0] = 1.0
        system = LinearSystem(build_laplacian_1d(16), np.ones(15))
        with pytest.raises(RankDeficiencyError):
            two_grid_solve(system, TransferPair(P))


def _one_cycle(system, pair, x):
    try:
        return two_grid_solve(system, pair, tol=1e-300, x0=x, max_cycles=1)
    except NonConvergenceError as exc:
        return exc.x, 1
