import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from nemo_opt.operators import (RankDeficiencyError, TransferPair, _dense_norms,
                                _iterative_norms, apply_transfer, build_interp_1d,
                                build_interp_2d, build_interp_2d_levels, compose_transfers,
                                identity_pair, load_pair, operator_norms, save_pair,
                                validate_pair)


def dense_interp_1d(N):
    """Reference linear interpolation written out entry by entry."""
    P = np.zeros((N - 1, N // 2 - 1))
    for j in range(N // 2 - 1):
        i = 2 * j + 1  # fine index of coarse node j (0-based)
        P[i, j] = 1.0
        P[i - 1, j] = 0.5
        P[i + 1, j] = 0.5
    return P


class TestInterp1D:
    def test_n4_matrices(self):
        pair = build_interp_1d(4)
        np.testing.assert_array_equal(pair.P.toarray(), [[0.5], [1.0], [0.5]])
        np.testing.assert_array_equal(pair.R.toarray(), [[0.25, 0.5, 0.25]])
        assert pair.c == 2

    def test_n4_norms(self):
        omega, xi = operator_norms(build_interp_1d(4))
        assert omega == pytest.approx(np.sqrt(6) / 2, rel=1e-14)
        assert xi == pytest.approx(np.sqrt(6) / 3, rel=1e-14)

    @pytest.mark.parametrize("N", [4, 8, 16, 64])
    def test_matches_reference(self, N):
        np.testing.assert_array_equal(build_interp_1d(N).P.toarray(), dense_interp_1d(N))

    def test_zero_prolongs_to_zero(self):
        np.testing.assert_array_equal(build_interp_1d(4).prolong(np.zeros(1)), np.zeros(3))

    def test_restrict_and_prolong_unit_vector(self):
        pair = build_interp_1d(4)
        r = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(pair.restrict(r), [0.5])
        np.testing.assert_allclose(pair.prolong(pair.restrict(r)), [0.25, 0.5, 0.25])

    @pytest.mark.parametrize("N", [3, 7, 2, 0, -4])
    def test_bad_size(self, N):
        with pytest.raises(ValueError):
            build_interp_1d(N)

    def test_xi_is_inverse_smallest_singular_value(self):
        pair = build_interp_1d(8)
        s = np.linalg.svd(pair.P.toarray(), compute_uv=False)
        # raw R = P^T / c gives (RP)^{-1} R = P^+
        assert pair.xi * s.min() == pytest.approx(1.0, abs=1e-10)


class TestInterp2D:
    def test_level1_stencil(self):
        pair = build_interp_2d(1)
        P = pair.P.toarray()
        assert P.shape == (9, 1)
        np.testing.assert_array_equal(P[:, 0].reshape(3, 3),
                                      [[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])
        assert P.sum() == 4.0
        assert pair.R.toarray().sum() == pytest.approx(1.0)
        assert pair.c == 4

    def test_zero_vector(self):
        pair = build_interp_2d(2)
        np.testing.assert_array_equal(pair.prolong(np.zeros(9)), np.zeros(49))

    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    def test_dimensions(self, level):
        pair = build_interp_2d(level)
        assert pair.coarse_dim == (2 ** level - 1) ** 2
        assert pair.fine_dim == (2 ** (level + 1) - 1) ** 2

    def test_kron_structure(self):
        # tensor-product of the 1D interpolation on the same grids
        P1 = build_interp_1d(8).P
        np.testing.assert_array_equal(build_interp_2d(2).P.toarray(), sp.kron(P1, P1).toarray())

    def test_bad_level(self):
        with pytest.raises(ValueError):
            build_interp_2d(0)

    def test_levels_chain(self):
        pair = build_interp_2d_levels(2, 4)
        ref = build_interp_2d(3).P @ build_interp_2d(2).P
        np.testing.assert_allclose(pair.P.toarray(), ref.toarray(), atol=0)
        assert pair.c == 16

    def test_levels_order(self):
        with pytest.raises(ValueError):
            build_interp_2d_levels(4, 4)


class TestCompose:
    def test_identity(self):
        pair = build_interp_1d(8)
        out = compose_transfers(identity_pair(7), pair)
        np.testing.assert_array_equal(out.P.toarray(), pair.P.toarray())
        assert out.c == pair.c

    def test_two_level_1d(self):
        out = compose_transfers(build_interp_1d(8), build_interp_1d(4))
        assert out.P.shape == (7, 1)
        np.testing.assert_allclose(out.P.toarray(), dense_interp_1d(8) @ dense_interp_1d(4))
        assert out.c == 4

    def test_mismatch(self):
        with pytest.raises(ValueError):
            compose_transfers(build_interp_1d(8), build_interp_1d(8))

    def test_associative(self):
        a, b, c = build_interp_1d(32), build_interp_1d(16), build_interp_1d(8)
        left = compose_transfers(a, compose_transfers(b, c))
        right = compose_transfers(compose_transfers(a, b), c)
        assert abs(left.P - right.P).max() <= 1e-12
        assert left.c == right.c


class TestNorms:
    def test_identity(self):
        assert operator_norms(identity_pair(5)) == pytest.approx((1.0, 1.0))

    def test_rank_deficient(self):
        P = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(RankDeficiencyError):
            operator_norms(TransferPair(P))

    def test_iterative_matches_dense(self):
        pair = build_interp_2d_levels(4, 6)  # fine dimension 3969 > 2000
        d = _dense_norms(pair)
        it = _iterative_norms(pair)
        np.testing.assert_allclose(it, d, rtol=1e-7)
        assert pair.norms == pytest.approx(it)

    def test_unit_scaled(self):
        pair = build_interp_1d(16)
        unit = pair.unit_scaled()
        assert unit.c == 1.0
        np.testing.assert_allclose(unit.R.toarray(), unit.P.toarray().T)
        s = np.linalg.svd(pair.P.toarray(), compute_uv=False)
        assert unit.omega == pytest.approx(s.max() / np.sqrt(2))
        assert unit.xi == pytest.approx(np.sqrt(2) / s.min())


class TestValidate:
    def test_1d(self):
        rep = validate_pair(build_interp_1d(4))
        assert rep.passed and rep.c == pytest.approx(2.0)

    def test_2d(self):
        rep = validate_pair(build_interp_2d(1))
        assert rep.passed and rep.c == pytest.approx(4.0)

    def test_zero_column(self):
        P = dense_interp_1d(8)
        P[:, 1] = 0.0
        rep = validate_pair(TransferPair(P, 2.0))
        assert not rep.passed and not rep.full_rank
        assert any("rank" in m for m in rep.messages)

    def test_explicit_r_mismatch(self):
        P = dense_interp_1d(8)
        R = P.T / 2
        R[0, 0] += 1e-6
        rep = validate_pair(TransferPair(P, 2.0, R_explicit=R))
        assert not rep.transpose_ok

    @pytest.mark.parametrize("pair", [build_interp_1d(N) for N in (4, 16, 256, 1024)]
                             + [build_interp_2d_levels(1, 3), build_interp_2d(5)])
    def test_built_pairs(self, pair):
        rep = validate_pair(pair)
        assert rep.max_transpose_deviation <= 1e-12
        assert rep.sigma_min > 0


def test_apply_length_mismatch():
    pair = build_interp_1d(8)
    with pytest.raises(ValueError):
        apply_transfer(pair, np.zeros(3), "restrict")
    with pytest.raises(ValueError):
        apply_transfer(pair, np.zeros(3), "sideways")


def test_restrict_zero():
    np.testing.assert_array_equal(build_interp_1d(8).restrict(np.zeros(7)), np.zeros(3))


def test_save_load_roundtrip(tmp_path):
    pair = build_interp_2d_levels(1, 3)
    path = tmp_path / "pair.txt"
    save_pair(pair, path)
    back = load_pair(path)
    assert back.c == pair.c
    assert abs(back.P - pair.P).max() == 0


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([8, 16, 64, 256, 1024]), st.integers(0, 2 ** 32 - 1))
def test_apply_matches_dense(N, seed):
    pair = build_interp_1d(N)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(N - 1)
    w = rng.standard_normal(N // 2 - 1)
    P = dense_interp_1d(N)
    np.testing.assert_allclose(pair.restrict(v), P.T @ v / 2, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(pair.prolong(w), P @ w, rtol=1e-13, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (6, 3), elements=st.floats(-2, 2)),
       st.floats(0.1, 10.0))
def test_random_pair_invariants(P, c):
    if np.linalg.svd(P, compute_uv=False).min() < 1e-3:
        return
    pair = TransferPair(P, c)
    s = np.linalg.svd(P, compute_uv=False)
    omega, xi = pair.norms
    assert omega >= s.max() * (1 - 1e-12)
    assert omega >= np.linalg.norm(pair.R.toarray(), 2) * (1 - 1e-12)
    assert xi == pytest.approx(1.0 / s.min(), rel=1e-8)
    assert validate_pair(pair).transpose_ok
