import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from latte_rec.linalg import (
    SparseTensor3,
    TuckerFactors,
    contract_others,
    expand_rating_mode,
    fit,
    hooi,
    mode_product,
    truncated_svd,
)
from latte_rec.similarity import build_similarity

from oracles import dense_hooi, jacobi_svd, reconstruct, spectral_norm


def random_sparse(shape, density, seed, binary=False):
    rng = np.random.default_rng(seed)
    dense = np.where(rng.random(shape) < density, rng.standard_normal(shape), 0.0)
    if binary:
        dense = (dense != 0).astype(float)
    return SparseTensor3.from_dense(dense)


def orth_err(m):
    return np.abs(m.T @ m - np.eye(m.shape[1])).max()


class TestSparseTensor:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            SparseTensor3((2, 2, 2), [[0, 0, 0], [0, 0, 0]])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            SparseTensor3((2, 2, 2), [[0, 2, 0]])

    def test_immutable(self):
        t = SparseTensor3((2, 2, 2), [[0, 1, 1]])
        with pytest.raises(ValueError):
            t.coords[0, 0] = 1

    def test_norm_and_dense_round_trip(self):
        x = np.zeros((2, 3, 2))
        x[1, 2, 0] = 3.0
        x[0, 0, 1] = 4.0
        t = SparseTensor3.from_dense(x)
        assert t.norm() == 5.0
        np.testing.assert_array_equal(t.to_dense(), x)

    @pytest.mark.parametrize("mode", [0, 1, 2])
    def test_unfold_is_c_order(self, mode):
        t = random_sparse((3, 4, 5), 0.4, mode)
        x = t.to_dense()
        expected = np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)
        np.testing.assert_array_equal(t.unfold(mode).toarray(), expected)


class TestTruncatedSvd:
    def test_diagonal_example(self):
        r = truncated_svd(np.diag([3.0, 1.0]), 1)
        assert r.s.tolist() == [3.0]
        np.testing.assert_allclose(r.u[:, 0], [1, 0])
        np.testing.assert_allclose(np.abs(r.v[:, 0]), [1, 0])

    def test_square_example(self):
        r = truncated_svd(np.array([[3.0, 0.0], [0.0, 4.0]]), 1)
        assert r.s[0] == pytest.approx(4.0, abs=1e-12)
        np.testing.assert_allclose(np.abs(r.u[:, 0]), [0, 1], atol=1e-12)

    def test_sign_convention(self):
        m = np.array([[-5.0, 0.0], [0.0, -1.0]])
        r = truncated_svd(m, 2)
        pivots = np.argmax(np.abs(r.u), axis=0)
        assert np.all(r.u[pivots, np.arange(2)] > 0)
        # v carries the paired flips so that s stays non-negative
        np.testing.assert_allclose(r.u @ np.diag(r.s) @ r.v.T, m, atol=1e-15)

    def test_zero_matrix(self):
        r = truncated_svd(np.zeros((3, 2)), 1)
        assert r.s.tolist() == [0.0]

    def test_rejects_unattainable_ranks(self):
        t = random_sparse((6, 6, 5), 0.5, 1)
        with pytest.raises(ValueError, match="product"):
            hooi(t, (1, 1, 3))

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((5, 4))
        u, s, v = jacobi_svd(m)
        r = truncated_svd(m, 4)
        np.testing.assert_allclose(r.s, s, atol=1e-12)
        assert np.abs(r.u @ np.diag(r.s) @ r.v.T - m).max() < 1e-8
        assert np.abs(u @ np.diag(s) @ v.T - m).max() < 1e-8

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError):
            truncated_svd(np.ones((3, 4)), 4)

    def test_matches_jacobi_oracle(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((9, 6))
        _, s_ref, _ = jacobi_svd(m)
        r = truncated_svd(m, 4)
        np.testing.assert_allclose(r.s, s_ref[:4], atol=1e-10, rtol=0)
        np.testing.assert_allclose(r.u @ np.diag(r.s) @ r.v.T,
                                   (r.u @ r.u.T) @ m, atol=1e-10)

    @pytest.mark.parametrize("shape", [(2000, 300), (300, 2000), (1500, 1500)])
    def test_randomized_and_gram_paths(self, shape):
        rng = np.random.default_rng(1)
        # low-rank plus noise with a clear spectral gap
        a = rng.standard_normal((shape[0], 5)) @ np.diag([50, 40, 30, 20, 10]) @ rng.standard_normal((5, shape[1]))
        a = sp.csr_matrix(a + 0.01 * rng.standard_normal(shape))
        r = truncated_svd(a, 5, seed=3)
        assert r.s[0] == pytest.approx(spectral_norm(a.toarray()), rel=1e-10)
        assert orth_err(r.u) < 1e-10 and orth_err(r.v) < 1e-10
        np.testing.assert_allclose(a @ r.v, r.u * r.s, atol=1e-6 * r.s[0])

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(2)
        a = sp.random(1200, 900, density=0.01, random_state=rng, format="csr")
        r1, r2 = truncated_svd(a, 6, seed=5), truncated_svd(a, 6, seed=5)
        np.testing.assert_array_equal(r1.u, r2.u)
        np.testing.assert_array_equal(r1.s, r2.s)


class TestModeProduct:
    def test_identity_is_noop(self):
        t = random_sparse((3, 4, 2), 0.5, 0)
        for mode in (1, 2, 3):
            np.testing.assert_array_equal(mode_product(t, np.eye(t.dims[mode - 1]), mode), t.to_dense())

    def test_rating_scaler_example(self):
        t = SparseTensor3((1, 1, 2), [[0, 0, 0]])
        out = mode_product(t, np.array([[1.0, 0.5], [0.5, 1.0]]), 3)
        np.testing.assert_array_equal(out[0, 0], [1.0, 0.5])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mode_product(np.zeros((2, 2, 2)), np.ones((3, 3)), 1)
        with pytest.raises(ValueError):
            mode_product(np.zeros((2, 2, 2)), np.ones((2, 2)), 4)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_associativity_and_sparse_dense_agreement(self, seed):
        rng = np.random.default_rng(seed)
        t = random_sparse((3, 4, 5), 0.5, seed)
        a, b, c = rng.standard_normal((2, 3)), rng.standard_normal((3, 4)), rng.standard_normal((2, 5))
        x = t.to_dense()
        np.testing.assert_allclose(mode_product(t, a, 1), mode_product(x, a, 1), atol=1e-12)
        ab = mode_product(mode_product(x, a, 1), b, 2)
        ba = mode_product(mode_product(x, b, 2), a, 1)
        np.testing.assert_allclose(ab, ba, atol=1e-12)
        m2 = rng.standard_normal((3, 2))
        np.testing.assert_allclose(mode_product(mode_product(x, c, 3), m2, 3), mode_product(x, m2 @ c, 3),
                                   atol=1e-12)


@pytest.mark.parametrize("mode", [0, 1, 2])
def test_contract_others_matches_dense(mode):
    rng = np.random.default_rng(mode)
    t = random_sparse((5, 6, 4), 0.4, 10 + mode)
    fs = [rng.standard_normal((d, r)) for d, r in zip(t.dims, (2, 3, 2))]
    a, b = [m for m in range(3) if m != mode]
    x = t.to_dense()
    expected = np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1) @ np.kron(fs[a], fs[b])
    for backend in ("python", None):
        np.testing.assert_allclose(contract_others(t, fs, mode, backend=backend), expected, atol=1e-12)


def test_expand_rating_mode_matches_dense():
    t = random_sparse((4, 5, 5), 0.3, 7, binary=True)
    k = build_similarity("linear", 5).sqrt
    np.testing.assert_allclose(expand_rating_mode(t, k).to_dense(), mode_product(t, k, 3), atol=1e-14)


class TestHooi:
    def test_orthonormal_every_iteration_and_monotone(self):
        t = random_sparse((12, 15, 5), 0.2, 3, binary=True)
        errs = []
        res = hooi(t, (4, 4, 3), max_iters=15, tol=-np.inf,
                   callback=lambda it, f: errs.append(max(orth_err(m) for m in f.factors)))
        assert len(errs) == 16
        assert max(errs) <= 1e-10
        assert np.all(np.diff(res.history) >= -1e-12)

    def test_rank_one_exact(self):
        rng = np.random.default_rng(8)
        a, b, c = rng.standard_normal(5), rng.standard_normal(4), rng.standard_normal(3)
        res = hooi(SparseTensor3.from_dense(np.einsum("i,j,k->ijk", a, b, c)), (1, 1, 1))
        assert res.fit == pytest.approx(1.0, abs=1e-10)

    def test_rejects_unattainable_ranks(self):
        t = random_sparse((6, 6, 5), 0.5, 1)
        with pytest.raises(ValueError, match="product"):
            hooi(t, (1, 1, 3))

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 2))
        res = hooi(SparseTensor3.from_dense(x), (3, 4, 2))
        assert np.abs(reconstruct(res.core, res.u, res.v, res.w) - x).max() <= 1e-8
        assert res.fit == pytest.approx(1.0, abs=1e-8)

    @settings(max_examples=15, deadline=None)
    @given(
        dims=st.tuples(st.integers(2, 6), st.integers(2, 6), st.integers(2, 4)),
        seed=st.integers(0, 10_000),
    )
    def test_matches_dense_oracle(self, dims, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(dims)
        ranks = tuple(int(rng.integers(1, d + 1)) for d in dims)
        # keep multilinear ranks achievable
        r1, r2, r3 = ranks
        r1 = min(r1, r2 * r3)
        r2 = min(r2, r1 * r3)
        r3 = min(r3, r1 * r2)
        ranks = (r1, r2, r3)
        iters = 4
        ref_fits, *_ = dense_hooi(x, ranks, iters)
        res = hooi(SparseTensor3.from_dense(x), ranks, max_iters=iters, tol=-np.inf)
        np.testing.assert_allclose(res.history, ref_fits, atol=1e-8, rtol=0)

    def test_scaled_matches_dense_oracle(self):
        t = random_sparse((6, 6, 4), 0.5, 11, binary=True)
        k = build_similarity("linear", 4).sqrt
        ref_fits, *_ = dense_hooi(t.to_dense(), (3, 3, 2), 5, scaler=k)
        res = hooi(t, (3, 3, 2), rating_scaler=k, max_iters=5, tol=-np.inf)
        np.testing.assert_allclose(res.history, ref_fits, atol=1e-8, rtol=0)

    def test_binary_oracle_example(self):
        t = random_sparse((4, 4, 3), 0.5, 21, binary=True)
        ref_fits, core, u, v, w = dense_hooi(t.to_dense(), (2, 2, 2), 6)
        res = hooi(t, (2, 2, 2), max_iters=6, tol=-np.inf)
        np.testing.assert_allclose(res.history, ref_fits, atol=1e-8, rtol=0)
        # fit() of the oracle's own factors against the explicit reconstruction
        oracle = TuckerFactors(core, u, v, w, fit=ref_fits[-1])
        assert fit(t, oracle) == pytest.approx(ref_fits[-1], abs=1e-10)

    def test_fit_zero_factors(self):
        t = random_sparse((3, 3, 2), 0.7, 22)
        z = TuckerFactors(np.zeros((1, 1, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((2, 1)), fit=0.0)
        assert fit(t, z) == 0.0

    def test_fit_helper_agrees(self):
        t = random_sparse((7, 8, 4), 0.3, 12)
        res = hooi(t, (3, 3, 2))
        assert fit(t, res) == pytest.approx(res.fit, abs=1e-12)

    def test_zero_tensor(self):
        t = SparseTensor3((2, 2, 2), np.zeros((0, 3), dtype=int))
        assert fit(t, TuckerFactors(np.zeros((1, 1, 1)), np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)),
                                    fit=0.0)) == 1.0

    def test_rank_too_large(self):
        with pytest.raises(ValueError, match="exceeds"):
            hooi(random_sparse((3, 3, 2), 0.9, 0), (4, 2, 2))

    def test_stops_on_tolerance(self):
        t = random_sparse((10, 10, 5), 0.3, 13, binary=True)
        res = hooi(t, (3, 3, 2), tol=1e-4, max_iters=25)
        assert res.iterations <= 25
        if res.iterations < 25:
            assert res.history[-1] - res.history[-2] < 1e-4

    def test_deterministic(self):
        t = random_sparse((20, 25, 5), 0.1, 14, binary=True)
        a, b = hooi(t, (5, 5, 3)), hooi(t, (5, 5, 3))
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.core, b.core)
