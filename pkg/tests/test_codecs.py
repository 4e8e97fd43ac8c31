import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ftzip.codecs import (
    BinaryCodeMatrix,
    CODEC_HEADER_BYTES,
    PQCodebook,
    codec_size_bytes,
    hamming,
    kmeans,
    lsh_cos,
    lsh_decode,
    lsh_encode,
    lsh_train,
    norm_decode,
    norm_encode,
    norm_train,
    npq_decode,
    npq_encode,
    opq_train,
    pack_codes,
    pq_decode,
    pq_dot,
    pq_encode,
    pq_error,
    pq_train,
    quantize,
    row_payload_bytes,
    unpack_codes,
)
from ftzip.codecs.kmeans import assign
from ftzip.codecs.pq import kmeans1d_exact


# ----------------------------------------------------------------------------
# independent oracles


def brute_force_kmeans(points, ncentroids):
    """Optimal objective by enumerating every assignment of points to clusters."""
    best = np.inf
    n = len(points)
    for labels in itertools.product(range(ncentroids), repeat=n):
        labels = np.array(labels)
        cost = 0.0
        for c in range(ncentroids):
            members = points[labels == c]
            if len(members):
                cost += ((members - members.mean(0)) ** 2).sum()
        best = min(best, cost)
    return best


def dp_1d_objective(values, ncentroids):
    """Optimal 1-D k-means objective by a plain O(K n^2) recursion over sorted values."""
    x = sorted(values)
    n = len(x)

    def seg(i, j):  # cost of x[i:j]
        s = x[i:j]
        m = sum(s) / len(s)
        return sum((v - m) ** 2 for v in s)

    K = min(ncentroids, n)
    INF = float("inf")
    D = [[INF] * (n + 1) for _ in range(K + 1)]
    D[0][0] = 0.0
    for c in range(1, K + 1):
        for j in range(1, n + 1):
            D[c][j] = min(D[c - 1][i] + seg(i, j) for i in range(j))
    return min(D[c][n] for c in range(1, K + 1))


def f32_slack(values):
    # centroids are stored as float32; allow their rounding error on every point
    v = np.abs(np.asarray(values, dtype=np.float64))
    return len(v) * (2 * np.finfo(np.float32).eps * v.max()) ** 2


def codebook_objective(ncb, values):
    v = np.asarray(values, dtype=np.float64)
    return float(((norm_decode(ncb, norm_encode(ncb, v)).astype(np.float64) - v) ** 2).sum())


def exhaustive_encode(cb, x):
    codes = []
    for i in range(cb.k):
        block = x[i * cb.dsub:(i + 1) * cb.dsub]
        d = [float(((block - c.astype(np.float64)) ** 2).sum()) for c in cb.centroids[i]]
        codes.append(int(np.argmin(d)))  # argmin returns the first minimum
    return codes


def planted_rotation_instance(n=4000, d=8, seed=0):
    """Per-block clusters (4 per 2-D block) hidden behind a random rotation."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(d // 2, 4, 2)) * 3.0
    pick = rng.integers(4, size=(n, d // 2))
    Z = np.concatenate([centers[i][pick[:, i]] for i in range(d // 2)], axis=1)
    Z += 0.05 * rng.normal(size=Z.shape)
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return Z, Z @ Q.T


# ----------------------------------------------------------------------------
# k-means


class TestKMeans:
    def test_each_point_own_centroid(self):
        pts = np.array([[0.0, 1.0], [2.0, 3.0], [5.0, -1.0], [7.0, 7.0]])
        res = kmeans(pts, 4, seed=3)
        assert res.objective == pytest.approx(0.0, abs=1e-12)
        assert sorted(map(tuple, res.centroids)) == sorted(map(tuple, pts))

    def test_single_centroid_is_mean(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        res = kmeans(pts, 1)
        np.testing.assert_allclose(res.centroids[0], pts.mean(0), atol=1e-12)

    def test_square_oracle(self):
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        assert brute_force_kmeans(pts, 2) == pytest.approx(1.0)
        res = kmeans(pts, 2, seed=0)
        assert res.objective == pytest.approx(1.0)
        assert sorted(map(tuple, res.centroids)) == [(0.0, 0.5), (10.0, 0.5)]

    def test_duplicates_flagged(self):
        res = kmeans(np.array([[1.0], [2.0]]), 4)
        assert res.duplicates
        assert res.centroids.shape == (4, 1)
        assert res.objective == pytest.approx(0.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((0, 2)), 2)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 60), st.integers(1, 3)),
                      elements=st.floats(-100, 100)), st.integers(1, 8), st.integers(0, 5))
    def test_invariants(self, pts, ncent, seed):
        res = kmeans(pts, ncent, iters=10, seed=seed)
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
        # every point sits on its nearest centroid
        d = ((pts[:, None, :] - res.centroids[None]) ** 2).sum(-1)
        np.testing.assert_allclose(d[np.arange(len(pts)), res.assignments], d.min(1), rtol=1e-12, atol=1e-12)
        assert res.objective == pytest.approx(d.min(1).sum(), rel=1e-4, abs=1e-9)

    def test_several_empty_clusters(self):
        # two repairs in one step: the second must not pick a cluster emptied by the first
        pts = np.array([[8.33427179e-269], [0.0], [0.0], [0.0]])
        res = kmeans(pts, 4, iters=10, seed=0)
        assert res.objective == 0.0
        rng = np.random.default_rng(0)
        pts = np.repeat(rng.normal(size=(3, 2)), 10, axis=0) + 1e-9 * rng.normal(size=(30, 2))
        res = kmeans(pts, 8, iters=10, seed=0)
        assert np.all(np.diff(res.history) <= 0)

    @settings(max_examples=25, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 7), st.just(2)), elements=st.floats(-10, 10)),
           st.integers(0, 3))
    def test_two_means_near_brute_force(self, pts, seed):
        # Lloyd is a local method: never better than optimal
        res = kmeans(pts, 2, seed=seed)
        assert res.objective >= brute_force_kmeans(pts, 2) - 1e-9

    def test_assign_ties_lowest_index(self):
        labels, _ = assign(np.array([[0.5]]), np.array([[0.0], [1.0]]))
        assert labels[0] == 0


# ----------------------------------------------------------------------------
# product quantization


class TestPQ:
    def test_repeated_vector_exact(self):
        x = np.array([1.5, -2.0, 0.25, 4.0])
        cb = pq_train(np.tile(x, (20, 1)), 2, 8)
        np.testing.assert_allclose(pq_decode(cb, pq_encode(cb, x)), x, rtol=1e-6)

    def test_scalar_quantizer_exact(self):
        rng = np.random.default_rng(1)
        M = rng.integers(0, 200, size=(500, 4)).astype(np.float64) / 7
        cb = pq_train(M, 4, 8)
        np.testing.assert_allclose(pq_decode(cb, pq_encode(cb, M)), M, rtol=1e-6)

    def test_one_bit_blocks_optimal(self):
        M = np.array([[0.0, 5.0], [1.0, 6.0], [9.0, 0.0], [10.0, 2.0]])
        cb = pq_train(M, 2, 1, seed=0)
        for i in range(2):
            col = M[:, [i]]
            assert pq_error(PQCodebook(1, 1, cb.centroids[i:i + 1]), col) == pytest.approx(
                brute_force_kmeans(col, 2))

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            pq_train(np.zeros((10, 6)), 4)
        with pytest.raises(ValueError):
            pq_train(np.zeros((10, 6)), 2, b=9)

    @pytest.mark.parametrize("k,b", [(2, 4), (4, 8)])
    def test_encode_exhaustive(self, k, b):
        rng = np.random.default_rng(k * 10 + b)
        cb = pq_train(rng.normal(size=(3000, 16)), k, b, iters=5)
        X = rng.normal(size=(200, 16))
        codes = pq_encode(cb, X)
        for x, c in zip(X, codes):
            assert c.tolist() == exhaustive_encode(cb, x)

    def test_encode_concatenated_centroids(self):
        rng = np.random.default_rng(2)
        cb = pq_train(rng.normal(size=(2000, 8)), 4, 4)
        codes = rng.integers(0, 16, size=(50, 4)).astype(np.uint8)
        np.testing.assert_array_equal(pq_encode(cb, pq_decode(cb, codes)), codes)

    def test_decode_zero_codes(self):
        cb = PQCodebook(2, 1, np.arange(8, dtype=np.float32).reshape(2, 2, 2))
        np.testing.assert_array_equal(pq_decode(cb, np.zeros(2, dtype=np.uint8)), [0, 1, 4, 5])

    def test_decode_rejects_large_code(self):
        cb = PQCodebook(2, 1, np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            pq_decode(cb, np.array([0, 2]))

    def test_dimension_mismatch(self):
        cb = PQCodebook(2, 1, np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            pq_encode(cb, np.zeros(5))
        with pytest.raises(ValueError):
            pq_dot(cb, np.zeros(2, dtype=np.uint8), np.zeros(3))

    def test_error_is_sum_of_block_minima(self):
        rng = np.random.default_rng(3)
        cb = pq_train(rng.normal(size=(1000, 8)), 2, 4, iters=5)
        x = rng.normal(size=8)
        want = 0.0
        for i in range(2):
            blk = x[i * 4:(i + 1) * 4]
            want += min(((blk - c) ** 2).sum() for c in cb.centroids[i].astype(np.float64))
        got = ((x - pq_decode(cb, pq_encode(cb, x))) ** 2).sum()
        assert got == pytest.approx(want, rel=1e-9)

    def test_dot_zero_and_exact(self):
        rng = np.random.default_rng(4)
        cb = pq_train(rng.normal(size=(500, 8)), 4, 4)
        codes = pq_encode(cb, rng.normal(size=8))
        assert pq_dot(cb, codes, np.zeros(8)) == 0.0
        y = rng.normal(size=8)
        assert pq_dot(cb, codes, y) == pytest.approx(float(pq_decode(cb, codes).astype(np.float64) @ y), rel=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([(2, 4), (4, 8), (8, 2)]))
    def test_dot_matches_decode(self, seed, kb):
        k, b = kb
        rng = np.random.default_rng(seed)
        cb = PQCodebook(k, b, rng.normal(size=(k, 1 << b, 16 // k)).astype(np.float32))
        codes = rng.integers(0, 1 << b, size=(20, k))
        y = rng.normal(size=16)
        want = pq_decode(cb, codes).astype(np.float64) @ y
        np.testing.assert_allclose(pq_dot(cb, codes, y), want, rtol=1e-5, atol=1e-9)

    def test_error_non_increasing_in_k(self):
        X = np.random.default_rng(5).normal(size=(10000, 16))
        errs = [pq_error(pq_train(X, k, 8, iters=10), X) / len(X) for k in (1, 2, 4, 8)]
        for a, b in zip(errs, errs[1:]):
            assert b <= a * 1.05

    def test_centroid_shrinks_energy(self):
        X = np.random.default_rng(6).normal(size=(5000, 8))
        cb = pq_train(X, 4, 4)
        Xh = pq_decode(cb, pq_encode(cb, X)).astype(np.float64)
        assert (Xh ** 2).sum(1).mean() <= (X ** 2).sum(1).mean() * 1.01

    @given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 1000))
    def test_pack_roundtrip(self, b, k, seed):
        codes = np.random.default_rng(seed).integers(0, 1 << b, size=(7, k)).astype(np.uint8)
        packed = pack_codes(codes, b)
        assert packed.shape == (7, -(-k * b // 8))
        np.testing.assert_array_equal(unpack_codes(packed, k, b), codes)


# ----------------------------------------------------------------------------
# norm quantizer


class TestNormQuantizer:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=64), st.integers(1, 4))
    def test_matches_dp_oracle(self, norms, b):
        ncb = norm_train(np.array(norms), b=b)
        want = dp_1d_objective(norms, 1 << b)
        assert codebook_objective(ncb, norms) == pytest.approx(want, rel=1e-6, abs=f32_slack(norms))

    def test_exact_when_few_values(self):
        v = np.array([0.5, 2.0, 3.0, 2.0, 0.5, 1000.0])
        ncb = norm_train(v)
        np.testing.assert_array_equal(norm_decode(ncb, norm_encode(ncb, v)), v.astype(np.float32))

    def test_all_equal(self):
        ncb = norm_train(np.full(20, 3.5))
        assert codebook_objective(ncb, np.full(20, 3.5)) == 0.0

    def test_zero_gets_own_cell(self):
        rng = np.random.default_rng(0)
        v = np.concatenate([[0.0, 0.0], rng.uniform(0.001, 1.0, 3000)])
        ncb = norm_train(v)
        assert norm_decode(ncb, norm_encode(ncb, [0.0]))[0] == 0.0

    @given(st.lists(st.floats(0, 1e4), min_size=1, max_size=300))
    def test_codebook_sorted_nonnegative(self, norms):
        c = norm_train(np.array(norms)).centroids
        assert len(c) == 256
        assert np.all(np.diff(c) >= 0) and np.all(c >= 0)

    def test_large_input_near_optimal(self):
        # above the exact-DP size limit the grouped solution is refined by Lloyd
        rng = np.random.default_rng(1)
        v = np.exp(rng.uniform(0, np.log(1000), 3000))
        ncb = norm_train(v, b=3)
        x = np.sort(v)
        exact = kmeans1d_exact(x, np.ones_like(x), 8)
        best = float(((x[:, None] - exact[None]) ** 2).min(1).sum())
        assert codebook_objective(ncb, v) <= best * 1.02

    def test_ratio_1000_roundtrip(self):
        rng = np.random.default_rng(2)
        v = np.exp(rng.uniform(0, np.log(1000), 64))
        ncb = norm_train(v, b=4)
        dec = norm_decode(ncb, norm_encode(ncb, v)).astype(np.float64)
        c = ncb.centroids.astype(np.float64)
        nearest = np.abs(v[:, None] - c[None]).min(1)
        np.testing.assert_allclose(np.abs(dec - v), nearest, rtol=1e-6, atol=1e-6)
        assert codebook_objective(ncb, v) == pytest.approx(dp_1d_objective(list(v), 16), rel=1e-6, abs=f32_slack(v))


# ----------------------------------------------------------------------------
# normalized PQ


def _unit_codebook(k=4, d=8, b=6, seed=0):
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(4000, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return pq_train(U, k, b, iters=10)


class TestNPQ:
    def test_zero_vector(self):
        cb = _unit_codebook()
        ncb = norm_train(np.array([0.0, 1.0, 2.0]))
        codes, nc = npq_encode(cb, ncb, np.zeros((1, 8)))
        assert np.all(codes == 0)
        np.testing.assert_array_equal(npq_decode(cb, ncb, codes, nc), np.zeros((1, 8)))

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float64, 8, elements=st.floats(-10, 10)).filter(lambda x: np.linalg.norm(x) > 1e-6),
           st.floats(1e-3, 1e3))
    def test_scale_changes_only_norm(self, x, c):
        cb = _unit_codebook()
        ncb = norm_train(np.linspace(0.01, 1e4, 500))
        codes_a, _ = npq_encode(cb, ncb, x[None])
        codes_b, _ = npq_encode(cb, ncb, (c * x)[None])
        np.testing.assert_array_equal(codes_a, codes_b)

    def test_decoded_norm_split(self):
        rng = np.random.default_rng(3)
        cb = _unit_codebook()
        X = rng.normal(size=(1000, 8)) * np.exp(rng.uniform(0, 5, size=(1000, 1)))
        ncb = norm_train(np.linalg.norm(X, axis=1))
        codes, nc = npq_encode(cb, ncb, X)
        dec = npq_decode(cb, ncb, codes, nc)
        dir_norm = np.linalg.norm(pq_decode(cb, codes).astype(np.float64), axis=1)
        r = norm_decode(ncb, nc).astype(np.float64)
        np.testing.assert_allclose(np.linalg.norm(dec, axis=1), r * dir_norm, rtol=1e-6)
        assert np.all((dir_norm >= 0.5) & (dir_norm <= 1.5))


# ----------------------------------------------------------------------------
# OPQ


class TestOPQ:
    def test_planted_rotation(self):
        _, X = planted_rotation_instance()
        pq_err = pq_error(pq_train(X, 4, 2, seed=0), X)
        R, cb, hist = opq_train(X, 4, 2, outer_iters=10, seed=0)
        opq_err = pq_error(cb, X @ R.astype(np.float64))
        assert opq_err < 0.9 * pq_err
        assert np.abs(R.astype(np.float64).T @ R - np.eye(8)).max() <= 1e-5
        assert np.all(np.diff(hist) <= 1e-6)

    def test_no_regression_on_aligned_data(self):
        Z, _ = planted_rotation_instance(seed=1)
        pq_err = pq_error(pq_train(Z, 4, 2, seed=0), Z)
        R, cb, hist = opq_train(Z, 4, 2, seed=0)
        assert pq_error(cb, Z @ R.astype(np.float64)) <= pq_err + 1e-6
        assert hist[0] == pytest.approx(pq_err)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_and_orthogonal(self, seed):
        X = np.random.default_rng(seed).normal(size=(300, 8)) * np.arange(1, 9)
        R, _, hist = opq_train(X, 2, 3, outer_iters=4, iters=5, seed=seed)
        assert np.all(np.diff(hist) <= 1e-6 * max(1.0, hist[0]))
        assert np.abs(R.astype(np.float64).T @ R - np.eye(8)).max() <= 1e-5

    def test_quantized_matrix_decode_and_dot(self):
        _, X = planted_rotation_instance(n=600, seed=2)
        q = quantize(X, "opq_norm", 4, 4, seed=0)
        y = np.random.default_rng(0).normal(size=8)
        np.testing.assert_allclose(q.dot(y), q.decode_rows() @ y, rtol=1e-5, atol=1e-8)


# ----------------------------------------------------------------------------
# LSH


class TestLSH:
    def test_rotation_orthonormal(self):
        R = lsh_train(16, 8, seed=1).astype(np.float64)
        assert np.abs(R @ R.T - np.eye(8)).max() <= 1e-5

    def test_rejects_too_many_bits(self):
        with pytest.raises(ValueError):
            lsh_train(8, 9)

    def test_identical_and_complementary(self):
        a = np.array([0b10110010], dtype=np.uint8)
        assert lsh_cos(a, a, 8) == pytest.approx(1.0)
        assert lsh_cos(a, ~a, 8) == pytest.approx(-1.0)
        assert hamming(a, ~a, 8) == 8

    def test_cosine_estimate(self):
        rng = np.random.default_rng(0)
        d = 64
        R = lsh_train(d, d, seed=0)
        x = rng.normal(size=(10_000, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        z = rng.normal(size=(10_000, d))
        z -= (z * x).sum(1, keepdims=True) * x
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        t = rng.uniform(0, np.pi, size=(10_000, 1))
        y = np.cos(t) * x + np.sin(t) * z
        est = lsh_cos(lsh_encode(R, x), lsh_encode(R, y), d)
        err = est - np.cos(t[:, 0])
        assert abs(err.mean()) <= 0.05
        for lo in np.linspace(0, np.pi, 6)[:-1]:
            sel = (t[:, 0] >= lo) & (t[:, 0] < lo + np.pi / 5)
            assert abs(err[sel].mean()) <= 0.05

    def test_decode_norm_and_sign(self):
        R = lsh_train(8, 8, seed=3)
        x = np.random.default_rng(1).normal(size=(5, 8))
        bits = lsh_encode(R, x)
        dec = lsh_decode(R, bits, np.linalg.norm(x, axis=1))
        np.testing.assert_allclose(np.linalg.norm(dec, axis=1), np.linalg.norm(x, axis=1), rtol=1e-5)
        assert np.all((dec * x).sum(1) > 0)

    def test_no_norm_uses_mean(self):
        X = np.random.default_rng(2).normal(size=(50, 8))
        q = quantize(X, "lsh", 1, seed=0)
        assert isinstance(q, BinaryCodeMatrix) and q.norm_codebook is None
        np.testing.assert_allclose(np.linalg.norm(q.decode_rows(), axis=1),
                                   np.float32(np.linalg.norm(X, axis=1).mean()), rtol=1e-5)


# ----------------------------------------------------------------------------
# sizes


class TestSizes:
    def test_npq_formula(self):
        X = np.random.default_rng(0).normal(size=(10000, 8))
        q = quantize(X, "npq", 2, 8, iters=2)
        assert codec_size_bytes(q) == CODEC_HEADER_BYTES + 20000 + 10000 + 2 * 256 * 4 * 4 + 1024

    def test_payload_bytes(self):
        X = np.random.default_rng(1).normal(size=(300, 64))
        assert row_payload_bytes(quantize(X, "pq", 8, 8, iters=1)) == 8
        assert row_payload_bytes(quantize(X, "lsh", 8)) == 8
        assert row_payload_bytes(quantize(X[:, :8], "pq", 1, 4, iters=1)) == 1
        assert row_payload_bytes(quantize(X[:, :8], "pq", 4, 3, iters=1)) == 2

    @pytest.mark.parametrize("codec", ["pq", "npq", "opq", "opq_norm", "lsh", "lsh_norm"])
    def test_by_hand(self, codec):
        rows, d, k, b = 333, 8, 1, 8
        q = quantize(np.random.default_rng(2).normal(size=(rows, d)), codec, k, b, iters=2, opq_iters=1) \
            if not codec.startswith("lsh") else quantize(np.random.default_rng(2).normal(size=(rows, d)), codec, k)
        norm = codec in ("npq", "opq_norm", "lsh_norm")
        if codec.startswith("lsh"):
            want = 16 + rows * (1 + norm) + 8 * d * 4 + 1024 * norm
        else:
            want = 16 + rows * (k * b // 8 + norm) + k * 256 * (d // k) * 4 + 1024 * norm
            want += d * d * 4 * codec.startswith("opq")
        assert codec_size_bytes(q) == want
