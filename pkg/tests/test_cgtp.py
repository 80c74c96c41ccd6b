import io
import math

import numpy as np
import pytest

from cgcp import so3
from cgcp.cgtp import (
    MAX_L,
    SharedWeightTP,
    apply_cp,
    apply_cp_batched,
    apply_cp_multiorder,
    build_cg_tensor,
    dense_tp,
    exact_tp,
    per_path_parameter_count,
    read_cg_text,
    shared_weight_tp,
)
from cgcp.errors import ArgumentError
from cgcp.so3 import IrrepsSpec
from cgcp.tensor3 import CPFactors, cp_als


@pytest.fixture(scope="module")
def exact_L1():
    return cp_als(build_cg_tensor(1).tensor, 16, restarts=8, seed=0)


def path_count_oracle(L):
    return sum(min(l1 + l2, L) - abs(l1 - l2) + 1 for l1 in range(L + 1) for l2 in range(L + 1))


def yzx(v):
    return v[[1, 2, 0]]


class TestBuild:
    def test_L0(self):
        M = build_cg_tensor(0)
        assert M.tensor.dims == (1, 1, 1)
        assert [pb.path for pb in M.paths] == [(0, 0, 0)]
        assert M.dense.tolist() == [[[1.0]]]

    def test_L1_entries_from_cg_coefficient(self):
        M = build_cg_tensor(1)
        assert len(M.paths) == 5
        lm = [(l, m) for l in range(2) for m in range(-l, l + 1)]
        ref = np.zeros((4, 4, 4))
        for k, (l3, m3) in enumerate(lm):
            for i, (l1, m1) in enumerate(lm):
                for j, (l2, m2) in enumerate(lm):
                    ref[k, i, j] = so3.cg_coefficient(l1, m1, l2, m2, l3, m3)
        np.testing.assert_array_equal(M.dense, ref)
        assert M.tensor.nnz == np.count_nonzero(ref) == 16

    @pytest.mark.parametrize("L", range(7))
    def test_path_count(self, L):
        assert len(build_cg_tensor(L).paths) == path_count_oracle(L)

    @pytest.mark.parametrize("L", [2, 3, 4])
    def test_entries_inside_exactly_one_block(self, L):
        M = build_cg_tensor(L)
        hits = np.zeros(M.tensor.dims, dtype=int)
        for pb in M.paths:
            (o3, o1, o2), s = pb.offsets, pb.block.shape
            hits[o3:o3 + s[0], o1:o1 + s[1], o2:o2 + s[2]] += 1
        assert (hits[tuple(M.tensor.coords.T)] == 1).all()

    @pytest.mark.parametrize("L", [1, 3, 5])
    def test_path_norms(self, L):
        for path, n2 in build_cg_tensor(L).path_norms().items():
            assert n2 == pytest.approx(2 * path.l3 + 1, abs=1e-12)

    @pytest.mark.parametrize("L", [-1, MAX_L + 1, 1.5])
    def test_range(self, L):
        with pytest.raises(ArgumentError):
            build_cg_tensor(L)

    def test_text_round_trip(self):
        M = build_cg_tensor(2)
        buf = io.StringIO()
        M.write_text(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == f"2 9 {M.tensor.nnz}"
        buf.seek(0)
        L, T = read_cg_text(buf)
        assert L == 2
        np.testing.assert_array_equal(T.dense(), M.dense)


class TestExactTP:
    def test_zero_inputs(self, rng):
        M = build_cg_tensor(2)
        x = rng.standard_normal(M.d)
        assert not exact_tp(M, x, np.zeros(M.d)).any()
        assert not exact_tp(M, np.zeros(M.d), x).any()

    def test_dot_and_cross_constants(self, rng):
        M = build_cg_tensor(1)
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        x = np.concatenate([[0.0], yzx(a)])
        y = np.concatenate([[0.0], yzx(b)])
        z = exact_tp(M, x, y)
        assert z[0] == pytest.approx(a @ b / math.sqrt(3), abs=1e-14)
        np.testing.assert_allclose(z[1:], yzx(np.cross(a, b)) / math.sqrt(2), atol=1e-14)

    @pytest.mark.parametrize("L", [1, 2, 3, 4])
    def test_equivariance(self, L, rng):
        M = build_cg_tensor(L)
        spec = IrrepsSpec.uniform(1, L)
        for _ in range(50):
            D = so3.wigner_block(spec, so3.sample_rotation(rng))
            x, y = rng.standard_normal((2, M.d))
            assert np.linalg.norm(exact_tp(M, D @ x, D @ y) - D @ exact_tp(M, x, y)) < 1e-10

    def test_matches_dense(self, rng):
        M = build_cg_tensor(3)
        x, y = rng.standard_normal((2, M.d))
        np.testing.assert_allclose(exact_tp(M, x, y), dense_tp(M.dense, x, y), atol=1e-13)

    def test_bilinear(self, rng):
        M = build_cg_tensor(3)
        x1, x2, y1, y2 = rng.standard_normal((4, M.d))
        a, b = 1.7, -0.3
        np.testing.assert_allclose(exact_tp(M, a * x1 + b * x2, y1),
                                   a * exact_tp(M, x1, y1) + b * exact_tp(M, x2, y1), atol=1e-12)
        np.testing.assert_allclose(exact_tp(M, x1, a * y1 + b * y2),
                                   a * exact_tp(M, x1, y1) + b * exact_tp(M, x1, y2), atol=1e-12)

    @pytest.mark.parametrize("l1,l2", [(1, 1), (1, 2), (2, 2), (0, 3)])
    def test_output_sparsity(self, l1, l2, rng):
        L = 3
        M = build_cg_tensor(L)
        x, y = np.zeros(M.d), np.zeros(M.d)
        x[l1 ** 2:(l1 + 1) ** 2] = rng.standard_normal(2 * l1 + 1)
        y[l2 ** 2:(l2 + 1) ** 2] = rng.standard_normal(2 * l2 + 1)
        z = exact_tp(M, x, y)
        for l3 in range(L + 1):
            block = z[l3 ** 2:(l3 + 1) ** 2]
            if abs(l1 - l2) <= l3 <= l1 + l2:
                assert np.linalg.norm(block) > 0
            else:
                assert not block.any()

    def test_shape_mismatch(self):
        M = build_cg_tensor(1)
        with pytest.raises(ArgumentError):
            exact_tp(M, np.zeros(3), np.zeros(4))


class TestApplyCP:
    def test_zero_input(self, exact_L1, rng):
        assert not apply_cp(exact_L1, np.zeros(4), rng.standard_normal(4)).any()

    def test_exact_fit_matches_exact_tp(self, exact_L1, rng):
        M = build_cg_tensor(1)
        for _ in range(100):
            x, y = rng.standard_normal((2, 4))
            np.testing.assert_allclose(apply_cp(exact_L1, x, y), exact_tp(M, x, y), atol=1e-6)

    def test_linearity(self, rng):
        f = CPFactors(*rng.standard_normal((3, 9, 12)))
        x1, x2, y = rng.standard_normal((3, 9))
        np.testing.assert_allclose(apply_cp(f, 2.0 * x1 - 0.5 * x2, y),
                                   2.0 * apply_cp(f, x1, y) - 0.5 * apply_cp(f, x2, y), atol=1e-12)

    def test_batched_matches_loop(self, rng):
        f = CPFactors(*rng.standard_normal((3, 9, 12)))
        X, Y = rng.standard_normal((2, 8, 9))
        loop = np.array([apply_cp(f, x, y) for x, y in zip(X, Y)])
        assert np.abs(apply_cp_batched(f, X, Y) - loop).max() < 1e-12
        np.testing.assert_allclose(apply_cp_batched(f, X[:1], Y[:1])[0], apply_cp(f, X[0], Y[0]), atol=1e-13)
        assert not apply_cp_batched(f, np.zeros_like(X), Y).any()

    def test_batched_shape_errors(self, rng):
        f = CPFactors(*rng.standard_normal((3, 4, 2)))
        with pytest.raises(ArgumentError):
            apply_cp_batched(f, np.zeros((2, 4)), np.zeros((3, 4)))
        with pytest.raises(ArgumentError):
            apply_cp(f, np.zeros(5), np.zeros(4))


class TestMultiorder:
    def test_two_inputs_match_apply_cp(self, rng):
        f = CPFactors(*rng.standard_normal((3, 5, 6)))
        x, y = rng.standard_normal((2, 5))
        np.testing.assert_array_equal(apply_cp_multiorder(f.A, [f.B, f.C], [x, y]), apply_cp(f, x, y))

    def test_zero_input(self, rng):
        A, B1, B2, B3 = rng.standard_normal((4, 4, 3))
        x = rng.standard_normal(4)
        assert not apply_cp_multiorder(A, [B1, B2, B3], [x, np.zeros(4), x]).any()

    def test_four_way_dense_oracle(self, rng):
        R = 3
        A = rng.standard_normal((5, R))
        Bs = [rng.standard_normal((d, R)) for d in (4, 3, 6)]
        T = np.einsum("ar,br,cr,dr->abcd", A, *Bs)
        for _ in range(10):
            xs = [rng.standard_normal(B.shape[0]) for B in Bs]
            ref = np.einsum("abcd,b,c,d->a", T, *xs)
            np.testing.assert_allclose(apply_cp_multiorder(A, Bs, xs), ref, atol=1e-10)

    def test_needs_two_inputs(self, rng):
        with pytest.raises(ArgumentError):
            apply_cp_multiorder(np.ones((2, 2)), [np.ones((2, 2))], [np.ones(2)])
        with pytest.raises(ArgumentError):
            apply_cp_multiorder(np.ones((2, 2)), [np.ones((2, 2)), np.ones((3, 3))], [np.ones(2), np.ones(3)])


class TestSharedWeight:
    @pytest.mark.parametrize("c", [4, 16, 64])
    @pytest.mark.parametrize("L", [1, 2, 3])
    def test_parameter_count(self, c, L, rng):
        d = (L + 1) ** 2
        layer = SharedWeightTP(CPFactors(*rng.standard_normal((3, d, 2))), rng.standard_normal((c, c)))
        assert layer.parameter_count() == c * c
        assert per_path_parameter_count(c, L) == c * c * len(so3.enumerate_paths(L))

    def test_identity_and_zero(self, exact_L1, rng):
        X, Y = rng.standard_normal((2, 5, 4))
        np.testing.assert_array_equal(shared_weight_tp(exact_L1, np.eye(5), X, Y), apply_cp_batched(exact_L1, X, Y))
        assert not shared_weight_tp(exact_L1, np.zeros((5, 5)), X, Y).any()

    def test_identity_reproduces_channelwise_cg(self, exact_L1, rng):
        M = build_cg_tensor(1)
        X, Y = rng.standard_normal((2, 6, 4))
        ref = np.array([exact_tp(M, x, y) for x, y in zip(X, Y)])
        np.testing.assert_allclose(shared_weight_tp(exact_L1, np.eye(6), X, Y), ref, atol=1e-9)

    def test_equivariance(self, exact_L1, rng):
        spec = IrrepsSpec.uniform(1, 1)
        for _ in range(20):
            c = 8
            W = rng.standard_normal((c, c))
            D = so3.wigner_block(spec, so3.sample_rotation(rng))
            X, Y = rng.standard_normal((2, c, 4))
            lhs = shared_weight_tp(exact_L1, W, X @ D.T, Y @ D.T)
            rhs = shared_weight_tp(exact_L1, W, X, Y) @ D.T
            assert np.abs(lhs - rhs).max() < 1e-9

    @pytest.mark.parametrize("W", [np.ones((2, 3)), np.array([[np.nan]])])
    def test_bad_weights(self, W, exact_L1):
        with pytest.raises(ArgumentError):
            SharedWeightTP(exact_L1, W)
