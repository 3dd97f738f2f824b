import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfctn.tensor import (
    FactorSet,
    FctnRanks,
    compose_excluding,
    degrade_factors,
    fctn_compose,
    fctn_element,
    fold,
    kron_diag,
    mode_product,
    permuted_fold,
    permuted_unfold,
    unfold,
)


def linear_index(idx, shape):
    """Column-major linear index, first index fastest."""
    out, stride = 0, 1
    for i, s in zip(idx, shape):
        out += i * stride
        stride *= s
    return out


def random_factors(rng, dims, ranks):
    return FactorSet.random(dims, FctnRanks.from_sequence(ranks), rng)


class TestUnfold:

    def test_zero_tensor(self):
        m = unfold(np.zeros((2, 3, 4)), 0)
        assert m.shape == (2, 12)
        assert not m.any()

    def test_bijection_by_enumeration(self):
        shape = (2, 3, 4)
        t = np.zeros(shape)
        for i, j, k in itertools.product(*map(range, shape)):
            t[i, j, k] = (i + 1) + 10 * (j + 1) + 100 * (k + 1)
        m = unfold(t, 1)
        assert m.shape == (3, 8)
        for i, j, k in itertools.product(*map(range, shape)):
            # remaining modes (0, 2): index 0 fastest
            col = linear_index((i, k), (2, 4))
            assert m[j, col] == t[i, j, k]

    @pytest.mark.parametrize("n", range(4))
    def test_round_trip(self, n):
        t = np.random.default_rng(0).standard_normal((3, 3, 3, 3))
        assert np.array_equal(fold(unfold(t, n), n, t.shape), t)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            unfold(np.zeros((2, 2)), 2)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=5), st.data())
    def test_round_trip_any_shape(self, shape, data):
        n = data.draw(st.integers(0, len(shape) - 1))
        t = np.arange(np.prod(shape), dtype=float).reshape(shape)
        assert np.array_equal(fold(unfold(t, n), n, shape), t)


class TestPermutedUnfold:

    def test_reduces_to_unfold(self):
        t = np.random.default_rng(1).standard_normal((3, 4, 5))
        assert np.array_equal(permuted_unfold(t, [0], [1, 2]), unfold(t, 0))

    def test_swap_is_transpose(self):
        t = np.random.default_rng(2).standard_normal((2, 3, 4, 5))
        a = permuted_unfold(t, [2, 0], [3, 1])
        b = permuted_unfold(t, [3, 1], [2, 0])
        assert np.array_equal(a, b.T)

    def test_exhaustive_2x2x2x2(self):
        t = np.random.default_rng(3).standard_normal((2, 2, 2, 2))
        rows, cols = [3, 1], [0, 2]
        m = permuted_unfold(t, rows, cols)
        for idx in itertools.product(range(2), repeat=4):
            r = linear_index([idx[q] for q in rows], (2, 2))
            c = linear_index([idx[q] for q in cols], (2, 2))
            assert m[r, c] == t[idx]
        assert np.array_equal(permuted_fold(m, rows, cols, t.shape), t)

    def test_missing_or_duplicate_mode(self):
        t = np.zeros((2, 2, 2))
        with pytest.raises(ValueError):
            permuted_unfold(t, [0], [1])
        with pytest.raises(ValueError):
            permuted_unfold(t, [0, 0], [1, 2])


class TestModeProduct:

    def test_identity(self):
        t = np.random.default_rng(4).standard_normal((3, 4, 5))
        assert np.allclose(mode_product(t, np.eye(4), 1), t)

    def test_ones_row_sums_mode(self):
        t = np.random.default_rng(5).standard_normal((3, 4, 5))
        out = mode_product(t, np.ones((1, 5)), 2)
        expected = np.zeros((3, 4, 1))
        for i, j, k in itertools.product(range(3), range(4), range(5)):
            expected[i, j, 0] += t[i, j, k]
        assert np.allclose(out, expected)

    def test_unfolding_identity(self):
        rng = np.random.default_rng(6)
        t = rng.standard_normal((3, 4, 5))
        p = rng.standard_normal((2, 4))
        assert np.allclose(unfold(mode_product(t, p, 1), 1), p @ unfold(t, 1))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mode_product(np.zeros((2, 3)), np.zeros((2, 2)), 1)

    @pytest.mark.parametrize("n", range(4))
    def test_commutes_with_composition(self, n):
        rng = np.random.default_rng(10 + n)
        f = random_factors(rng, (2, 3, 2, 3), (2, 1, 2, 2, 1, 2))
        p = rng.standard_normal((4, f.dims[n]))
        lhs = mode_product(fctn_compose(f), p, n)
        rhs = fctn_compose(degrade_factors(f, {n: p}))
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


class TestKronDiag:

    def test_singleton(self):
        assert np.array_equal(kron_diag([np.array([2.0, 5.0])]), [2.0, 5.0])

    def test_ones(self):
        assert np.array_equal(kron_diag([np.ones(2), np.ones(2)]), np.ones(4))

    def test_against_diagonal_kronecker(self):
        v1, v2 = np.array([1.0, 2.0]), np.array([3.0, 4.0])
        dense = np.kron(np.diag(v2), np.diag(v1))
        assert np.array_equal(kron_diag([v1, v2]), np.diag(dense))

    def test_errors(self):
        with pytest.raises(ValueError):
            kron_diag([])
        with pytest.raises(ValueError):
            kron_diag([np.array([1.0, 0.0])])

    def test_matches_unfold_column_order(self):
        # weight for column (r1, r2) of a mode-0 unfolding must be v1[r1] * v2[r2]
        rng = np.random.default_rng(7)
        t = rng.standard_normal((3, 2, 4))
        v1, v2 = rng.random(2) + 0.5, rng.random(4) + 0.5
        w = kron_diag([v1, v2])
        m = unfold(t, 0)
        quad = np.einsum("ic,c,ic->", m, w, m)
        brute = sum(t[i, a, b] ** 2 * v1[a] * v2[b]
                    for i, a, b in itertools.product(range(3), range(2), range(4)))
        assert np.isclose(quad, brute)

    def test_tensor_normal_covariance_form(self):
        # vec(X) ~ N(0, S2 kron S1) for a 2-mode X with diagonal S1, S2
        rng = np.random.default_rng(8)
        s1, s2 = rng.random(3) + 0.1, rng.random(4) + 0.1
        x = rng.standard_normal((3, 4))
        v = x.reshape(-1, order="F")
        cov = np.kron(np.diag(s2), np.diag(s1))
        assert np.isclose(v @ np.diag(kron_diag([s1, s2])) @ v, v @ cov @ v)


class TestCompose:

    def test_scalar_factors(self):
        ranks = FctnRanks(1, 1, 1, 1, 1, 1)
        f = FactorSet([np.full((1, 1, 1, 1), v) for v in (2.0, 3.0, 5.0, 7.0)], ranks)
        assert fctn_compose(f).item() == 210.0

    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(9)
        vecs = [rng.standard_normal(d) for d in (2, 3, 4, 5)]
        factors = []
        for n, v in enumerate(vecs):
            shape = [1, 1, 1, 1]
            shape[n] = v.size
            factors.append(v.reshape(shape))
        f = FactorSet(factors, FctnRanks(1, 1, 1, 1, 1, 1))
        expected = np.einsum("i,j,k,l->ijkl", *vecs)
        assert np.allclose(fctn_compose(f), expected)

    def test_matches_brute_force(self):
        f = random_factors(np.random.default_rng(11), (2, 2, 2, 2), (2,) * 6)
        z = fctn_compose(f)
        for idx in itertools.product(range(2), repeat=4):
            ref = fctn_element(f, idx)
            assert abs(z[idx] - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_rank_mismatch(self):
        ranks = FctnRanks(2, 1, 1, 1, 1, 1)
        with pytest.raises(ValueError):
            FactorSet([np.ones((2, 1, 1, 1))] * 4, ranks)


class TestElement:

    def test_counts_terms(self):
        ranks = FctnRanks(*(2,) * 6)
        f = FactorSet([np.ones(ranks.factor_shape(n, 1)) for n in range(4)], ranks)
        assert fctn_element(f, (0, 0, 0, 0)) == 64.0

    def test_zero_factor(self):
        f = random_factors(np.random.default_rng(12), (2, 2, 2, 2), (2,) * 6)
        f = f.replace(2, np.zeros_like(f[2]))
        assert fctn_element(f, (1, 0, 1, 0)) == 0.0

    def test_index_out_of_range(self):
        f = random_factors(np.random.default_rng(13), (2, 2, 2, 2), (1,) * 6)
        with pytest.raises(IndexError):
            fctn_element(f, (2, 0, 0, 0))


class TestComposeExcluding:

    @pytest.mark.parametrize("n", range(4))
    def test_unfolding_identity(self, n):
        f = random_factors(np.random.default_rng(20 + n), (2, 2, 2, 2), (2,) * 6)
        lhs = unfold(fctn_compose(f), n)
        rhs = unfold(f[n], n) @ compose_excluding(f, n)
        assert np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs) < 1e-12

    @pytest.mark.parametrize("n", range(4))
    def test_shape(self, n):
        f = random_factors(np.random.default_rng(30), (2, 3, 4, 5), (2, 3, 1, 2, 2, 3))
        g = compose_excluding(f, n)
        bond_rows = np.prod([f.ranks.bond(n, j) for j in range(4) if j != n])
        other = np.prod([d for j, d in enumerate(f.dims) if j != n])
        assert g.shape == (bond_rows, other)

    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(31)
        vecs = [rng.standard_normal(d) for d in (2, 3, 4, 5)]
        factors = []
        for n, v in enumerate(vecs):
            shape = [1, 1, 1, 1]
            shape[n] = v.size
            factors.append(v.reshape(shape))
        f = FactorSet(factors, FctnRanks(1, 1, 1, 1, 1, 1))
        g = compose_excluding(f, 0)
        expected = np.einsum("j,k,l->jkl", *vecs[1:]).reshape(1, -1, order="F")
        assert np.allclose(g, expected)

    def test_independent_of_excluded_factor(self):
        f = random_factors(np.random.default_rng(32), (2, 2, 3, 2), (2, 1, 2, 2, 1, 2))
        g = compose_excluding(f, 2)
        g0 = compose_excluding(f.replace(2, np.zeros_like(f[2])), 2)
        assert np.array_equal(g, g0)
