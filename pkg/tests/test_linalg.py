import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compsearch.linalg import jacobi_eigh, l2_norm, principal_directions


class TestL2Norm:
    @given(st.integers(0, 1000))
    def test_matches_numpy(self, seed):
        v = np.random.default_rng(seed).standard_normal(257)
        assert l2_norm(v) == pytest.approx(float(np.linalg.norm(v)), rel=1e-12)

    def test_zero(self):
        assert l2_norm(np.zeros(10)) == 0.0


class TestJacobiEigh:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 40))
    def test_matches_lapack_eigenvalues(self, seed, n):
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((n, n))
        sym = (m + m.T) / 2
        values, vectors = jacobi_eigh(sym)
        expected = np.sort(np.linalg.eigvalsh(sym))[::-1]
        assert np.allclose(values, expected, atol=1e-9)
        # eigenvector property: A v = lambda v
        for i in range(n):
            assert np.allclose(sym @ vectors[:, i], values[i] * vectors[:, i], atol=1e-8)
        # orthonormal columns
        assert np.abs(vectors.T @ vectors - np.eye(n)).max() < 1e-10

    def test_diagonal_matrix(self):
        values, vectors = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
        assert values == pytest.approx([3.0, 2.0, 1.0])

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.zeros((2, 3)))


class TestPrincipalDirections:
    def test_covariance_branch_matches_svd_subspace(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((30, 10))
        mean_t, basis_t = principal_directions(x, 4)  # d <= n branch
        assert np.allclose(mean_t, x.mean(0))
        _, _, vt = np.linalg.svd(x - x.mean(0), full_matrices=False)
        ref = vt[:4]
        # subspace equality: projector matrices agree
        p_got = basis_t.T @ basis_t
        p_ref = ref.T @ ref
        assert np.abs(p_got - p_ref).max() < 1e-8

    def test_gram_branch_matches_svd_subspace(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((20, 50))  # d > n: Gram branch
        _, basis = principal_directions(x, 8)
        _, _, vt = np.linalg.svd(x - x.mean(0), full_matrices=False)
        p_got = basis.T @ basis
        p_ref = vt[:8].T @ vt[:8]
        assert np.abs(p_got - p_ref).max() < 1e-8
        assert np.abs(basis @ basis.T - np.eye(8)).max() < 1e-10

    def test_rank_deficient_completion(self):
        # 6 copies of 2 distinct rows: centered rank 1, ask for 4 directions
        base = np.array([[1.0, 2.0, 3.0, 4.0, 5.0], [5.0, 4.0, 3.0, 2.0, 1.0]])
        x = np.tile(base, (3, 1))[:6]
        # wide case to hit the Gram branch
        wide = np.hstack([x, np.zeros((6, 10))])
        _, basis = principal_directions(wide, 4)
        assert basis.shape == (4, 15)
        assert np.abs(basis @ basis.T - np.eye(4)).max() < 1e-8
