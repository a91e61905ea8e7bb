import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_index1_pencil
from imor.errors import IndexExceededError, RankDeficiencyError, SingularPencilError
from imor.pencil import (
    build_projector_chain,
    equilibrate,
    finite_spectrum,
    is_nonsingular,
    kernel_pair,
    left_inverse,
    match_spectra,
    matrix_rank,
)


def low_rank(seed, m, n, r, sparse=False):
    rng = np.random.default_rng(seed)
    if sparse:
        L = sp.random(m, r, density=0.5, random_state=seed, data_rvs=lambda k: rng.integers(-3, 4, k))
        R = sp.random(r, n, density=0.5, random_state=seed + 1, data_rvs=lambda k: rng.integers(-3, 4, k))
        return (L @ R).tocsr()
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


@given(st.integers(0, 10**6), st.integers(1, 12), st.integers(1, 12), st.integers(0, 12),
       st.sampled_from(["svd", "lu"]))
def test_kernel_pair_bases_and_projectors(seed, m, n, r, method):
    r = min(r, m, n)
    M = low_rank(seed, m, n, r, sparse=method == "lu")
    q, p = kernel_pair(M, method=method)
    Md = M.toarray() if sp.issparse(M) else M
    qb, ql = np.asarray(sp.csr_matrix(q.basis).toarray()), np.asarray(sp.csr_matrix(q.left_inverse).toarray())
    pb, pl = np.asarray(sp.csr_matrix(p.basis).toarray()), np.asarray(sp.csr_matrix(p.left_inverse).toarray())
    assert q.dim + p.dim == n
    assert q.dim == n - np.linalg.matrix_rank(Md)
    scale = max(np.abs(Md).max(), 1.0)
    assert np.abs(Md @ qb).max(initial=0) <= 1e-9 * scale * max(np.abs(qb).max(initial=1), 1)
    assert np.allclose(ql @ qb, np.eye(q.dim), atol=1e-10)
    assert np.allclose(pl @ pb, np.eye(p.dim), atol=1e-10)
    Q, P = qb @ ql, pb @ pl
    assert np.allclose(Q + P, np.eye(n), atol=1e-9)
    assert np.allclose(Q @ Q, Q, atol=1e-9)


@given(st.integers(0, 10**6), st.integers(2, 10))
def test_rank_ignores_row_scaling(seed, n):
    rng = np.random.default_rng(seed)
    M = low_rank(seed, n, n, max(1, n // 2))
    D = np.diag(10.0 ** rng.uniform(-6, 6, n))
    assert matrix_rank(D @ M) == matrix_rank(M) == np.linalg.matrix_rank(M)


def test_equilibrate_keeps_zero_rows_and_kernel():
    M = np.array([[1e8, 2e8, 0.0], [0.0, 0.0, 0.0], [1e-6, 0.0, 3e-6]])
    Me = equilibrate(M, columns=False)
    assert np.all(Me[1] == 0)
    assert np.allclose(np.abs(Me).max(axis=1), [1, 0, 1])
    q, _ = kernel_pair(M)
    assert np.allclose(Me @ q.basis, 0, atol=1e-12)
    Ms = equilibrate(sp.csr_matrix(M))
    assert np.allclose(Ms.toarray(), equilibrate(M))


def test_is_nonsingular_badly_scaled():
    M = np.diag([1e-12, 1.0, 1e12])
    assert is_nonsingular(M)
    assert is_nonsingular(sp.csr_matrix(M), method="lu")
    assert not is_nonsingular(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_left_inverse():
    B = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
    assert np.allclose(left_inverse(B) @ B, np.eye(2))
    with pytest.raises(RankDeficiencyError):
        left_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_chain_two_by_two():
    E = np.diag([1.0, 0.0])
    chain = build_projector_chain(E, np.eye(2))
    assert chain.index == 1
    assert np.allclose(chain.stages[1].E, np.diag([1.0, -1.0]))
    assert np.allclose(chain.stages[0].Q, np.diag([0.0, 1.0]))


def test_chain_index_zero():
    chain = build_projector_chain(np.eye(3), -np.eye(3))
    assert chain.index == 0


def test_chain_index_two_and_limit():
    # x1' = x2, 0 = x1 : Hessenberg index 2
    E = np.diag([1.0, 0.0])
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert build_projector_chain(E, A).index == 2
    with pytest.raises(IndexExceededError):
        build_projector_chain(E, A, max_index=1)


def test_singular_pencil_detected():
    E = np.diag([1.0, 0.0])
    with pytest.raises(SingularPencilError):
        build_projector_chain(E, np.diag([1.0, 0.0]))


@given(st.integers(0, 10**6), st.integers(2, 25), st.data())
def test_chain_identities_random_index1(seed, n, data):
    k = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(seed)
    E, A = random_index1_pencil(rng, n, k)
    chain = build_projector_chain(E, A)
    assert chain.index == 1
    Q0, P0 = chain.stages[0].Q, chain.stages[0].P
    E1, A1 = chain.stages[1].E, chain.stages[1].A
    tol = 1e-9
    assert np.abs(Q0 @ Q0 - Q0).max() < tol
    assert np.abs(E @ Q0).max() < tol * np.abs(E).max()
    assert np.abs(E1 @ P0 - E).max() < tol * np.abs(E).max()
    assert np.abs(A1 - E1 @ Q0 - A).max() < tol * np.abs(A).max()
    assert np.linalg.matrix_rank(E1) == n


@given(st.integers(0, 10**6), st.integers(2, 20), st.data())
def test_finite_spectrum_equals_schur_complement(seed, n, data):
    # oracle: for E = diag(I, 0), the finite eigenvalues are those of A11 - A12 A22^-1 A21
    k = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A[k:, k:] += 3 * np.eye(n - k)
    E = np.zeros((n, n))
    E[:k, :k] = np.eye(k)
    S = A[:k, :k] - A[:k, k:] @ la.solve(A[k:, k:], A[k:, :k])
    lam = finite_spectrum(E, A)
    assert lam.size == k
    assert match_spectra(np.linalg.eigvals(S), lam) < 1e-8


def test_finite_spectrum_invariant_under_equivalence(rng):
    E, A = random_index1_pencil(rng, 12, 7)
    U, W = rng.standard_normal((12, 12)), rng.standard_normal((12, 12))
    assert match_spectra(finite_spectrum(E, A), finite_spectrum(U @ E @ W, U @ A @ W)) < 1e-7


def test_match_spectra():
    a = np.array([1j, -1j, 2.0])
    assert match_spectra(a, a[::-1]) == 0.0
    assert match_spectra(a, a[:2]) == np.inf
    assert match_spectra([], []) == 0.0
    assert match_spectra([2.0], [2.2]) == pytest.approx(0.1)


def test_sparse_chain_matches_dense(rng):
    E, A = random_index1_pencil(rng, 15, 9)
    d = build_projector_chain(E, A, method="svd")
    s = build_projector_chain(sp.csr_matrix(np.where(np.abs(E) > 1e-14, E, 0)), sp.csr_matrix(A), method="lu")
    assert d.index == s.index == 1
    assert d.ranks[0] == s.ranks[0] == 9
