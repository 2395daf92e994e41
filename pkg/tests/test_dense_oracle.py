import numpy as np
import pytest

from nnlinsys import dense_oracle as do
from nnlinsys.operators import DenseAdapter, KronSumOracle, PoissonFactor
from nnlinsys.problems import PBN_SHIFTS, PBN_VALUES, build_pbn, build_poisson, build_queueing


def test_densify_identity_and_poisson():
    sysd = do.densify(DenseAdapter(np.eye(9), 3, 2, np.arange(9.0)))
    np.testing.assert_array_equal(sysd.matrix, np.eye(9))
    np.testing.assert_array_equal(sysd.rhs, np.arange(9.0))
    A = do.densify(KronSumOracle([PoissonFactor(3, 0.5)] * 2)).matrix
    assert np.all(np.diag(A) == -16)
    expect = np.kron(np.eye(3), np.diag([4.0, 4.0], 1) + np.diag([4.0, 4.0], -1))
    expect += np.kron(np.diag([4.0, 4.0], 1) + np.diag([4.0, 4.0], -1), np.eye(3))
    np.testing.assert_array_equal(A - np.diag(np.diag(A)), expect)


def test_densify_adapter_identity():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(16, 16)) * (rng.random((16, 16)) < 0.3)
    b = rng.normal(size=16)
    sysd = do.densify(DenseAdapter(M, 4, 2, b))
    np.testing.assert_array_equal(sysd.matrix, M)
    np.testing.assert_array_equal(sysd.rhs, b)


def test_densify_pbn_columns():
    A = do.densify(build_pbn(10).oracle).matrix
    T = np.eye(1024) - A
    assert np.max(np.abs(T.sum(axis=0) - 1)) <= 1e-12


def test_size_guard():
    with pytest.raises(ValueError):
        do.densify(build_poisson(3, 41).oracle)
    with pytest.raises(ValueError):
        do.DenseSystem(np.zeros((3, 2)), np.zeros(3))


def test_dense_solve_examples():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(do.dense_solve(do.DenseSystem(np.eye(3), b)), b)
    inst = build_poisson(1, 3)
    u = do.dense_solve(do.densify(inst.oracle))
    np.testing.assert_allclose(u, inst.truth(inst.grid.coords[0][:, None]), atol=1e-10)


def test_dense_solve_singular():
    A = do.densify(build_queueing(2, 4, s=[1, 2]).oracle).matrix
    with pytest.raises(np.linalg.LinAlgError):
        do.dense_solve(do.DenseSystem(A, np.ones(16)))


def test_nullvec_examples():
    v = do.dense_nullvec(np.diag([1.0, 1.0, 1.0, 0.0]))
    np.testing.assert_allclose(v, [0, 0, 0, 1], atol=1e-15)
    with pytest.raises(np.linalg.LinAlgError):
        do.dense_nullvec(np.eye(3))
    with pytest.raises(np.linalg.LinAlgError):
        do.dense_nullvec(np.diag([1.0, 0.0, 0.0]))


def test_nullvec_queueing_normalization():
    A = do.densify(build_queueing(2, 8, s=[2, 4]).oracle).matrix
    v = do.dense_nullvec(A)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert v[0] > 1e-12
    pinned = v / v[0]
    assert pinned[0] == 1.0
    assert np.linalg.norm(A @ pinned) <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(pinned)


def test_stationary_distribution_examples():
    np.testing.assert_allclose(do.stationary_distribution(np.eye(4)), np.ones(4))
    np.testing.assert_allclose(do.stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]])), np.ones(2))
    with pytest.raises(ValueError):
        do.stationary_distribution(np.array([[0.5, 0.2], [0.2, 0.5]]))


def test_stationary_distribution_pbn_sparse_and_dense_agree():
    import scipy.sparse as sp

    T = do.pbn_transition(8, PBN_SHIFTS, PBN_VALUES)
    a = do.stationary_distribution(T)
    b = do.stationary_distribution(sp.csr_matrix(T))
    np.testing.assert_allclose(a, b, rtol=1e-10)
    np.testing.assert_allclose(T @ a, a, atol=1e-9)


def test_dense_solution_through_matrix_free_residual():
    from nnlinsys.evaluation import all_indices

    inst = build_poisson(2, 6)
    sysd = do.densify(inst.oracle)
    u = do.dense_solve(sysd)
    # residual of the dense solution computed through the row oracle
    rows = inst.oracle.rows(all_indices(inst.grid.shape))
    Au = np.bincount(rows.row, weights=rows.vals * u[np.ravel_multi_index(tuple((rows.cols - 1).T), (6, 6))],
                     minlength=36)
    assert np.max(np.abs(inst.oracle.rhs(all_indices((6, 6)), rows) - Au)) <= 1e-10
