import numpy as np
import pytest

from nnlinsys import dense_oracle as do
from nnlinsys.evaluation import all_indices
from nnlinsys.grid import make_interior_uniform_grid
from nnlinsys.operators import (
    DenseAdapter,
    KronSumOracle,
    PBNOracle,
    PoissonFactor,
    QueueingFactor,
    QueueingOracle,
    RieszFactor,
    kron_sum_row,
    manufactured_rhs,
    pbn_row,
    queueing_mu,
    queueing_R_row,
    riesz_coefficients,
)
from nnlinsys.problems import PBN_SHIFTS, PBN_VALUES, build_poisson


def _factor_row(f, i):
    cols, vals = f.row_block(np.array([i]))
    return {int(c): float(v) for c, v in zip(cols[0], vals[0]) if v != 0}


def _dense_row_dict(A, N, d, k):
    r = do.lex_position(k, N)
    cols = all_indices((N,) * d)
    nz = np.nonzero(A[r])[0]
    return {tuple(int(i) for i in cols[j]): float(A[r, j]) for j in nz}


def _check_all_rows(op, A):
    N, d = op.N, op.d
    for k in all_indices(op.shape):
        row = op.row(k)
        assert len(row) <= op.nnz_per_row_bound
        got = row.as_dict()
        assert len(got) == len(row), "duplicate columns"
        assert all(v != 0 for v in got.values())
        assert got == _dense_row_dict(A, N, d, tuple(k))


# -- one-dimensional factors --------------------------------------------------------


def test_poisson_factor_rows():
    f = PoissonFactor(3, 0.5)
    assert _factor_row(f, 2) == {1: 4.0, 2: -8.0, 3: 4.0}
    assert _factor_row(f, 1) == {1: -8.0, 2: 4.0}
    assert _factor_row(PoissonFactor(1, 0.5), 1) == {1: -8.0}


def test_riesz_coefficients():
    t = riesz_coefficients(3, 1.0, 1.5, 1.0)
    assert t[0] == pytest.approx(-1 / np.sqrt(2), abs=1e-5)
    assert t[1] == pytest.approx(1.06066, abs=1e-5)
    assert 2 * t[1] == pytest.approx(2.12132, abs=1e-5)
    assert t[2] == pytest.approx(-0.25 * t[1])
    assert t[0] + t[2] == pytest.approx(-0.97227, abs=1e-5)


def test_riesz_factor_row_layout():
    f = RieszFactor(3, 1.0, 1.5, 1.0)
    t = f.t
    assert _factor_row(f, 1) == {1: 2 * t[1], 2: t[0] + t[2], 3: t[3]}


@pytest.mark.parametrize("alpha,c", [(1.0, 1.0), (2.0, 1.0), (1.5, 0.0)])
def test_riesz_rejects_degenerate_parameters(alpha, c):
    with pytest.raises(ValueError):
        RieszFactor(4, 0.5, alpha, c)


def test_queueing_mu():
    assert queueing_mu(100, 0.01, 8, 1.0) == pytest.approx(0.0025126, abs=1e-7)
    assert queueing_mu(100, 0.01, 8, 1.0) == (0.01 + 1 / 99) / 8


def test_queueing_factor_rows():
    lam, s, N = 0.3, 2, 5
    mu = queueing_mu(N, lam, s, 1.0)
    f = QueueingFactor(N, lam, s, mu)
    assert _factor_row(f, 1) == {1: lam, 2: -mu}
    assert _factor_row(f, N) == {N - 1: -lam, N: s * mu}
    assert _factor_row(f, 3) == {2: -lam, 3: lam + 2 * mu, 4: -2 * mu}
    with pytest.raises(ValueError):
        QueueingFactor(1, lam, s, mu)


# -- Kronecker sums -------------------------------------------------------------------


def test_kron_sum_poisson_examples():
    f = [PoissonFactor(3, 0.5)] * 2
    assert kron_sum_row(f, (2, 2)).as_dict() == {(2, 2): -16.0, (1, 2): 4.0, (3, 2): 4.0,
                                                 (2, 1): 4.0, (2, 3): 4.0}
    assert kron_sum_row(f, (1, 1)).as_dict() == {(1, 1): -16.0, (2, 1): 4.0, (1, 2): 4.0}


def test_kron_sum_one_dimension_is_factor():
    f = RieszFactor(5, 0.4, 1.3, 2.0)
    for i in range(1, 6):
        assert {k[0]: v for k, v in kron_sum_row([f], (i,)).as_dict().items()} == _factor_row(f, i)


def test_kron_sum_range_error():
    with pytest.raises(IndexError):
        kron_sum_row([PoissonFactor(3, 0.5)] * 2, (4, 1))


def test_nnz_bounds():
    assert KronSumOracle([PoissonFactor(10, 0.1)] * 4).nnz_per_row_bound == 9
    assert KronSumOracle([RieszFactor(10, 0.1, 1.5, 1)] * 3).nnz_per_row_bound == 28
    assert QueueingOracle(10, [0.01] * 3, [8, 16, 24], 1.0).nnz_per_row_bound == 7 + 6
    assert PBNOracle(10, PBN_SHIFTS, PBN_VALUES).nnz_per_row_bound == 5


# -- dense equality for every row ------------------------------------------------------


def test_poisson_rows_equal_dense():
    _check_all_rows(build_poisson(2, 4).oracle, do.poisson_matrix(2, 4))
    _check_all_rows(build_poisson(3, 3).oracle, do.poisson_matrix(3, 3))


def test_riesz_rows_equal_dense():
    h = 2 / 7
    op = KronSumOracle([RieszFactor(6, h, 1.5, 1.0)] * 2)
    _check_all_rows(op, do.riesz_matrix(2, 6))
    op = KronSumOracle([RieszFactor(4, 0.4, 1.2, 2.0), RieszFactor(4, 0.4, 1.7, 0.5)])
    dense = do.kron_sum_dense([_riesz_T(4, 0.4, 1.2, 2.0), _riesz_T(4, 0.4, 1.7, 0.5)])
    _check_all_rows(op, dense)


def _riesz_T(N, h, alpha, c):
    t = [c / (2 * np.cos(alpha * np.pi / 2) * h**alpha)]
    for i in range(1, N + 1):
        t.append((1 - (alpha + 1) / i) * t[-1])
    T = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            m = abs(i - j)
            T[i, j] = 2 * t[1] if m == 0 else (t[0] + t[2] if m == 1 else t[m + 1])
    return T


def test_riesz_matrix_symmetric():
    A = do.riesz_matrix(1, 4)
    np.testing.assert_array_equal(A, A.T)


@pytest.mark.parametrize("d,N,s", [(2, 8, (2, 4)), (3, 5, (1, 2, 3)), (2, 3, (8, 16))])
def test_queueing_rows_equal_dense(d, N, s):
    lam = [0.01 * (n + 1) for n in range(d)]
    op = QueueingOracle(N, lam, s, 1.0)
    _check_all_rows(op, do.queueing_matrix(d, N, 1.0, lam, s))


def test_queueing_R_examples():
    lam = (0.3, 0.7)
    R = queueing_R_row(3, lam, (1, 1), 1.0, (1, 2)).as_dict()
    dense = do.queueing_R_dense(3, lam)
    assert R == _dense_row_dict(dense, 3, 2, (1, 2))
    assert R[(1, 1)] == -0.3
    # (m=1, n=2) gives {(1,1): -lam1, (1,2): lam1}; (m=2, n=1) adds lam2 on the diagonal
    assert R[(1, 2)] == pytest.approx(0.3 + 0.7)
    assert queueing_R_row(3, lam, (1, 1), 1.0, (3, 3)).as_dict() == {}
    # row (m, N) for the term (m, n): single entry at (m, N-1)
    assert queueing_R_row(3, lam, (1, 1), 1.0, (1, 3)).as_dict() == {(1, 2): -0.3}


def test_queueing_rejects_d_above_N():
    with pytest.raises(ValueError):
        QueueingOracle(2, [0.01] * 3, [1, 2, 3], 1.0)


def test_queueing_columns_sum_to_zero():
    A = do.queueing_matrix(2, 8, 1.0, [0.01, 0.01], [2, 4])
    assert np.max(np.abs(A.sum(axis=0))) <= 1e-12


def test_pbn_rows_equal_dense():
    op = PBNOracle(10, PBN_SHIFTS, PBN_VALUES)
    _check_all_rows(op, do.pbn_matrix(10, PBN_SHIFTS, PBN_VALUES))


def test_pbn_transition_examples():
    op = PBNOracle(10, PBN_SHIFTS, PBN_VALUES)
    interior = 500
    col = op.transition_entries(_binary(interior, 10))
    got = {_flat(c): v for c, v in zip(col.cols, col.vals)}
    assert got == pytest.approx({interior + 13: 0.1, interior + 5: 0.4, interior - 2: 0.3, interior - 6: 0.2})
    col = op.transition_entries(_binary(1, 10))
    assert {_flat(c): v for c, v in zip(col.cols, col.vals)} == pytest.approx({14: 0.2, 6: 0.8})
    row = pbn_row(10, PBN_SHIFTS, PBN_VALUES, _binary(interior, 10)).as_dict()
    assert row[tuple(_binary(interior, 10))] == 1.0


def _binary(j, d):
    return [int(b) + 1 for b in np.binary_repr(j - 1, d)]


def _flat(idx):
    return int("".join(str(int(i) - 1) for i in idx), 2) + 1


def test_pbn_columns_stochastic():
    for d in (5, 8, 12):
        T = do.pbn_transition(d, PBN_SHIFTS, PBN_VALUES)
        assert np.max(np.abs(T.sum(axis=0) - 1)) <= 1e-12
        op = PBNOracle(d, PBN_SHIFTS, PBN_VALUES)
        for j in (1, 2, 2**d // 2, 2**d):
            assert op.transition_entries(_binary(j, d)).vals.sum() == pytest.approx(1.0, abs=1e-12)


def test_pbn_large_dimension_rows():
    d = 100
    op = PBNOracle(d, PBN_SHIFTS, PBN_VALUES)
    k = [1] * d
    row = op.row(k).as_dict()
    # state 1 reaches states 1 + 2 and 1 + 6 via T_{1,j}: columns j = i + k
    cols = {_flat(c) for c in row}
    assert cols == {1, 3, 7}
    last = [2] * d
    cols = {_flat(c) for c in op.row(last).as_dict()}
    assert cols == {2**d, 2**d - 13, 2**d - 5}


def test_pbn_rejects_bad_shifts():
    with pytest.raises(ValueError):
        PBNOracle(3, PBN_SHIFTS, PBN_VALUES)
    with pytest.raises(ValueError):
        PBNOracle(5, (2, 2), (1, 1))
    with pytest.raises(ValueError):
        PBNOracle(5, (3,), (1.0,))  # columns 1..3 receive nothing


# -- dense adapter and manufactured rhs ---------------------------------------------


def test_dense_adapter_identity_and_zero_row():
    A = np.eye(9)
    A[4, 4] = 0.0
    op = DenseAdapter(A, 3, 2)
    assert op.row((1, 2)).as_dict() == {(1, 2): 1.0}
    assert len(op.row((2, 2))) == 0


def test_dense_adapter_round_trip_poisson():
    op = build_poisson(2, 4).oracle
    sys = do.densify(op)
    adapter = DenseAdapter(sys.matrix, 4, 2, sys.rhs)
    for k in all_indices((4, 4)):
        assert adapter.row(k).as_dict() == op.row(k).as_dict()
        assert adapter.rhs_at(k) == sys.rhs[do.lex_position(k, 4)]


def test_dense_adapter_size_guard():
    with pytest.raises(ValueError):
        DenseAdapter(np.zeros((1, 1)), 2, 17)


def test_manufactured_rhs_examples():
    grid = make_interior_uniform_grid(1, 3, -1, 1)
    op = KronSumOracle([PoissonFactor(3, 0.5)])
    assert manufactured_rhs(op, lambda x: np.zeros(len(x)), grid, (2,)) == 0.0
    b2 = manufactured_rhs(op, lambda x: np.sin(np.pi * x[:, 0]), grid, (2,))
    assert b2 == pytest.approx(0.0, abs=1e-12)


def test_manufactured_rhs_equals_dense_matvec():
    inst = build_poisson(2, 4)
    sys = do.densify(inst.oracle)
    pts = inst.grid
    X = np.array([[pts.coords[0][i - 1], pts.coords[1][j - 1]] for i, j in all_indices((4, 4))])
    np.testing.assert_allclose(sys.rhs, sys.matrix @ inst.truth(X), rtol=1e-13, atol=1e-12)
