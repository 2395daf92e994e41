from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from nnlinsys.evaluation import make_test_set
from nnlinsys.fnn import Architecture, NetworkParams, forward, forward_with_grad, init_params
from nnlinsys.grid import make_explicit_grid, point_of, sample_indices
from nnlinsys.operators import DenseAdapter
from nnlinsys.problems import build_pbn, build_poisson, build_queueing, build_riesz
from nnlinsys.solver import (
    DivergenceError,
    MeanPenalty,
    NormPenalty,
    PinComponent,
    Plain,
    TrainConfig,
    TrainHistory,
    TrainRecord,
    batch_loss_and_grad,
    lr_schedule,
    sgd_step,
    solution_index_function,
    train,
)


def _fd_loss_grad(inst, theta, batch, loss, step=1e-6):
    g = np.empty(len(theta))
    for j in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up.data[j] += step
        dn.data[j] -= step
        lu, _ = batch_loss_and_grad(inst.oracle, inst.grid, up, batch, loss)
        ld, _ = batch_loss_and_grad(inst.oracle, inst.grid, dn, batch, loss)
        g[j] = (lu - ld) / (2 * step)
    return g


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


# -- learning rate and updates ------------------------------------------------------


def test_lr_schedule_endpoints_and_midpoint():
    cfg = TrainConfig(max_iters=50_000)
    assert lr_schedule(cfg, 0) == 1e-3
    assert lr_schedule(cfg, 50_000) == pytest.approx(1e-5, rel=1e-12)
    assert lr_schedule(cfg, 25_000) == pytest.approx(1e-4, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(lr_start=1e-5, lr_end=1e-3), dict(batch_size=0), dict(optimizer="lbfgs"),
                                dict(lr_end=0.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_sgd_step_examples():
    theta = NetworkParams(Architecture(2, 1, 1), np.array([1.0, 0.5, -0.3]))
    same = sgd_step(theta, NetworkParams(theta.arch), 0.7)
    np.testing.assert_array_equal(same.data, theta.data)
    grad = NetworkParams(theta.arch, np.array([2.0, 1.0, 1.0]))
    np.testing.assert_array_equal(sgd_step(theta, grad, 0.0).data, theta.data)
    assert sgd_step(theta, grad, 0.1).data[0] == pytest.approx(0.8)


# -- batch loss and gradient ----------------------------------------------------------


def test_scalar_system_by_hand():
    # 1x1 system A=[2], b=[4] on a single grid point
    grid = make_explicit_grid(1, [[0.5]])
    op = DenseAdapter(np.array([[2.0]]), 1, 1, np.array([4.0]))
    theta = init_params(Architecture(2, 1, 1), seed=0)
    theta.weights[0][:] = 1.0
    theta.biases[0][:] = 0.25
    theta.a[:] = 1.5
    phi, dphi = forward_with_grad(theta, [0.5])
    loss, grad = batch_loss_and_grad(op, grid, theta, [[1]])
    assert loss == pytest.approx((2 * phi - 4) ** 2)
    np.testing.assert_allclose(grad.data, 2 * (2 * phi - 4) * 2 * dphi.data)


def test_exact_solution_gives_zero_loss_and_gradient():
    # phi(x) = relu(x) on a 1-D grid; take b := A phi so the network is exact
    grid = make_explicit_grid(1, [[0.25, 0.5, 0.75]])
    A = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
    u = np.array([0.25, 0.5, 0.75])
    op = DenseAdapter(A, 3, 1, A @ u)
    theta = NetworkParams(Architecture(2, 1, 1), np.array([1.0, 0.0, 1.0]))
    loss, grad = batch_loss_and_grad(op, grid, theta, [[1], [2], [3], [2]])
    assert loss == 0.0
    assert np.all(grad.data == 0.0)


def _cases():
    return [
        ("poisson", build_poisson(2, 3), Plain()),
        ("riesz", build_riesz(2, 4), Plain()),
        ("queueing-pin", build_queueing(2, 5, s=[2, 3]), PinComponent((1, 1))),
        ("pbn-mean", build_pbn(6), MeanPenalty(1.0)),
        ("poisson-norm2", build_poisson(2, 3), NormPenalty(2.0, 0.5)),
        ("poisson-norm3", build_poisson(2, 3), NormPenalty(3.0, 1.0)),
        ("queueing-pin-eps", build_queueing(2, 4, s=[1, 2]), PinComponent((2, 3), 0.25)),
    ]


@pytest.mark.parametrize("name,inst,loss", _cases(), ids=[c[0] for c in _cases()])
def test_batch_gradient_matches_finite_differences(name, inst, loss):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    theta = init_params(Architecture(3, 4, inst.d), seed=rng)
    batch = sample_indices(rng, 6, inst.N, inst.d)
    _, grad = batch_loss_and_grad(inst.oracle, inst.grid, theta, batch, loss)
    fd = _fd_loss_grad(inst, theta, batch, loss)
    assert _rel_err(grad.data, fd) < 1e-5


def test_loss_is_nonnegative_and_penalties_add():
    inst = build_queueing(2, 5, s=[2, 3])
    theta = init_params(Architecture(3, 5, 2), seed=1)
    batch = sample_indices(np.random.default_rng(0), 20, 5, 2)
    plain, _ = batch_loss_and_grad(inst.oracle, inst.grid, theta, batch, Plain())
    pinned, _ = batch_loss_and_grad(inst.oracle, inst.grid, theta, batch, PinComponent((1, 1), 0.5))
    phi = forward(theta, point_of(inst.grid, (1, 1)))
    assert plain >= 0
    assert pinned == pytest.approx(plain + (phi - 1) ** 2 / 0.5)


def test_mean_penalty_value():
    inst = build_pbn(6)
    theta = init_params(Architecture(2, 3, 6), seed=2)
    batch = sample_indices(np.random.default_rng(1), 10, 2, 6)
    plain, _ = batch_loss_and_grad(inst.oracle, inst.grid, theta, batch, Plain())
    pen, _ = batch_loss_and_grad(inst.oracle, inst.grid, theta, batch, MeanPenalty(2.0))
    mean = np.mean([forward(theta, point_of(inst.grid, k)) for k in batch])
    assert pen == pytest.approx(plain + (mean - 1) ** 2 / 2.0)


def test_gradient_independent_of_dedup_chunking_and_threads():
    inst = build_poisson(3, 6)
    theta = init_params(Architecture(3, 8, 3), seed=3)
    batch = sample_indices(np.random.default_rng(4), 50, 6, 3)
    op, grid = inst.oracle, inst.grid
    l0, g0 = batch_loss_and_grad(op, grid, theta, batch)
    l1, g1 = batch_loss_and_grad(op, grid, theta, batch, dedup=False)
    l2, g2 = batch_loss_and_grad(op, grid, theta, batch, chunk_size=17)
    with ThreadPoolExecutor(3) as pool:
        l3, g3 = batch_loss_and_grad(op, grid, theta, batch, chunk_size=17, pool=pool)
        l4, g4 = batch_loss_and_grad(op, grid, theta, batch, chunk_size=17, pool=pool, reproducible=False)
    for lx, gx in ((l1, g1), (l2, g2), (l3, g3), (l4, g4)):
        assert lx == pytest.approx(l0, rel=1e-12)
        np.testing.assert_allclose(gx.data, g0.data, rtol=1e-10, atol=1e-12)
    # ordered reduction reproduces the serial chunked sum bit for bit
    assert l3 == l2
    np.testing.assert_array_equal(g3.data, g2.data)


def test_empty_batch_rejected():
    inst = build_poisson(1, 3)
    theta = init_params(Architecture(2, 2, 1), seed=0)
    with pytest.raises(ValueError):
        batch_loss_and_grad(inst.oracle, inst.grid, theta, np.zeros((0, 1), dtype=np.int64))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_divergence():
    inst = build_poisson(1, 3)
    theta = init_params(Architecture(2, 2, 1), seed=0)
    theta.a[:] = 1e308
    theta.weights[0][:] = 1e10
    with pytest.raises(FloatingPointError):
        batch_loss_and_grad(inst.oracle, inst.grid, theta, [[1], [2]])


# -- training -----------------------------------------------------------------------


def test_train_tiny_poisson_converges():
    inst = build_poisson(1, 3)
    cfg = TrainConfig(batch_size=3, max_iters=10_000, eval_every=5000, seed=0)
    _, hist = train(inst, Architecture(3, 20, 1), cfg)
    assert [r.iter for r in hist.records] == [5000, 10_000]
    assert hist.records[-1].loss < 1e-6


def test_train_is_deterministic():
    inst = build_poisson(2, 5)
    cfg = TrainConfig(batch_size=16, max_iters=50, eval_every=10, seed=7, optimizer="adam")
    a, ha = train(inst, Architecture(3, 6, 2), cfg)
    b, hb = train(inst, Architecture(3, 6, 2), cfg)
    np.testing.assert_array_equal(a.data, b.data)
    assert [r.loss for r in ha.records] == [r.loss for r in hb.records]
    c, _ = train(inst, Architecture(3, 6, 2), TrainConfig(batch_size=16, max_iters=50, seed=8, optimizer="adam"))
    assert not np.array_equal(a.data, c.data)


def test_train_threads_reproducible_mode_matches_itself():
    inst = build_poisson(2, 5)
    cfg = TrainConfig(batch_size=32, max_iters=5, seed=1, threads=3, chunk_size=20)
    a, _ = train(inst, Architecture(3, 6, 2), cfg)
    b, _ = train(inst, Architecture(3, 6, 2), cfg)
    np.testing.assert_array_equal(a.data, b.data)


def test_train_zero_iterations_returns_init():
    inst = build_poisson(1, 3)
    theta0 = init_params(Architecture(2, 3, 1), seed=5)
    theta, hist = train(inst, theta0.arch, TrainConfig(max_iters=0), theta0=theta0)
    np.testing.assert_array_equal(theta.data, theta0.data)
    assert len(hist) == 0


def test_train_records_metrics_and_checkpoint(tmp_path):
    inst = build_poisson(2, 4)
    T = make_test_set(inst, 100)
    ckpt = tmp_path / "theta.ckpt"
    seen = []
    _, hist = train(inst, Architecture(2, 5, 2), TrainConfig(batch_size=8, max_iters=7, eval_every=3),
                    test_set=T, checkpoint_path=ckpt, on_record=seen.append)
    assert [r.iter for r in hist.records] == [3, 6, 7]
    assert seen == hist.records
    assert all(r.e_inf >= r.e_l2 >= 0 and r.res_l2 >= 0 for r in hist.records)
    assert ckpt.exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_keeps_history():
    # plain SGD at the default rate blows up on the stiff 1/h^2 scaling
    inst = build_poisson(1, 100)
    cfg = TrainConfig(batch_size=1000, max_iters=1000, eval_every=1, seed=0)
    with pytest.raises(DivergenceError) as info:
        train(inst, Architecture(3, 100, 1), cfg)
    err = info.value
    assert err.iteration >= 1
    assert len(err.history) == err.iteration - 1
    assert err.theta is not None


def test_train_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        train(build_poisson(2, 3), Architecture(2, 3, 3), TrainConfig(max_iters=1))


def test_solution_index_function():
    inst = build_poisson(6, 10**4)
    theta = init_params(Architecture(3, 5, 6), seed=0)
    phi_hat = solution_index_function(theta, inst.grid)
    j = (10**4,) * 6
    assert phi_hat(j) == forward(theta, point_of(inst.grid, j))
    with pytest.raises(IndexError):
        phi_hat((10**4 + 1,) + (1,) * 5)


# -- history ----------------------------------------------------------------------------


def test_history_csv_round_trip(tmp_path):
    h = TrainHistory()
    h.append(TrainRecord(10, 0.5, 1e-3))
    h.append(TrainRecord(20, 0.25, 5e-4, 0.1, 0.05, 0.2))
    path = tmp_path / "h.csv"
    h.to_csv(path)
    text = path.read_text().splitlines()
    assert text[0] == "iter,loss,lr,e_inf,e_l2,res_l2"
    assert text[1].endswith(",,,")
    back = TrainHistory.from_csv(path)
    assert back.records == h.records


def test_history_rejects_non_increasing():
    h = TrainHistory([TrainRecord(5, 1.0, 1e-3)])
    with pytest.raises(ValueError):
        h.append(TrainRecord(5, 1.0, 1e-3))


@pytest.mark.parametrize("body", ["a,b\n", "iter,loss,lr,e_inf,e_l2,res_l2\n1,x,1,,,\n",
                                  "iter,loss,lr,e_inf,e_l2,res_l2\n1,2\n"])
def test_history_malformed_csv(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError):
        TrainHistory.from_csv(path)


@pytest.mark.parametrize("N,d,n", [(10, 5, 9000), (100, 3, 500), (2, 3, 40)])
def test_unique_points_table_matches_sort(N, d, n):
    from nnlinsys.solver import _unique_points

    idx = np.random.default_rng(N + d).integers(1, N + 1, (n, d))
    u, inv = _unique_points(idx, N)
    np.testing.assert_array_equal(u[inv], idx)
    u2, inv2 = _unique_points(idx, N, table_limit=0)
    np.testing.assert_array_equal(u, u2)
    np.testing.assert_array_equal(inv, inv2)
