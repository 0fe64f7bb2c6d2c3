import numpy as np
import pytest

from nsrhc.errors import OptimizerError
from nsrhc.flow import FomModel, run_translated
from nsrhc.optimizer import (
    OptimizerTrace,
    SgOptions,
    evaluate_gradient,
    evaluate_objective,
    shift_controls,
    solve_open_loop,
)


def test_objective_zero(square):
    n = 10
    J, _ = evaluate_objective(square.model, np.zeros(square.space.n_v), np.zeros((n, square.model.n_controls)), 1e-2)
    assert J == 0.0


def test_control_term_exact(square):
    # v0 = 0 and one active amplitude a: control term beta/2 * T * a^2
    n, a, beta = 10, 0.7, 1e-2
    u = np.zeros((n, square.model.n_controls))
    u[:, 3] = a
    model = square.model
    J, tr = evaluate_objective(model, np.zeros(square.space.n_v), u, beta)
    w = np.full(n + 1, model.dt)
    w[[0, -1]] /= 2
    state = 0.5 * float(w @ square.disc.norm_h(tr.velocity) ** 2)
    assert J - state == pytest.approx(0.5 * beta * n * model.dt * a * a, rel=1e-13)


def test_gradient_zero(square):
    n = 6
    u = np.zeros((n, square.model.n_controls))
    _, tr = evaluate_objective(square.model, np.zeros(square.space.n_v), u, 1e-2)
    g, _ = evaluate_gradient(square.model, tr, u, 1e-2)
    assert np.all(g == 0)


def test_gradient_fd(square, rng):
    u = 0.3 * rng.standard_normal((8, square.model.n_controls))
    v0 = square.free_vector(rng, 0.5)
    beta = 1e-3
    _, tr = evaluate_objective(square.model, v0, u, beta)
    g, _ = evaluate_gradient(square.model, tr, u, beta)
    for _ in range(5):
        d = rng.standard_normal(u.shape)
        h = 1e-5
        fd = (evaluate_objective(square.model, v0, u + h * d, beta)[0] - evaluate_objective(square.model, v0, u - h * d, beta)[0]) / (2 * h)
        assert abs(fd - np.sum(g * d)) <= 1e-5 * abs(fd)


def test_open_loop_zero_state(square):
    u, tr, rep = solve_open_loop(square.model, np.zeros(square.space.n_v), 1e-2, 10)
    assert np.all(u == 0) and rep.iterations == 1 and rep.converged
    assert rep.gradient_norm == 0.0


def _dense_lq_solution(model, v0, beta, n):
    """Minimizer of the quadratic objective of the linearized dynamics from
    the normal equations, with the control-to-state map built column by
    column."""
    N = model.n_controls
    free = run_translated(model, v0, np.zeros((n, N))).velocity
    cols = []
    for k in range(n * N):
        e = np.zeros(n * N)
        e[k] = 1.0
        cols.append(run_translated(model, np.zeros_like(v0), e.reshape(n, N)).velocity)
    G = np.stack(cols, axis=-1)  # (n + 1, n_v, nN)
    M = model.disc.M.toarray()
    w = np.full(n + 1, model.dt)
    w[[0, -1]] /= 2
    H = beta * model.dt * np.eye(n * N)
    b = np.zeros(n * N)
    for i in range(n + 1):
        H += w[i] * G[i].T @ M @ G[i]
        b += w[i] * G[i].T @ (M @ free[i])
    return np.linalg.solve(H, -b).reshape(n, N)


def test_quadratic_problem_dense_kkt(tiny_square, rng):
    pb = tiny_square
    model = FomModel(pb.disc, pb.nu, pb.dt, pb.acts.B, pb.yhat, linearized=True)
    v0 = pb.free_vector(rng)
    n, beta = 5, 1e-3
    u_dense = _dense_lq_solution(model, v0, beta, n)
    u, _, rep = solve_open_loop(model, v0, beta, n, SgOptions(grad_tol=1e-12, max_iter=5000))
    assert rep.converged
    assert np.linalg.norm(u - u_dense) <= 1e-6 * np.linalg.norm(u_dense)


@pytest.mark.parametrize("variant", ["BB1", "BB2", "alternating"])
def test_converges_and_terminates(square, variant):
    opts = SgOptions(grad_tol=1e-7, max_iter=2000, bb_variant=variant)
    trace = OptimizerTrace()
    u, tr, rep = solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts, trace=trace)
    assert rep.converged and rep.gradient_norm <= opts.grad_tol
    J0 = trace.rows[0][1]
    assert rep.J < J0
    # nonmonotone acceptance: every accepted J below the max of the window
    Js = [r[1] for r in trace.rows]
    for k in range(1, len(Js)):
        window = Js[max(0, k - opts.memory) : k]
        assert Js[k] <= max(window)


def test_gll_sufficient_decrease(square):
    opts = SgOptions(grad_tol=1e-7, max_iter=300)
    trace = OptimizerTrace()
    solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts, trace=trace)
    dt = square.dt
    for k in range(1, len(trace.rows)):
        _, J, _, step = trace.rows[k]
        gprev = trace.rows[k - 1][2]
        ref = max(r[1] for r in trace.rows[max(0, k - opts.memory) : k])
        assert J <= ref - opts.sufficient_decrease * step * gprev**2 + 1e-15 * abs(ref)
    assert dt > 0


def test_warm_start_shape(square):
    with pytest.raises(ValueError):
        solve_open_loop(square.model, -square.yhat, 1e-2, 10, warm_start=np.zeros((3, 3)))


def test_warm_start_from_optimum(square):
    opts = SgOptions(grad_tol=1e-7, max_iter=2000)
    u, _, rep = solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts)
    u2, _, rep2 = solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts, warm_start=u)
    assert rep2.iterations == 1 and np.array_equal(u, u2)


def test_max_iter_report(square):
    u, _, rep = solve_open_loop(square.model, -square.yhat, 1e-2, 10, SgOptions(grad_tol=1e-14, max_iter=3))
    assert not rep.converged and rep.message == "max_iter reached" and rep.iterations == 3


def test_line_search_failure_raises(square):
    opts = SgOptions(grad_tol=1e-14, max_iter=50, max_backtracks=1, initial_step=1e8, alpha_max=1e8)
    with pytest.raises(OptimizerError) as exc:
        solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts)
    assert "iteration" in exc.value.diagnostics
    u, _, rep = solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts, raise_on_failure=False)
    assert rep.message == "line search failed"


def test_options_validation():
    with pytest.raises(ValueError):
        SgOptions(bb_variant="BB3")
    with pytest.raises(ValueError):
        SgOptions(sufficient_decrease=1.5)
    with pytest.raises(ValueError):
        SgOptions(memory=0)


def test_shift_controls():
    u = np.arange(12.0).reshape(6, 2)
    s = shift_controls(u, 2)
    np.testing.assert_array_equal(s[:4], u[2:])
    assert np.all(s[4:] == 0)
    assert np.all(shift_controls(u, 10) == 0)


def test_trace_records_trajectories(square, tmp_path):
    trace = OptimizerTrace(keep_trajectories=True)
    _, _, rep = solve_open_loop(square.model, -square.yhat, 1e-2, 6, SgOptions(max_iter=5, grad_tol=1e-14), trace=trace)
    assert len(trace.states) == len(trace.rows) == rep.iterations + 1
    assert trace.states[0].shape == (7, square.space.n_v)
    trace.write_csv(tmp_path / "trace.csv")
    assert (tmp_path / "trace.csv").read_text().startswith("iteration,J,grad_norm,step")


def test_relative_tolerance(square):
    trace = OptimizerTrace()
    opts = SgOptions(grad_tol=1e-14, grad_rtol=1e-2, max_iter=2000)
    _, _, rep = solve_open_loop(square.model, -square.yhat, 1e-2, 10, opts, trace=trace)
    g0 = trace.rows[0][2]
    assert rep.converged and rep.gradient_norm <= 1e-2 * g0
    # the previous iterate had not yet met the relative test
    assert trace.rows[-2][2] > 1e-2 * g0
    with pytest.raises(ValueError):
        SgOptions(grad_rtol=1.0)
