import numpy as np
import pytest

from rtcouple.numerics import (NewtonReport, NoConvergenceError, SparseMatrix,
                               newton_solve, solve_sparse)


def test_sparse_from_triplets_sums_duplicates():
    m = SparseMatrix.from_triplets(2, [0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0])
    dense = m.to_dense()
    assert np.array_equal(dense, [[3.0, 0.0], [0.0, 5.0]])
    assert np.array_equal(m.diagonal(), [3.0, 5.0])


def test_sparse_matvec_matches_dense():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(7, 7))
    a[rng.random(size=a.shape) < 0.5] = 0.0
    m = SparseMatrix.from_dense(a)
    x = rng.normal(size=7)
    assert np.allclose(m.matvec(x), a @ x, rtol=1e-14, atol=1e-14)


def test_sparse_validate_rejects_bad_indices():
    with pytest.raises(ValueError):
        SparseMatrix.from_triplets(2, [0, 5], [0, 0], [1.0, 1.0])
    SparseMatrix.from_triplets(2, [0, 1], [1, 0], [1.0, 2.0]).validate()


def test_solve_sparse_small_dense_path():
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x = solve_sparse(SparseMatrix.from_dense(a), b)
    assert np.allclose(a @ x, b, atol=1e-14)


def test_solve_sparse_zero_rhs_shortcut():
    a = SparseMatrix.from_dense(np.eye(3))
    x = solve_sparse(a, np.zeros(3))
    assert np.array_equal(x, np.zeros(3))


def test_solve_sparse_large_iterative_path():
    # 1d laplacian, 200 unknowns: forces the iterative branch
    n = 200
    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i), cols.append(i), vals.append(2.0)
        if i > 0:
            rows.append(i), cols.append(i - 1), vals.append(-1.0)
        if i < n - 1:
            rows.append(i), cols.append(i + 1), vals.append(-1.0)
    m = SparseMatrix.from_triplets(n, rows, cols, vals)
    rng = np.random.default_rng(11)
    x_true = rng.normal(size=n)
    b = m.matvec(x_true)
    x = solve_sparse(m, b, tol=1e-13, max_iter=20000)
    assert np.max(np.abs(x - x_true)) < 1e-8


def test_solve_sparse_reports_breakdown():
    m = SparseMatrix.from_dense(np.zeros((2, 2)))
    with pytest.raises(NoConvergenceError):
        solve_sparse(m, np.array([1.0, 0.0]))


def test_newton_scalar_quadratic():
    x, report = newton_solve(lambda x: np.array([x[0] ** 2 - 4.0]),
                             lambda x: np.array([[2.0 * x[0]]]),
                             np.array([3.0]), tol=1e-14)
    assert x[0] == pytest.approx(2.0, abs=1e-12)
    assert isinstance(report, NewtonReport)
    assert report.converged
    assert report.final_residual_norm <= 1e-14


def test_newton_converged_initial_guess_takes_zero_iterations():
    x, report = newton_solve(lambda x: x - 1.0,
                             lambda x: np.eye(1),
                             np.array([1.0]), tol=1e-12)
    assert report.iterations == 0
    assert report.converged


def test_newton_quadratic_convergence_rate():
    # for x^2 - 2 from x0=2 every full step is accepted, so the residual
    # callback sees exactly the iterate sequence
    seen = []

    def res(x):
        seen.append(float(x[0]))
        return np.array([x[0] ** 2 - 2.0])

    def jac(x):
        return np.array([[2.0 * x[0]]])

    newton_solve(res, jac, np.array([2.0]), tol=1e-14, max_iter=50)
    errs = [abs(s - np.sqrt(2.0)) for s in seen]
    # e_{k+1} <= C e_k^2 with modest constant
    for e0, e1 in zip(errs, errs[1:]):
        if e0 > 1e-7:
            assert e1 <= 2.0 * e0 ** 2


def test_newton_damping_handles_overshoot():
    # steep tanh: full steps oscillate, damping must rescue it
    def res(x):
        return np.tanh(10.0 * x)

    def jac(x):
        return np.diag(10.0 / np.cosh(10.0 * x) ** 2)

    x, report = newton_solve(res, jac, np.array([0.4]), tol=1e-12,
                             max_iter=60)
    assert abs(x[0]) < 1e-12
    assert report.converged


def test_newton_max_step_caps_update():
    seen = []

    def res(x):
        seen.append(x.copy())
        return x - 100.0

    x, _ = newton_solve(res, lambda x: np.eye(1), np.array([0.0]),
                        tol=1e-12, max_iter=200, max_step=1.0)
    # every accepted iterate moves at most 1.0
    iterates = [s[0] for s in seen]
    for a, b in zip(iterates, iterates[1:]):
        assert abs(b - a) <= 1.0 + 1e-12
    assert x[0] == pytest.approx(100.0, abs=1e-10)


def test_newton_failure_carries_report():
    # exp(x) has no root and a nonsingular jacobian, so the solver walks
    # until max_iter and must report that honestly
    def res(x):
        return np.exp(x)

    def jac(x):
        return np.diag(np.exp(x))

    with pytest.raises(NoConvergenceError) as err:
        newton_solve(res, jac, np.array([1.0]), tol=1e-12, max_iter=8)
    assert err.value.iterations == 8
    assert err.value.residual_norm > 0.0
    assert not err.value.report.converged


def test_newton_rejects_nonfinite_residual_at_start():
    with pytest.raises(NoConvergenceError):
        newton_solve(lambda x: np.array([np.nan]),
                     lambda x: np.eye(1), np.array([1.0]))
