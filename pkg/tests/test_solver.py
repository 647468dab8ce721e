import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cranopt.cones import ConeSpec, cone_violation
from cranopt.io import program_from_dict, program_to_dict, read_program, write_program
from cranopt.randprog import random_feasible_socp
from cranopt.solver import (
    ConeProgram,
    Iterate,
    SolverSettings,
    Status,
    check_termination,
    equilibrate,
    factorize,
    prepare,
    solve,
)


def lp_one_var():
    return ConeProgram(sp.csc_matrix([[-1.0]]), [-1.0], [1.0], ConeSpec(nonneg=1))


def test_one_variable_lp():
    out = solve(lp_one_var())
    assert out.status is Status.OPTIMAL
    assert out.x[0] == pytest.approx(1.0, abs=1e-3)
    assert out.objective == pytest.approx(1.0, abs=1e-3)


def test_contradictory_constraints_certified():
    # nu >= 1 and -nu >= 0
    prog = ConeProgram(sp.csc_matrix([[-1.0], [1.0]]), [-1.0, 0.0], [0.0], ConeSpec(nonneg=2))
    out = solve(prog)
    assert out.status is Status.PRIMAL_INFEASIBLE
    y = out.certificate
    assert np.all(y >= -1e-9) and prog.b @ y < 0
    assert np.abs(prog.A.T @ y).max() <= 1e-4 * np.abs(y).max()
    assert out.objective == np.inf


def test_unbounded_certified():
    # minimize -nu subject to nu >= 0
    prog = ConeProgram(sp.csc_matrix([[-1.0]]), [0.0], [-1.0], ConeSpec(nonneg=1))
    out = solve(prog)
    assert out.status is Status.DUAL_INFEASIBLE
    assert prog.c @ out.certificate < 0
    assert out.objective == -np.inf


def test_equality_constrained_soc():
    # minimize t s.t. t >= ||(x1, x2)||, x1 + x2 = 2  -> t = sqrt(2)
    A = sp.csc_matrix(np.array([[0.0, 1, 1], [-1, 0, 0], [0, -1, 0], [0, 0, -1]]))
    prog = ConeProgram(A, [2.0, 0, 0, 0], [1.0, 0, 0], ConeSpec(zero=1, soc=(3,)))
    out = solve(prog, SolverSettings(eps_primal=1e-8, eps_dual=1e-8, eps_gap=1e-8))
    assert out.objective == pytest.approx(np.sqrt(2), abs=1e-6)
    np.testing.assert_allclose(out.x[1:], [1.0, 1.0], atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_random_socp_matches_tight_solve_and_known_optimum(seed):
    prog, x, y, s = random_feasible_socp(np.random.default_rng(seed))
    loose = solve(prog)
    tight = solve(prog, SolverSettings(eps_primal=1e-9, eps_dual=1e-9, eps_gap=1e-9, max_iters=10**6))
    assert loose.status is Status.OPTIMAL and tight.status is Status.OPTIMAL
    ref = prog.c @ x
    assert tight.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
    assert abs(loose.objective - tight.objective) <= 5e-3 * abs(tight.objective)
    assert max(loose.residuals.primal, loose.residuals.dual, loose.residuals.gap) <= 1e-4


def test_optimal_iterate_in_cones_and_complementary():
    prog, *_ = random_feasible_socp(np.random.default_rng(7))
    st_ = SolverSettings()
    out = solve(prog, st_)
    assert cone_violation(out.s, prog.cone) <= 1e-6
    assert cone_violation(out.y, prog.cone, dual=True) <= 1e-6
    assert out.s @ out.y <= st_.eps_gap * (1 + abs(out.objective)) * 10


def test_factorize_identity_when_A_zero():
    prog = ConeProgram(sp.csc_matrix((1, 1)), [0.0], [0.0], ConeSpec(nonneg=1))
    cache = factorize(prog)
    w = np.array([0.3, -0.7, 0.0])
    np.testing.assert_allclose(cache.solve(w)[:2], w[:2], rtol=1e-7)


def test_factorize_multiply_back(rng):
    prog, *_ = random_feasible_socp(rng)
    cache = factorize(prog)
    w = rng.standard_normal(prog.n + prog.m + 1)
    back = cache.apply(cache.solve(w))
    assert np.linalg.norm(back - w) <= 1e-10 * np.linalg.norm(w)


def test_equilibration_fixed_point():
    A = sp.csc_matrix(np.array([[1.0, -1.0], [0.5, 1.0]]))
    sc = equilibrate(ConeProgram(A, [1.0, 1.0], [1.0, 0.0], ConeSpec(nonneg=2)))
    np.testing.assert_allclose(sc.row_scale, 1.0)
    np.testing.assert_allclose(sc.col_scale, 1.0)


def test_equilibration_badly_scaled():
    A = sp.csc_matrix(np.diag([1e6, 1e-6]))
    sc = equilibrate(ConeProgram(A, [1.0, 1.0], [1.0, 1.0], ConeSpec(nonneg=2)))
    rows = np.abs(sc.program.A.toarray()).max(axis=1)
    assert np.all((rows >= 0.5) & (rows <= 2.0))


def test_equilibration_roundtrip_and_soc_sharing(rng):
    prog, *_ = random_feasible_socp(rng)
    sc = equilibrate(prog)
    back = sc.unscale_program()
    np.testing.assert_allclose(back.A.toarray(), prog.A.toarray(), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(back.b, prog.b, rtol=1e-12)
    np.testing.assert_allclose(back.c, prog.c, rtol=1e-12)
    for idx in prog.cone.soc_groups:
        for rows in idx:
            assert np.ptp(sc.row_scale[rows]) == 0.0


def test_termination_at_exact_kkt_point(rng):
    prog, x, y, s = random_feasible_socp(rng)
    status, res, _ = check_termination(Iterate(x, y, s, 1.0, 0.0), prog, SolverSettings())
    assert status is Status.OPTIMAL and res.worst() < 1e-12


def test_termination_continues_on_large_gap():
    prog = lp_one_var()
    # feasible pair with c^T x + b^T y = 11 - 1 = 10
    status, res, _ = check_termination(Iterate(np.array([11.0]), np.array([1.0]), np.array([10.0]), 1.0, 0.0),
                                       prog, SolverSettings())
    assert status is None and res.gap > 0.5


def test_termination_farkas_certificate():
    # x >= 1, x <= 0 : y = (1, 1) gives A^T y = 0, b^T y = -1
    prog = ConeProgram(sp.csc_matrix([[-1.0], [1.0]]), [-1.0, 0.0], [0.0], ConeSpec(nonneg=2))
    y = np.array([1.0, 1.0 + 1e-9])
    status, _, cert = check_termination(Iterate(np.zeros(1), y, np.zeros(2), 0.0, 1.0), prog, SolverSettings())
    assert status is Status.PRIMAL_INFEASIBLE
    assert prog.b @ cert == pytest.approx(-1.0)


def test_warm_start_from_solution(rng):
    prog, *_ = random_feasible_socp(rng)
    out = solve(prog)
    again = solve(prog, SolverSettings(warm_start=out))
    assert again.status is Status.OPTIMAL and again.iterations <= 25


def test_determinism_and_workspace_reuse(rng):
    prog, *_ = random_feasible_socp(rng)
    a = solve(prog)
    b = solve(prog)
    ws = prepare(prog, SolverSettings())
    c = solve(prog, SolverSettings(), workspace=ws)
    for o in (b, c):
        assert o.iterations == a.iterations
        assert np.array_equal(o.x, a.x) and np.array_equal(o.y, a.y) and np.array_equal(o.s, a.s)


def test_workspace_mismatch_rejected(rng):
    prog, *_ = random_feasible_socp(rng)
    ws = prepare(lp_one_var())
    with pytest.raises(ValueError):
        solve(prog, workspace=ws)


def test_running_min_residual_non_increasing(rng):
    prog, *_ = random_feasible_socp(rng)
    out = solve(prog, SolverSettings(record_history=True))
    run = np.minimum.accumulate(out.history)
    assert np.all(np.diff(run) <= 0) and run[-1] <= 1e-4


def test_max_iters_reported():
    prog, *_ = random_feasible_socp(np.random.default_rng(3))
    out = solve(prog, SolverSettings(max_iters=3))
    assert out.status is Status.MAX_ITERS and out.iterations == 3


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_scaling_invariance(seed, a, c):
    prog, *_ = random_feasible_socp(np.random.default_rng(seed), n=10, m=20, n_soc=2)
    scaled = ConeProgram(prog.A * a, prog.b * a, prog.c * c, prog.cone)
    s1 = SolverSettings(eps_primal=1e-7, eps_dual=1e-7, eps_gap=1e-7, max_iters=50000)
    o1, o2 = solve(prog, s1), solve(scaled, s1)
    assert o1.status is o2.status is Status.OPTIMAL
    np.testing.assert_allclose(o2.x, o1.x, atol=1e-4 * (1 + np.abs(o1.x).max()))


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(alpha=2.0)
    with pytest.raises(ValueError):
        SolverSettings(eps_primal=0.0)
    with pytest.raises(ValueError):
        SolverSettings(max_iters=-1)
    s = SolverSettings(eps_primal=1e-6)
    assert s.infeas_tol == 1e-6
    assert dataclasses.replace(s, eps_primal=1e-3).infeas_tol == 1e-3


def test_program_validation():
    with pytest.raises(ValueError):
        ConeProgram(sp.csc_matrix((2, 1)), [0.0], [0.0], ConeSpec(nonneg=2))
    with pytest.raises(ValueError):
        ConeProgram(sp.csc_matrix((1, 1)), [0.0], [0.0], ConeSpec(nonneg=2))
    with pytest.raises(ValueError):
        ConeProgram(sp.csc_matrix([[np.nan]]), [0.0], [0.0], ConeSpec(nonneg=1))


def test_program_json_roundtrip(tmp_path, rng):
    prog, *_ = random_feasible_socp(rng)
    path = tmp_path / "p.json"
    write_program(prog, path)
    back = read_program(path)
    assert (back.A != prog.A).nnz == 0
    assert np.array_equal(back.b, prog.b) and np.array_equal(back.c, prog.c) and back.cone == prog.cone


def test_program_json_rejects_bad_indices():
    d = program_to_dict(lp_one_var())
    d["A"]["rows"] = [5]
    with pytest.raises(ValueError):
        program_from_dict(d)
    with pytest.raises(ValueError):
        program_from_dict({"m": 1})
