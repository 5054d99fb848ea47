"""Tests for the nullspace reduction and the dual active-set solver.

The 4-row, 3-node problem used throughout has a closed form. With nodes
root/{rows 0,1}/{rows 2,3}, response (-1,-1,1,1), and root mean 0, any
feasible weight vector is (1-s, s, s) with s in [0, 1-root_floor], and the
objective 4(1-s)^2 + nu((1-s)^2 + 2 s^2) is minimized at
s* = (4+nu)/(4+3nu). For nu = 0.001 the root floor binds (1-s* < 0.001);
for nu = 0.01 the optimum is interior with root weight 0.02/4.03.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse

from conftest import collect_qp_instances
from oracles import project_polyhedron, projected_gradient
from ruleblend.data import dataset_from_arrays
from ruleblend.errors import DataError, SolverError
from ruleblend.matrices import build_design
from ruleblend.nodegen import Interval, NodeRule, NodeSet
from ruleblend.qp import (QpProblem, assemble_reduced, kkt_residuals,
                          nullspace_basis, recover_weights, solve_qp)


def two_block_design():
    root = NodeRule((), 0.0, 4, np.array([0, 1, 2, 3]))
    low = NodeRule(((0, Interval(-np.inf, 2.5)),), -1.0, 2, np.array([0, 1]))
    high = NodeRule(((0, Interval(2.5, np.inf)),), 1.0, 2, np.array([2, 3]))
    ds = dataset_from_arrays(np.array([1.0, 2.0, 3.0, 4.0])[:, None],
                             np.array([-1.0, -1.0, 1.0, 1.0]))
    return build_design(NodeSet([root, low, high]), ds), ds


# ---- nullspace basis --------------------------------------------------------


def test_nullspace_hand_case():
    design, _ = two_block_design()
    basis = nullspace_basis(design.indicator)
    assert basis.shape == (3, 1)
    direction = np.array([1.0, -1.0, -1.0]) / np.sqrt(3.0)
    assert abs(abs(float(basis[:, 0] @ direction)) - 1.0) < 1e-12


def test_nullspace_identity_indicator_is_trivial():
    basis = nullspace_basis(np.eye(5))
    assert basis.shape == (5, 0)


def test_nullspace_accepts_sparse_and_dense():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    b_dense = nullspace_basis(a)
    b_sparse = nullspace_basis(sparse.csc_matrix(a))
    assert b_dense.shape == b_sparse.shape == (2, 1)


def test_nullspace_properties_random():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        q = int(rng.integers(1, 9))
        a = (rng.random((n, q)) < 0.5).astype(float)
        basis = nullspace_basis(a)
        rank = np.linalg.matrix_rank(a)
        assert basis.shape == (q, q - rank)
        if basis.shape[1]:
            assert_allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-12)
            assert np.max(np.abs(a @ basis)) < 1e-10


def test_nullspace_rejects_vectors():
    with pytest.raises(DataError):
        nullspace_basis(np.ones(3))


# ---- assembly ---------------------------------------------------------------


def test_assemble_shapes_and_formulas():
    design, ds = two_block_design()
    basis = nullspace_basis(design.indicator)
    nu = 0.001
    problem = assemble_reduced(design, basis, ds.response, nu=nu)
    mb = design.node_mean_dense() @ basis
    assert_allclose(problem.hessian, mb.T @ mb + nu * np.eye(1), atol=1e-14)
    assert_allclose(problem.linear,
                    -(mb.T @ (ds.response - design.means[0])) + nu * basis[0, :],
                    atol=1e-14)
    # one inequality row per node, bound root_floor - 1 on the root row
    assert problem.constraint_matrix.shape == (3, 1)
    assert_allclose(problem.constraint_matrix, basis, atol=1e-15)
    assert_allclose(problem.constraint_bounds, [0.001 - 1.0, 0.0, 0.0])


def test_assemble_budget_row_only_for_finite_lam():
    design, ds = two_block_design()
    basis = nullspace_basis(design.indicator)
    free = assemble_reduced(design, basis, ds.response)
    capped = assemble_reduced(design, basis, ds.response, lam=1.5)
    assert free.n_constraints == 3
    assert capped.n_constraints == 4
    assert_allclose(capped.constraint_matrix[3], -basis.sum(axis=0), atol=1e-15)
    assert capped.constraint_bounds[3] == pytest.approx(1.0 - 1.5)


def test_assemble_validation():
    design, ds = two_block_design()
    basis = nullspace_basis(design.indicator)
    with pytest.raises(DataError):
        assemble_reduced(design, basis, ds.response, nu=0.0)
    with pytest.raises(DataError):
        assemble_reduced(design, basis, ds.response, lam=0.5)
    with pytest.raises(DataError):
        assemble_reduced(design, basis, ds.response, root_floor=1.0)
    with pytest.raises(DataError):
        assemble_reduced(design, basis, ds.response[:3])
    with pytest.raises(DataError):
        assemble_reduced(design, basis[:2], ds.response)
    with pytest.raises(DataError):
        assemble_reduced(design, np.empty((3, 0)), ds.response)


# ---- closed-form solutions --------------------------------------------------


def closed_form_s(nu):
    return (4.0 + nu) / (4.0 + 3.0 * nu)


def solve_two_block(nu):
    design, ds = two_block_design()
    basis = nullspace_basis(design.indicator)
    problem = assemble_reduced(design, basis, ds.response, nu=nu)
    solution = solve_qp(problem)
    assert solution.status == "converged"
    return recover_weights(solution.d, basis), solution


def test_two_block_floor_binds_at_default_nu():
    # s* = 4.001/4.003 puts the root below its floor, so the floor is active
    assert 1.0 - closed_form_s(0.001) < 0.001
    w, solution = solve_two_block(0.001)
    assert_allclose(w, [0.001, 0.999, 0.999], atol=1e-10)
    assert solution.kkt["stationarity"] < 1e-10
    assert solution.multipliers[0] > 0.0  # the floor row carries the dual


def test_two_block_interior_at_larger_nu():
    s = closed_form_s(0.01)
    assert 1.0 - s > 0.001
    w, solution = solve_two_block(0.01)
    assert_allclose(w, [1.0 - s, s, s], atol=1e-12)
    assert w[0] == pytest.approx(0.02 / 4.03, abs=1e-12)
    assert np.all(solution.multipliers == 0.0)


def test_two_block_budget_endpoint_forces_root():
    design, ds = two_block_design()
    basis = nullspace_basis(design.indicator)
    problem = assemble_reduced(design, basis, ds.response, lam=1.0)
    solution = solve_qp(problem)
    assert solution.status == "converged"
    w = recover_weights(solution.d, basis)
    assert_allclose(w, [1.0, 0.0, 0.0], atol=1e-10)
    assert w[1] == 0.0 and w[2] == 0.0  # dust is snapped to exact zeros


# ---- solve_qp on direct problems --------------------------------------------


def test_solve_unconstrained_matches_linear_solve():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 3))
    h = a.T @ a + 0.1 * np.eye(3)
    g = rng.normal(size=3)
    problem = QpProblem(h, g, np.empty((0, 3)), np.empty(0))
    solution = solve_qp(problem)
    assert solution.status == "converged"
    assert_allclose(solution.d, np.linalg.solve(h, -g), atol=1e-10)


def test_solve_one_active_bound():
    # minimize d^2 - 2d subject to d <= 0.5: optimum at the bound, dual 1
    problem = QpProblem(np.array([[1.0]]), np.array([-1.0]),
                        np.array([[-1.0]]), np.array([-0.5]))
    solution = solve_qp(problem)
    assert solution.status == "converged"
    assert solution.d[0] == pytest.approx(0.5, abs=1e-12)
    assert solution.multipliers[0] == pytest.approx(1.0, abs=1e-10)


def test_kkt_residuals_flag_perturbations():
    problem = QpProblem(np.array([[1.0]]), np.array([-1.0]),
                        np.array([[-1.0]]), np.array([-0.5]))
    good = kkt_residuals(problem, np.array([0.5]), np.array([1.0]))
    assert max(good["stationarity"], good["feasibility"], good["comp_slack"]) < 1e-12
    shifted = kkt_residuals(problem, np.array([0.3]), np.array([1.0]))
    assert shifted["stationarity"] > 0.1
    infeasible = kkt_residuals(problem, np.array([0.7]), np.array([0.0]))
    assert infeasible["feasibility"] == pytest.approx(0.2)


# ---- recover_weights --------------------------------------------------------


def test_recover_weights_snaps_dust():
    basis = np.array([[0.0], [1.0], [-1.0]])
    w = recover_weights(np.array([1e-10]), basis)
    assert w[0] == 1.0 and w[1] == 0.0 and w[2] == 0.0


def test_recover_weights_rejects_real_negatives():
    basis = np.array([[0.0], [-1.0], [1.0]])
    with pytest.raises(SolverError):
        recover_weights(np.array([1e-3]), basis)


def test_recover_weights_zeroes_tolerable_negatives():
    basis = np.array([[0.0], [-1.0], [1.0]])
    w = recover_weights(np.array([1e-8]), basis)
    assert w[1] == 0.0 and w[2] == pytest.approx(1e-8)


def test_recover_weights_enforces_root_floor():
    basis = np.array([[-1.0], [0.5], [0.5]])
    with pytest.raises(SolverError):
        recover_weights(np.array([0.9999]), basis)


# ---- oracle agreement -------------------------------------------------------


def objective(problem, d):
    return float(d @ (problem.hessian @ d) + 2.0 * (problem.linear @ d))


def test_solver_matches_projected_gradient_oracle():
    for problem in collect_qp_instances(8):
        solution = solve_qp(problem)
        assert solution.status == "converged"
        d_ref = projected_gradient(problem.hessian, problem.linear,
                                   problem.constraint_matrix,
                                   problem.constraint_bounds)
        assert abs(solution.objective - objective(problem, d_ref)) < 1e-8
        # both iterates are feasible
        slack = problem.constraint_matrix @ solution.d - problem.constraint_bounds
        assert slack.min() > -1e-9


def test_projection_oracle_self_consistency():
    rng = np.random.default_rng(5)
    a = np.vstack([np.eye(3), -np.eye(3)])
    b = np.concatenate([np.full(3, -1.0), np.full(3, -1.0)])  # the unit box
    for _ in range(20):
        z = rng.normal(0.0, 2.0, 3)
        proj = project_polyhedron(z, a, b)
        assert_allclose(proj, np.clip(z, -1.0, 1.0), atol=1e-9)
        again = project_polyhedron(proj, a, b)
        assert_allclose(again, proj, atol=1e-9)
