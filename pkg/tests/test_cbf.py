import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_cbf.cbf import (
    BarrierParams,
    ClassKappa,
    additive_constraint,
    assemble_ensemble,
    collision_barrier,
    collision_barrier_grad,
    ensemble_constraints,
    lookahead_output,
    multiplicative_constraints,
    nominal_constraint,
    nominal_ensemble_constraints,
    nominal_output_matrix,
    nominal_pairwise_constraint,
    orthotope_constraints,
    output_dynamics,
    pair_indices,
    pairwise_constraints,
)
from robust_cbf.hullset import HullSet, IntervalMatrix, interval_matrix_vertices

from oracles import box_corner_min, lookahead_matrix

LINEAR = ClassKappa(1.0, exponent=1)
ENTRIES = ((0, 0), (1, 0), (2, 1))


def unicycle_box(lo_vals, hi_vals):
    lo = np.zeros((3, 2))
    hi = np.zeros((3, 2))
    for (r, c), a, b in zip(ENTRIES, lo_vals, hi_vals):
        lo[r, c], hi[r, c] = min(a, b), max(a, b)
    return IntervalMatrix(lo, hi)


def test_class_kappa():
    assert ClassKappa(700)(0.1) == pytest.approx(0.7)
    assert ClassKappa(700)(-0.1) == pytest.approx(-0.7)
    with pytest.raises(ValueError):
        ClassKappa(1.0, exponent=2)
    with pytest.raises(ValueError):
        ClassKappa(0.0)


def test_collision_barrier_values():
    assert collision_barrier([0.2, 0.1], [0.2, 0.1], 0.12) == pytest.approx(-0.0144)
    assert collision_barrier([0, 0], [0.12, 0], 0.12) == pytest.approx(0.0, abs=1e-15)
    assert collision_barrier([0, 0], [0.3, 0.4], 0.12) == pytest.approx(0.2356, abs=1e-12)


def test_collision_barrier_grad_matches_difference_quotient():
    p_i, p_j = np.array([0.1, -0.2]), np.array([0.4, 0.3])
    gi, gj = collision_barrier_grad(p_i, p_j)
    eps = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        num = (collision_barrier(p_i + e, p_j, 0.12) - collision_barrier(p_i - e, p_j, 0.12)) / (2 * eps)
        assert gi[k] == pytest.approx(num, rel=1e-7)
    assert np.array_equal(gj, -gi)


def test_lookahead_output():
    assert np.allclose(lookahead_output([1, 1, 0.0], 0.03), [1.03, 1.0])
    assert np.allclose(lookahead_output([1, 1, math.pi / 2], 0.03), [1.0, 1.03])
    assert np.allclose(lookahead_output([0.4, -0.7, 2.0], 0.0), [0.4, -0.7])


def test_output_dynamics_undisturbed():
    g = output_dynamics([0, 0, 0.0], IntervalMatrix.zeros(3, 2), 0.03)
    assert np.allclose(g.lo, [[1, 0], [0, 0.03]]) and np.array_equal(g.lo, g.hi)
    g = output_dynamics([0, 0, math.pi / 2], IntervalMatrix.zeros(3, 2), 0.03)
    assert np.allclose(g.lo, [[0, -0.03], [1, 0]], atol=1e-15)


def test_output_dynamics_heading_gain_interval():
    g = output_dynamics([0, 0, 0.0], unicycle_box([0, 0, -0.1], [0, 0, 0.1]), 0.03)
    assert g.lo[1, 1] == pytest.approx(0.027) and g.hi[1, 1] == pytest.approx(0.033)


def test_output_dynamics_rejects_dense_disturbance():
    lo = np.zeros((3, 2))
    hi = np.zeros((3, 2))
    hi[0, 1] = 0.1
    with pytest.raises(ValueError):
        output_dynamics([0, 0, 0], IntervalMatrix(lo, hi), 0.03)


@settings(max_examples=80)
@given(st.floats(-math.pi, math.pi), st.lists(st.floats(-0.3, 0.3), min_size=6, max_size=6),
       st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_output_dynamics_contains_exact_matrix(theta, bounds, t):
    dm = unicycle_box(bounds[:3], bounds[3:])
    D = dm.lo + np.asarray([[t[0], 0], [t[1], 0], [0, t[2]]]) * (dm.hi - dm.lo)
    G = output_dynamics([0, 0, theta], dm, 0.03)
    assert G.contains(lookahead_matrix(theta, D, 0.03), tol=1e-12)
    assert np.allclose(nominal_output_matrix([0, 0, theta], 0.03), lookahead_matrix(theta, np.zeros((3, 2)), 0.03))


def test_additive_scalar_examples():
    row = additive_constraint(1.0, 0.0, 1.0, HullSet([-0.5, 0.3]), LINEAR, 2.0)
    assert row.coeffs.tolist() == [1.0] and row.rhs == pytest.approx(-1.5)
    row2 = additive_constraint(1.0, 0.0, 1.0, HullSet([-0.5, 0.3, 0.1]), LINEAR, 2.0)
    assert row2.rhs == row.rhs


def test_additive_zero_hull_is_nominal():
    g = np.array([[1.0, 0.0], [0.5, 2.0]])
    nom = nominal_constraint([1.0, -2.0], 0.3, g, ClassKappa(3.0), 0.4)
    rob = additive_constraint([1.0, -2.0], 0.3, g, HullSet(np.zeros((1, 2))), ClassKappa(3.0), 0.4)
    assert np.array_equal(nom.coeffs, rob.coeffs) and nom.rhs == rob.rhs


def test_multiplicative_scalar_example():
    rows = multiplicative_constraints(1.0, 0.0, 1.0, HullSet(np.array([-0.4, 0.4]).reshape(2, 1, 1)), LINEAR, 1.0)
    assert [r.coeffs.tolist() for r in rows] == [[pytest.approx(0.6)], [pytest.approx(1.4)]]
    assert all(r.rhs == -1.0 for r in rows)


def test_multiplicative_zero_vertex_is_nominal():
    rows = multiplicative_constraints([1.0], 0.0, [[2.0]], HullSet(np.zeros((1, 1, 1))), LINEAR, 1.0)
    nom = nominal_constraint([1.0], 0.0, [[2.0]], LINEAR, 1.0)
    assert len(rows) == 1 and np.array_equal(rows[0].coeffs, nom.coeffs)


def test_orthotope_rows_count_and_zero_case():
    g = np.eye(3)[:, :2]
    rows = orthotope_constraints([1.0, 2.0, 3.0], 0.0, g, IntervalMatrix.zeros(3, 2), LINEAR, 0.5)
    nom = nominal_constraint([1.0, 2.0, 3.0], 0.0, g, LINEAR, 0.5)
    assert len(rows) == 4
    assert all(np.array_equal(r.coeffs, nom.coeffs) and r.rhs == nom.rhs for r in rows)


@settings(max_examples=40)
@given(st.integers(1, 3), st.integers(1, 2), st.data())
def test_orthotope_rows_match_matrix_corner_rows(n, m, data):
    floats = st.floats(-1, 1)
    grad = np.array(data.draw(st.lists(floats, min_size=n, max_size=n)))
    g = np.array(data.draw(st.lists(floats, min_size=n * m, max_size=n * m))).reshape(n, m)
    a = np.array(data.draw(st.lists(floats, min_size=n * m, max_size=n * m))).reshape(n, m)
    b = np.array(data.draw(st.lists(floats, min_size=n * m, max_size=n * m))).reshape(n, m)
    u = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=m, max_size=m)))
    dm = IntervalMatrix(np.minimum(a, b), np.maximum(a, b))
    orth = orthotope_constraints(grad, 0.1, g, dm, LINEAR, 0.2)
    full = multiplicative_constraints(grad, 0.1, g, interval_matrix_vertices(dm), LINEAR, 0.2)
    assert min(r.slack(u) for r in orth) == pytest.approx(min(r.slack(u) for r in full), abs=1e-12)


def test_pairwise_zero_disturbance_matches_nominal():
    params = BarrierParams()
    xi, xj = [0.0, 0.0, 0.3], [0.25, 0.1, -2.0]
    rows = pairwise_constraints(xi, xj, IntervalMatrix.zeros(3, 2), IntervalMatrix.zeros(3, 2), params, 3, 0, 2)
    nom = nominal_pairwise_constraint(xi, xj, params, 3, 0, 2)
    assert len(rows) == 16
    for r in rows:
        assert np.allclose(r.coeffs, nom.coeffs, atol=1e-12, rtol=0) and r.rhs == nom.rhs
    assert np.all(nom.coeffs[2:4] == 0.0)


def test_pairwise_rhs_example():
    # look-ahead points (0, 0) and (0.3, 0.4) give h = 0.2356
    params = BarrierParams(delta=0.12, l_p=0.03, kappa=ClassKappa(700))
    rows = pairwise_constraints([-0.03, 0, 0], [0.27, 0.4, 0], IntervalMatrix.zeros(3, 2),
                                IntervalMatrix.zeros(3, 2), params, 2, 0, 1)
    assert rows[0].rhs == pytest.approx(-700 * 0.2356 ** 3, rel=1e-9)
    # quoted to three decimals as -9.155; the exact value is -9.15427
    assert rows[0].rhs == pytest.approx(-9.155, abs=1e-3)
    assert len({r.rhs for r in rows}) == 1


def test_pairwise_index_errors():
    z = IntervalMatrix.zeros(3, 2)
    with pytest.raises(ValueError):
        pairwise_constraints([0, 0, 0], [1, 0, 0], z, z, BarrierParams(), 2, 1, 1)
    with pytest.raises(ValueError):
        pairwise_constraints([0, 0, 0], [1, 0, 0], z, z, BarrierParams(), 2, 0, 2)


def test_ensemble_shapes():
    params = BarrierParams()
    for n, rows in ((1, 0), (2, 16), (7, 336)):
        x = np.column_stack([np.arange(n) * 0.5, np.zeros(n), np.zeros(n)])
        A, b = ensemble_constraints(x, np.zeros((n, 3, 2)), np.zeros((n, 3, 2)), params)
        assert A.shape == (rows, 2 * n) and b.shape == (rows,)
    assert [tuple(map(int, ij)) for ij in zip(*pair_indices(3))] == [(0, 1), (0, 2), (1, 2)]


def random_unicycle_bounds(rng, n):
    lo = np.zeros((n, 3, 2))
    hi = np.zeros((n, 3, 2))
    for r, c in ENTRIES:
        a = rng.uniform(-0.3, 0.3, n)
        b = rng.uniform(-0.3, 0.3, n)
        lo[:, r, c] = np.minimum(a, b)
        hi[:, r, c] = np.maximum(a, b)
    return lo, hi


@pytest.mark.parametrize("seed", range(5))
def test_vectorized_ensemble_matches_stacked_pairs(seed):
    rng = np.random.default_rng(seed)
    n = 4
    params = BarrierParams()
    x = np.column_stack([rng.uniform(-1, 1, (n, 2)), rng.uniform(-math.pi, math.pi, n)])
    lo, hi = random_unicycle_bounds(rng, n)
    A, b = ensemble_constraints(x, lo, hi, params)
    blocks = [pairwise_constraints(x[i], x[j], IntervalMatrix(lo[i], hi[i]), IntervalMatrix(lo[j], hi[j]), params, n, i, j)
              for i, j in zip(*pair_indices(n))]
    A2, b2 = assemble_ensemble(blocks)
    assert np.allclose(A, A2, atol=1e-14, rtol=0) and np.allclose(b, b2, atol=0, rtol=1e-13)
    An, bn = nominal_ensemble_constraints(x, params)
    An2, bn2 = assemble_ensemble([[nominal_pairwise_constraint(x[i], x[j], params, n, i, j)]
                                  for i, j in zip(*pair_indices(n))])
    assert np.allclose(An, An2, atol=1e-14, rtol=0) and np.allclose(bn, bn2, atol=0, rtol=1e-13)


@settings(max_examples=60)
@given(st.integers(0, 10_000))
def test_robust_rows_certify_every_member(seed):
    # a u satisfying all 16 rows satisfies the exact barrier condition for any D in the intervals
    rng = np.random.default_rng(seed)
    params = BarrierParams()
    x = np.column_stack([rng.uniform(-0.3, 0.3, (2, 2)), rng.uniform(-math.pi, math.pi, 2)])
    lo, hi = random_unicycle_bounds(rng, 2)
    A, b = ensemble_constraints(x, lo, hi, params)
    u = rng.uniform(-1, 1, 4)
    worst = (A @ u - b).min()
    p = np.array([lookahead_output(x[k], params.l_p) for k in range(2)])
    gi, gj = collision_barrier_grad(p[0], p[1])
    D = [lo[k] + rng.uniform(0, 1, (3, 2)) * (hi[k] - lo[k]) for k in range(2)]
    exact = (gi @ lookahead_matrix(x[0, 2], D[0], params.l_p) @ u[:2]
             + gj @ lookahead_matrix(x[1, 2], D[1], params.l_p) @ u[2:]) - b[0]
    assert exact >= worst - 1e-12
    # the 16 rows are the corners of the interval row, so their minimum is the box minimum
    q_lo = A.min(axis=0)
    q_hi = A.max(axis=0)
    assert worst == pytest.approx(box_corner_min(q_lo, q_hi, u) - b[0], abs=1e-12)
