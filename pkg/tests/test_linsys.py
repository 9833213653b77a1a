import numpy as np
import pytest

from adaptrack import linsys as ls
from adaptrack.errors import (
    NoRelativeDegree,
    NotHurwitz,
    RelativeDegreeViolation,
    UncontrollablePair,
    UnobservablePair,
)
from adaptrack.linsys import (
    DiagonalInteractor,
    FilterBank,
    Polynomial,
    RationalFilter,
    StateSpace,
    ct,
    dt,
)

import _oracles as oc


# -- polynomials --------------------------------------------------------------


def test_polynomial_from_roots_and_eval():
    p = Polynomial.from_roots([0.5, -0.2])
    assert p.degree == 2 and p.monic
    assert abs(p(0.5)) < 1e-14 and abs(p(-0.2)) < 1e-14


def test_polynomial_stability_both_domains():
    assert Polynomial.from_roots([0.9, -0.5]).is_stable(ls.Domain.DT)
    assert not Polynomial.from_roots([1.5]).is_stable(ls.Domain.DT)
    assert Polynomial.from_roots([-1.0, -2.0]).is_stable(ls.Domain.CT)
    assert not Polynomial.from_roots([0.1]).is_stable(ls.Domain.CT)


def test_polynomial_of_matrix_cayley_hamilton():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4))
    p, _ = ls.charpoly_and_numerators(StateSpace(a, np.zeros((4, 1)), np.zeros((1, 4)), dt()))
    assert np.max(np.abs(p.of_matrix(a))) < 1e-10 * max(1.0, np.max(np.abs(a)) ** 4)


# -- relative degree ----------------------------------------------------------


def test_relative_degree_double_integrator():
    ssm = StateSpace([[0, 1], [0, 0]], [0, 1], [1, 0], dt())
    assert ls.relative_degree(ssm) == 2


def test_relative_degree_scalar():
    assert ls.relative_degree(StateSpace([[0.5]], [1], [2], dt())) == 1


def test_relative_degree_direct_feedthrough_of_first_markov():
    rng = np.random.default_rng(1)
    a = 0.5 * rng.standard_normal((3, 3))
    b = rng.standard_normal(3)
    c = rng.standard_normal(3)
    while abs(c @ b) < 1e-3:
        c = rng.standard_normal(3)
    assert ls.relative_degree(StateSpace(a, b, c, dt())) == 1


def test_relative_degree_decoupled_raises():
    ssm = StateSpace([[0.5, 0], [0, 0.2]], [1, 0], [0, 1], dt())
    with pytest.raises(NoRelativeDegree):
        ls.relative_degree(ssm)


def test_relative_degree_similarity_invariant():
    rng = np.random.default_rng(7)
    base = StateSpace([[0, 1, 0], [0, 0, 1], [0.1, -0.2, 0.3]], [0, 0, 1], [1.0, 0.5, 0.0], dt())
    d0 = ls.relative_degree(base)
    for _ in range(10):
        t = rng.standard_normal((3, 3))
        while abs(np.linalg.det(t)) < 0.1:
            t = rng.standard_normal((3, 3))
        ti = np.linalg.inv(t)
        sim = StateSpace(t @ base.a @ ti, t @ base.b, base.c @ ti, dt())
        assert ls.relative_degree(sim) == d0


# -- markov parameters --------------------------------------------------------


def test_markov_zero_a():
    ssm = StateSpace(np.zeros((2, 2)), [1, 2], [3, 4], dt())
    seq = ls.markov_params(ssm, 4)
    assert seq[0][0, 0] == 11.0
    assert all(abs(m[0, 0]) == 0.0 for m in seq[1:])


def test_markov_identity_a():
    ssm = StateSpace(np.eye(2), [1, 0], [0.5, 0], dt())
    seq = ls.markov_params(ssm, 5)
    assert all(abs(m[0, 0] - 0.5) < 1e-15 for m in seq)


def test_markov_double_integrator():
    ssm = StateSpace([[0, 1], [0, 0]], [0, 1], [1, 0], dt())
    vals = [m[0, 0] for m in ls.markov_params(ssm, 4)]
    assert vals == [0.0, 1.0, 0.0, 0.0]


# -- filters ------------------------------------------------------------------


def test_filter_zero_state_zero_input():
    f = RationalFilter([1.0], Polynomial.from_roots([0.3, 0.4]), dt(), width=3)
    assert np.all(f.step(np.zeros(3)) == 0.0)


def test_filter_strictly_proper_delay():
    f = RationalFilter([1.0], Polynomial([0.5, 1.0]), dt())
    outs = [float(f.step([1.0])[0]), float(f.step([0.0])[0])]
    assert outs == [0.0, 1.0]


def test_filter_superposition():
    den = Polynomial.from_roots([0.2, -0.3])
    rng = np.random.default_rng(3)
    u1 = rng.standard_normal(50)
    u2 = rng.standard_normal(50)
    fa, fb, fc = (RationalFilter([0.3, 1.0], den, dt()) for _ in range(3))
    ya = np.array([fa.step([u])[0] for u in u1])
    yb = np.array([fb.step([u])[0] for u in u2])
    yc = np.array([fc.step([u])[0] for u in (u1 + u2)])
    assert np.max(np.abs(yc - (ya + yb))) < 1e-12


def test_filter_shift_invariance_dt():
    den = Polynomial.from_roots([0.5])
    rng = np.random.default_rng(4)
    u = rng.standard_normal(30)
    f1 = RationalFilter([1.0], den, dt())
    y1 = np.array([f1.step([v])[0] for v in u])
    f2 = RationalFilter([1.0], den, dt())
    y2 = np.array([f2.step([v])[0] for v in np.concatenate([[0.0, 0.0], u])])
    assert np.max(np.abs(y2[2:] - y1)) < 1e-14


def test_filter_matches_bruteforce_recursion():
    # y(t) from N/d applied to u equals the direct difference-equation solution
    den = Polynomial([0.06, -0.5, 1.0])  # (z-0.2)(z-0.3)
    num = Polynomial([1.0, 2.0])
    rng = np.random.default_rng(5)
    u = rng.standard_normal(40)
    f = RationalFilter(num, den, dt())
    y = np.array([f.step([v])[0] for v in u])
    # direct: y(t+2) = 0.5 y(t+1) - 0.06 y(t) + 2 u(t+1) + 1 u(t), for all t
    # with zero initial data (u(t) = y(t) = 0 for t < 0)
    def uat(t):
        return u[t] if 0 <= t < 40 else 0.0

    yd = np.zeros(42)
    for t in range(-2, 38):
        acc = 2.0 * uat(t + 1) + 1.0 * uat(t)
        prev1 = yd[t + 1] if t + 1 >= 0 else 0.0
        prev0 = yd[t] if t >= 0 else 0.0
        yd[t + 2] = 0.5 * prev1 - 0.06 * prev0 + acc
    assert np.max(np.abs(y - yd[:40])) < 1e-12


def test_filter_ct_step_matches_reference_rk4():
    den = Polynomial.from_roots([-2.0, -3.0])
    f = RationalFilter([1.0, 0.5], den, ct(1e-2))
    u = 0.7
    ref = oc.rk4_sim(lambda t, s: f.fmat @ s + f.g * u, np.zeros(2), 1e-2, 1)[-1]
    f.step([u])
    assert np.max(np.abs(f.state[:, 0] - ref)) < 1e-14


def test_filter_biproper_feedthrough():
    den = Polynomial.from_roots([0.4])
    f = RationalFilter(Polynomial([0.2, 1.0]), den, dt())  # (z+0.2)/(z-0.4): biproper
    y0 = f.step([1.0])
    assert abs(y0[0] - 1.0) < 1e-15  # feedthrough J=1, state starts at zero
    y1 = f.step([0.0])
    assert abs(y1[0] - (0.2 + 0.4)) < 1e-15  # H = 0.2 - 1*(-0.4)


def test_filter_bank_states_are_powers_over_lambda():
    lam = Polynomial.from_roots([0.2, 0.3])
    bank = FilterBank([0, 1], lam, dt(), width=1)
    refs = [RationalFilter([1.0], lam, dt()), RationalFilter([0.0, 1.0], lam, dt())]
    rng = np.random.default_rng(6)
    for u in rng.standard_normal(25):
        got = bank.step([u])
        want = [r.step([u])[0] for r in refs]
        assert np.max(np.abs(got - np.array(want))) < 1e-13


def test_filter_bank_biproper_top_block():
    lam = Polynomial.from_roots([0.5])
    bank = FilterBank([0, 1], lam, dt(), width=1)  # top block z/(z-0.5): biproper
    y = bank.step([2.0])
    assert y[0] == 0.0 and y[1] == 2.0
    y = bank.step([0.0])
    assert abs(y[0] - 2.0) < 1e-15 and abs(y[1] - 1.0) < 1e-15


def test_filter_bank_empty():
    bank = FilterBank([], Polynomial([1.0]), dt(), width=2)
    assert bank.step([1.0, 2.0]).size == 0


# -- pole placement -----------------------------------------------------------


def test_pole_place_already_matching():
    target = Polynomial.from_roots([0.1, 0.2, 0.3])
    a = np.zeros((3, 3))
    a[:-1, 1:] = np.eye(2)
    a[-1] = -target.coeffs[:3]
    k = ls.pole_place(StateSpace(a, [0, 0, 1], [1, 0, 0], dt()), target)
    assert np.max(np.abs(k)) < 1e-12


def test_pole_place_scalar():
    k = ls.pole_place(StateSpace([[0.5]], [1], [2], dt()), Polynomial([-0.2, 1.0]))
    assert abs(k[0] + 0.3) < 1e-14


def test_pole_place_random_eigs():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal(3)
        target = Polynomial.from_roots(rng.uniform(-0.8, 0.8, size=3))
        k = ls.pole_place(StateSpace(a, b, [1, 0, 0], dt()), target)
        got = np.sort(np.linalg.eigvals(a + np.outer(b, k)))
        want = np.sort(target.roots())
        assert np.max(np.abs(np.sort_complex(got) - np.sort_complex(want))) < 1e-6


def test_pole_place_uncontrollable():
    a = np.diag([0.5, 0.5])
    with pytest.raises(UncontrollablePair):
        ls.pole_place(StateSpace(a, [1, 1], [1, 0], dt()), Polynomial.from_roots([0.1, 0.2]))


def test_markov_matching_after_pole_place():
    # closed loop built from pole placement matches 1/Pm for 2n parameters
    p = Polynomial.from_roots([0.8, 0.5, -0.4])
    a = np.zeros((3, 3))
    a[:-1, 1:] = np.eye(2)
    a[-1] = -p.coeffs[:3]
    kp = 1.5
    plant = StateSpace(a, [0, 0, 1], [kp * (-0.3), kp, 0.0], dt())
    pm = Polynomial.from_roots([0.1, 0.2])
    zpoly = Polynomial([-0.3, 1.0])
    k1 = ls.pole_place(plant, zpoly * pm)
    acl = plant.a + np.outer(plant.b[:, 0], k1)
    closed = StateSpace(acl, plant.b * (1.0 / kp), plant.c, dt())
    got = [m[0, 0] for m in ls.markov_params(closed, 6)]
    want = oc.inverse_poly_impulse(pm.coeffs, 6)
    assert np.max(np.abs(np.array(got) - want)) < 1e-8


# -- reference-input parametrization from state -------------------------------


def test_ref_input_from_state_scalar_example():
    rm = StateSpace([[0.5]], [1], [2], dt())
    ia = DiagonalInteractor([Polynomial([0.4, 1.0])])
    a1, a2 = ls.ref_input_from_state(rm, ia)
    assert abs(a1[0, 0] - 1.8) < 1e-14
    assert abs(a2[0, 0] - 2.0) < 1e-14


def test_ref_input_from_state_strictly_larger_degree_gives_zero_a2():
    # reference relative degree 3 > interactor degree 2 -> no feedthrough
    a = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.006, -0.11, 0.6]])
    rm = StateSpace(a, [0, 0, 1], [1.0, 0.0, 0.0], dt())
    ia = DiagonalInteractor([Polynomial.from_roots([0.1, 0.2])])
    a1, a2 = ls.ref_input_from_state(rm, ia)
    assert np.max(np.abs(a2)) == 0.0


def test_ref_input_from_state_violation():
    rm = StateSpace([[0.5]], [1], [2], dt())  # relative degree 1
    ia = DiagonalInteractor([Polynomial.from_roots([0.1, 0.2])])  # degree 2
    with pytest.raises(RelativeDegreeViolation):
        ls.ref_input_from_state(rm, ia)


def test_ref_input_from_state_dt_trajectory():
    rng = np.random.default_rng(12)
    a = np.array([[0.4, 0.1, 0.0], [0.0, 0.0, 1.0], [0.05, -0.1, 0.3]])
    b = np.array([[1.0], [0.0], [0.5]])
    c = np.array([[0.0, 1.0, 0.0]])
    rm = StateSpace(a, b, c, dt())
    ia = DiagonalInteractor([Polynomial.from_roots([0.1, 0.3])])
    a1, a2 = ls.ref_input_from_state(rm, ia)
    u = rng.standard_normal(206)
    xs, ys = oc.simulate_dt(a, b, c, rng.standard_normal(3), u)
    lhs = oc.shift_apply(ia.rows[0].coeffs, ys[:, 0])
    rhs = xs[: lhs.size] @ a1[:, 0] + u[: lhs.size] * a2[0, 0]
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_ref_input_from_state_ct_trajectory():
    h = 1e-3
    a = np.array([[-1.0, 0.5], [0.0, -2.0]])
    b = np.array([[0.0], [1.0]])
    c = np.array([[1.0, 0.0]])
    rm = StateSpace(a, b, c, ct(h))
    ia = DiagonalInteractor([Polynomial.from_roots([-1.0, -2.0])])
    a1, a2 = ls.ref_input_from_state(rm, ia)

    def um(t):
        return 0.8 * np.sin(0.9 * t) + 0.3

    traj = oc.rk4_sim(lambda t, x: a @ x + b[:, 0] * um(t), np.array([0.3, -0.2]), h, 2000)
    ys = traj @ c[0]
    ts = np.arange(2001) * h
    lhs = oc.interactor_apply_ct([ia.rows[0].coeffs], ys[:, None], h)[:, 0]
    rhs = traj @ a1[:, 0] + np.array([um(t) for t in ts]) * a2[0, 0]
    assert np.max(np.abs(lhs - rhs[2:-2])) < 1e-5


# -- reference-input parametrization from I/O ---------------------------------


def test_ref_input_from_io_first_order_reduction():
    am, bm, cm = 0.5, 1.0, 2.0
    rm = StateSpace([[am]], [bm], [cm], dt())
    ia = DiagonalInteractor([Polynomial([0.4, 1.0])])
    b1, b2, b20, a2 = ls.ref_input_from_io(rm, ia, Polynomial([1.0]), 0)
    assert b1.size == 0 and b2.size == 0
    assert abs(b20[0, 0] - (am + 0.4)) < 1e-9
    assert abs(a2[0, 0] - cm * bm) < 1e-14


def test_ref_input_from_io_fresh_trajectory_consistency():
    # coefficients identified on one trajectory must reconstruct on another
    a = np.array([[0.6, 1.0, 0.0], [0.0, 0.4, 1.0], [0.0, 0.0, 0.1]])
    b = np.array([[0.0], [0.3], [1.0]])
    c = np.array([[1.0, 0.0, 0.0]])
    rm = StateSpace(a, b, c, dt())
    ia = DiagonalInteractor([Polynomial.from_roots([0.1, 0.2])])
    lam_e = Polynomial.from_roots([0.2, 0.3])
    b1, b2, b20, a2 = ls.ref_input_from_io(rm, ia, lam_e, 2)
    a1s, a2s = ls.ref_input_from_state(rm, ia)

    rng = np.random.default_rng(42)
    horizon = 400
    u = np.column_stack([np.sin(0.21 * np.arange(horizon)) + 0.4 * rng.standard_normal(horizon)])
    xs, ys = oc.simulate_dt(a, b, c, rng.standard_normal(3), u[:, 0])
    bank_u = FilterBank([0, 1], lam_e, dt(), width=1)
    bank_y = FilterBank([0, 1], lam_e, dt(), width=1)
    resid = []
    for t in range(horizon):
        wu = bank_u.step(u[t])
        wy = bank_y.step(ys[t])
        rm_true = a1s[:, 0] @ xs[t] + a2s[0, 0] * u[t, 0]
        rm_fit = b1[:, 0] @ wu + b2[:, 0] @ wy + b20[0, 0] * ys[t, 0] + a2[0, 0] * u[t, 0]
        resid.append(rm_true - rm_fit)
    assert np.max(np.abs(np.array(resid)[150:])) < 1e-6


def test_ref_input_from_io_zero_everything():
    rm = StateSpace([[0.5]], [1], [2], dt())
    ia = DiagonalInteractor([Polynomial([0.4, 1.0])])
    b1, b2, b20, a2 = ls.ref_input_from_io(rm, ia, Polynomial([1.0]), 0)
    # zero input, zero state: every regressor and the target vanish
    assert b20[0, 0] * 0.0 + a2[0, 0] * 0.0 == 0.0


def test_ref_input_from_io_unobservable():
    a = np.diag([0.5, 0.5])
    rm = StateSpace(a, [[1.0], [1.0]], [[1.0, -1.0]], dt())
    ia = DiagonalInteractor([Polynomial([0.4, 1.0])])
    with pytest.raises(UnobservablePair):
        ls.ref_input_from_io(rm, ia, Polynomial([-0.2, 1.0]), 1)


# -- Lyapunov solver ----------------------------------------------------------


def test_lyapunov_diagonal_closed_form():
    a0 = -np.diag([1.0, 2.0, 4.0])
    p = ls.lyapunov_solve_ct(a0, np.eye(3))
    assert np.max(np.abs(p - np.diag([0.5, 0.25, 0.125]))) < 1e-12


def test_lyapunov_identity_case():
    p = ls.lyapunov_solve_ct(-np.eye(2), 2.0 * np.eye(2))
    assert np.max(np.abs(p - np.eye(2))) < 1e-12


def test_lyapunov_residual_random():
    rng = np.random.default_rng(13)
    for _ in range(5):
        a0 = rng.standard_normal((3, 3)) - 3.0 * np.eye(3)
        q0 = rng.standard_normal((3, 3))
        q = q0 @ q0.T + 0.5 * np.eye(3)
        p = ls.lyapunov_solve_ct(a0, q)
        assert np.max(np.abs(p @ a0 + a0.T @ p + q)) < 1e-9
        assert np.min(np.linalg.eigvalsh(p)) > 0


def test_lyapunov_not_hurwitz():
    with pytest.raises(NotHurwitz):
        ls.lyapunov_solve_ct(np.array([[0.1]]), np.eye(1))
