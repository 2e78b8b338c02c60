import numpy as np
import pytest

from oracles import central_difference, linear_gaussian_map
from fusionslam.errors import DeadVariable
from fusionslam.estimator.factors import (ClockFactor, DopplerFactor, ImuFactor, LinearFactor,
                                          PriorFactor, PseudorangeFactor, WheelFactor,
                                          evaluate_factor, huber_rho, whitener)
from fusionslam.estimator.marginalization import drop_from_prior, marginalize
from fusionslam.estimator.solver import SolverConfig, solve, total_cost
from fusionslam.estimator.state import (NAV_DIM, NavState, minus, nav_vector, perturb,
                                        random_nav, retract)
from fusionslam.geometry import Pose, so3_exp
from fusionslam.gnss import GnssObservation
from fusionslam.preintegration import ImuData, WheelData, imu_preintegrate, wheel_preintegrate

G = np.array([0.0, 0.0, -9.81])


def _max_rel_error(factor, values, h=1e-6):
    _, blocks = evaluate_factor(factor, values)
    worst = 0.0
    for key, J in blocks.items():
        num = central_difference(lambda d: evaluate_factor(factor, perturb(values, key, d))[0],
                                 np.zeros(J.shape[1]), h)
        worst = max(worst, np.linalg.norm(J - num) / max(np.linalg.norm(num), 1e-12))
    return worst


def test_retract_minus_roundtrip(rng):
    x = random_nav(rng)
    d = rng.normal(size=NAV_DIM) * 0.3
    np.testing.assert_allclose(minus(("x", 0), retract(("x", 0), x, d), x), d, atol=1e-12)
    assert minus(("yaw",), np.array([3.1]), np.array([-3.1]))[0] == pytest.approx(6.2 - 2 * np.pi)


def test_navstate_vector_roundtrip(rng):
    x = random_nav(rng)
    s = NavState.from_vector(1.5, x)
    np.testing.assert_allclose(s.to_vector(), x)
    np.testing.assert_allclose(s.pose.translation, x[:3])


def test_whitener_and_huber():
    cov = np.array([[4.0, 1.0], [1.0, 2.0]])
    W = whitener(cov)
    np.testing.assert_allclose(W.T @ W, np.linalg.inv(cov), atol=1e-12)
    rho, d = huber_rho(np.array([0.25, 4.0]), 1.0)
    np.testing.assert_allclose(rho, [0.25, 3.0])
    np.testing.assert_allclose(d, [1.0, 0.5])


def test_imu_factor_zero_on_consistent_states():
    t = np.linspace(0.0, 0.5, 101)
    acc = np.tile([0.2, 0.0, 9.81], (101, 1))
    pre = imu_preintegrate(ImuData(t, acc, np.zeros((101, 3))))
    xi = nav_vector(v=[1.0, 0, 0])
    xj = nav_vector(p=[0.5 + 0.5 * 0.2 * 0.25, 0, 0], v=[1.1, 0, 0])
    r, _ = evaluate_factor(ImuFactor(("x", 0), ("x", 1), pre, G), {("x", 0): xi, ("x", 1): xj})
    np.testing.assert_allclose(r, 0, atol=1e-9)


def test_imu_and_wheel_jacobians(rng):
    t = np.linspace(0.0, 0.3, 61)
    pre = imu_preintegrate(ImuData(t, rng.normal(size=(61, 3)) + [0, 0, 9.81],
                                   rng.normal(size=(61, 3)) * 0.5),
                           rng.normal(size=3) * 0.1, rng.normal(size=3) * 0.01)
    wt = np.linspace(0.0, 0.3, 31)
    wp = wheel_preintegrate(WheelData(wt, np.column_stack([rng.normal(size=31) + 1,
                                                           rng.normal(size=31) * 0.1,
                                                           np.zeros(31)]),
                                      rng.normal(size=31) * 0.3))
    vals = {("x", 0): random_nav(rng), ("x", 1): random_nav(rng)}
    assert _max_rel_error(ImuFactor(("x", 0), ("x", 1), pre, G), vals) < 1e-5
    ext = Pose(so3_exp([0.1, 0.2, 0.3]), [0.1, 0.2, 0.3])
    assert _max_rel_error(WheelFactor(("x", 0), ("x", 1), wp, ext), vals) < 1e-5


def test_gnss_and_clock_jacobians(rng):
    obs = GnssObservation(1.3, 0, np.array([1e7, 5e6, 1.5e7]), np.array([2000.0, -1000, 500]),
                          2.1e7, 2.0, -300.0, 0.1, 0.8, 10)
    vals = {("x", 0): random_nav(rng, 10), ("yaw",): np.array([0.3]),
            ("anchor",): np.array([5.0, -3, 1]), ("clk", 0): np.array([20.0]),
            ("clk", 1): np.array([21.0]), ("drift",): np.array([0.1])}
    # ranges are ~2e7 m, so a larger step keeps round-off below the curvature error
    assert _max_rel_error(PseudorangeFactor(("x", 0), 1.0, obs, ("clk", 0)), vals, 1e-3) < 1e-5
    assert _max_rel_error(DopplerFactor(("x", 0), 1.0, obs), vals, 1e-3) < 1e-5
    assert _max_rel_error(ClockFactor(("clk", 0), ("clk", 1), 1.0, 0.1), vals) < 1e-5


def test_prior_jacobian(rng):
    keys = [("x", 0), ("x", 1)]
    prior = PriorFactor(keys, {k: random_nav(rng) for k in keys}, rng.normal(size=(30, 30)),
                        rng.normal(size=30))
    vals = {k: random_nav(rng) for k in keys}
    assert _max_rel_error(prior, vals) < 1e-5


def _chain(rng, n=4):
    keys = [("s", i) for i in range(n)]
    fs = [LinearFactor([keys[0]], [np.eye(2)], rng.normal(size=2), 0.3)]
    for a, b in zip(keys[:-1], keys[1:]):
        fs.append(LinearFactor([a, b], [-np.eye(2), np.eye(2)], rng.normal(size=2), 0.2))
    fs.append(LinearFactor([keys[-1]], [np.eye(2)], rng.normal(size=2), 0.5))
    return keys, fs, {k: np.zeros(2) for k in keys}


def _stack(keys, fs):
    cols = {k: 2 * i for i, k in enumerate(keys)}
    A, b = [], []
    for f in fs:
        r, Js = f.linearize({k: np.zeros(2) for k in keys})
        row = np.zeros((len(r), 2 * len(keys)))
        for k, J in zip(f.keys, Js):
            row[:, cols[k]:cols[k] + 2] = J
        A.append(row)
        b.append(-r)
    return np.vstack(A), np.concatenate(b)


def test_solver_matches_linear_least_squares(rng):
    keys, fs, vals = _chain(rng)
    out, rep = solve(fs, vals)
    A, b = _stack(keys, fs)
    expected = linear_gaussian_map(A, b)
    np.testing.assert_allclose(np.concatenate([out[k] for k in keys]), expected, atol=1e-10)
    assert rep.converged and rep.final_cost <= rep.initial_cost


def test_solver_respects_fixed_variables(rng):
    keys, fs, vals = _chain(rng)
    vals[keys[0]] = np.array([1.0, -1.0])
    out, _ = solve(fs, vals, fixed={keys[0]: True})
    np.testing.assert_array_equal(out[keys[0]], [1.0, -1.0])
    out, _ = solve(fs, vals, fixed={keys[0]: np.array([True, False])})
    assert out[keys[0]][0] == 1.0 and out[keys[0]][1] != -1.0


def test_solver_rejects_missing_variables(rng):
    keys, fs, vals = _chain(rng)
    del vals[keys[1]]
    with pytest.raises(DeadVariable):
        solve(fs, vals)


def test_solver_nonlinear_pose_graph(rng):
    truth = [random_nav(rng) for _ in range(3)]
    keys = [("x", i) for i in range(3)]
    sig = np.full(NAV_DIM, 0.01)
    # priors at the truth pull each state home from a perturbed start
    fs = [PriorFactor.gaussian(k, x, sig) for k, x in zip(keys, truth)]
    start = {k: retract(k, x, rng.normal(size=NAV_DIM) * 0.2) for k, x in zip(keys, truth)}
    out, rep = solve(fs, start, config=SolverConfig(max_iterations=30))
    for k, x in zip(keys, truth):
        np.testing.assert_allclose(minus(k, out[k], x), 0, atol=1e-8)
    assert total_cost(fs, out) < 1e-12


def test_marginalization_preserves_linear_map(rng):
    keys, fs, vals = _chain(rng)
    full, _ = solve(fs, vals)
    prior = marginalize(fs[:2], vals, [keys[0]])
    assert keys[0] not in prior.keys
    rest = {k: vals[k] for k in keys[1:]}
    reduced, _ = solve([prior] + fs[2:], rest)
    for k in keys[1:]:
        np.testing.assert_allclose(reduced[k], full[k], atol=1e-10)


def test_drop_from_prior(rng):
    keys, fs, vals = _chain(rng)
    prior = marginalize(fs[:3], vals, [keys[0]])
    smaller = drop_from_prior(prior, vals, [keys[1]])
    assert smaller.keys == (keys[2],)
    assert drop_from_prior(prior, vals, [("s", 99)]) is prior
