import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdlab.fields import BoxDomain, Field, l2_norm
from rdlab.nonlinearity import builtin_family, custom, forcing_profile
from rdlab.rng import generator, random_field
from rdlab.solver import (BlowUpError, BumpProfile, Integrator, Trajectory, decay_constants,
                          ibp_identity_check, l2_decay_check, manufactured_trajectory, simulate,
                          step, weak_residual)

LINEAR = builtin_family("odd_power", [2.0, 0.0])


def _manufactured(t, x):
    return (1.5 + np.sin(3 * t)) * np.sin(x) + 0.7 * np.cos(2 * t) * np.sin(2 * x)


def ibp_errors(k, m, levels=(100, 200, 400, 800, 1600, 3200, 6400)):
    dom = BoxDomain.interval(np.pi, 255)
    eta = BumpProfile(0.1, 0.9)
    out = []
    for n in levels:
        traj = manufactured_trajectory(dom, np.linspace(0, 1, n + 1), _manufactured)
        lhs, rhs = ibp_identity_check(traj, k, m, eta)
        out.append((lhs, rhs))
    return out


def observed_order(errors) -> float:
    """Least-squares slope of log error against log refinement."""
    e = np.log2(np.asarray(errors))
    return float(-np.polyfit(np.arange(len(e)), e, 1)[0])


@pytest.mark.parametrize("k", [1, 2, 4])
@pytest.mark.parametrize("scheme", ["etd1", "etd2rk"])
def test_linear_modes_decay_exactly(k, scheme):
    dom = BoxDomain.interval(np.pi, 31)
    u0 = Field.mode(dom, k, 2.0)
    traj = simulate(u0, LINEAR, dt=0.05, horizon=1.0, scheme=scheme)
    exact = 2.0 * np.exp(-(k**2 + 1) * traj.log["time"]) * math.sqrt(np.pi / 2)
    assert np.allclose(traj.log["l2"], exact, rtol=1e-12, atol=1e-14)


def test_linear_decay_in_a_square():
    dom = BoxDomain.box((1.0, 2.0), (15, 15))
    u0 = Field.mode(dom, (2, 3))
    lam = np.pi**2 * (4 + 9 / 4)
    traj = simulate(u0, LINEAR, dt=0.01, horizon=0.1)
    assert traj.final.coeffs[1, 2] == pytest.approx(math.exp(-(lam + 1) * 0.1), rel=1e-12)


@pytest.mark.parametrize("scheme, order", [("etd1", 1), ("etd2rk", 2)])
@pytest.mark.parametrize("decay", [3.0, 1.0])
def test_temporal_convergence_order(cubic2, scheme, order, decay):
    dom = BoxDomain.interval(np.pi, 31)
    # steps stay below the reaction guard so dt is the step actually taken
    u0 = random_field(dom, generator(3, "order"), l2=1.0, decay=decay)
    assert Integrator(dom, cubic2).max_substep(u0.coeffs) > 1 / 64
    ref = simulate(u0, cubic2, dt=1 / 4096, horizon=0.5, scheme="etd2rk").final
    errs = [l2_norm(simulate(u0, cubic2, dt=dt, horizon=0.5, scheme=scheme).final - ref)
            for dt in (1 / 64, 1 / 128, 1 / 256)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    # rough data (coefficients ~ 1/k) shows the usual stiff order reduction
    expected = order if decay > 2 else min(order, 1.5)
    assert np.all(rates > expected - 0.2)


def test_semiflow_concatenation(cubic2, line):
    u0 = random_field(line, generator(5, "semiflow"), l2=3.0)
    whole = simulate(u0, cubic2, dt=0.01, horizon=1.0).final
    half = simulate(u0, cubic2, dt=0.01, horizon=0.5).final
    split = simulate(half, cubic2, dt=0.01, horizon=0.5).final
    assert l2_norm(whole - split) <= 1e-12 * l2_norm(whole)


def test_odd_symmetry(cubic2, line):
    u0 = random_field(line, generator(6, "odd"), l2=2.0)
    a = simulate(u0, cubic2, dt=0.01, horizon=0.5).final
    b = simulate(-u0, cubic2, dt=0.01, horizon=0.5).final
    assert np.allclose(a.coeffs, -b.coeffs, atol=1e-14)


def test_zero_is_fixed(cubic2, line):
    assert not np.any(simulate(Field.zeros(line), cubic2, dt=0.01, horizon=0.2).final.coeffs)


def test_large_data_is_substepped(cubic2, line):
    u0 = random_field(line, generator(7, "big"), l2=1e3)
    traj = simulate(u0, cubic2, dt=0.05, horizon=1.0)
    assert np.all(np.isfinite(traj.log["l2"]))
    ref = simulate(u0, cubic2, dt=0.0125, horizon=1.0).final
    assert l2_norm(traj.final - ref) < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported(line):
    spec = custom(lambda u: -(u**3), p=4)
    with pytest.raises(BlowUpError) as info:
        simulate(Field.mode(line, 1, 50.0), spec, dt=0.1, horizon=10.0)
    assert info.value.time < 10.0


def test_step_and_argument_validation(cubic2, line):
    u = Field.mode(line, 1)
    assert l2_norm(step(u, 0.01, cubic2)) > 0
    with pytest.raises(ValueError):
        step(u, 0.0, cubic2)
    with pytest.raises(ValueError):
        simulate(u, cubic2, dt=0.03, horizon=0.1)
    with pytest.raises(ValueError):
        simulate(u, cubic2, dt=0.01, horizon=0.1, snapshot_times=[0.005])
    with pytest.raises(ValueError):
        Integrator(line, cubic2, scheme="rk4")


def test_trajectory_access(cubic2, line, tmp_path):
    traj = simulate(Field.mode(line, 1), cubic2, dt=0.01, horizon=0.2,
                    snapshot_times=[0.0, 0.1, 0.2], log_m=(4, 16))
    assert list(traj.times) == pytest.approx([0.0, 0.1, 0.2])
    assert traj.at(0.1) is traj.states[1]
    with pytest.raises(KeyError):
        traj.at(0.05)
    assert list(traj.window(0.05, 0.2)) == [1, 2]
    traj.write_log_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "time,l2,linf,h1,lm_16,lm_4"
    assert len(lines) == 22
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [traj.states[0], traj.states[1]])


def test_weak_residual_vanishes_on_solutions(cubic2, line):
    u0 = random_field(line, generator(8, "weak"), l2=2.0)
    traj = simulate(u0, cubic2, dt=0.001, horizon=1.0, snapshot_every=1)
    eta = BumpProfile(0.2, 0.8)
    for k in (1, 2, 3):
        v = Field.mode(line, k)
        scale = max(1.0, abs(float(np.sum(np.abs(traj.coeff_stack()[:, k - 1])))))
        assert abs(weak_residual(traj, v, eta)) < 1e-5 * scale


def test_weak_residual_detects_non_solutions(cubic2, line):
    t = np.linspace(0, 1, 401)
    traj = manufactured_trajectory(line, t, lambda t, x: np.sin(x))
    # steady sin(x) is not a solution for lam = 2: residual = (1 - 2) + cubic part
    assert abs(weak_residual(traj, Field.mode(line, 1), BumpProfile(0.2, 0.8), cubic2)) > 0.1


def test_bump_profile():
    eta = BumpProfile(0.0, 2.0)
    t = np.linspace(0, 2, 20001)
    from scipy.integrate import trapezoid
    assert trapezoid(eta(t), t) == pytest.approx(1.0, rel=1e-8)
    h = 1e-6
    assert eta.derivative(0.7) == pytest.approx((eta(0.7 + h) - eta(0.7 - h)) / (2 * h), rel=1e-6)
    with pytest.raises(ValueError):
        BumpProfile(1.0, 1.0)


@pytest.mark.parametrize("m", [1, 2])
@pytest.mark.parametrize("k", [0.8, 1.6])
def test_truncated_time_identity_converges(k, m):
    pairs = ibp_errors(k, m)
    lhs, rhs = pairs[-1]
    assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(rhs))
    assert observed_order([abs(a - b) for a, b in pairs]) >= 1.8


def test_identity_input_validation(line):
    traj = manufactured_trajectory(line, [0, 1, 2], lambda t, x: np.sin(x))
    with pytest.raises(ValueError):
        ibp_identity_check(traj, 1.0, 1, BumpProfile(0, 2))


def test_decay_constants_cubic(cubic2, line):
    rate, K = decay_constants(cubic2, None, line)
    c = 0.5 * np.pi ** (-1.0)
    assert rate == pytest.approx(1 + c)
    assert K == pytest.approx(math.sqrt((c + 2 * np.pi) / (1 + c)))


def test_decay_constants_with_forcing(cubic2, line):
    g = forcing_profile(line, "constant", 0.3)
    rate, K = decay_constants(cubic2, g, line)
    assert rate == pytest.approx(0.5 + 0.5 / np.pi)
    assert K > decay_constants(cubic2, None, line)[1]


@settings(max_examples=8)
@given(st.integers(0, 2**32), st.floats(0.0, 3.0))
def test_l2_decay_has_no_violations(seed, log_norm):
    dom = BoxDomain.interval(np.pi, 31)
    spec = builtin_family("cubic_chafee_infante", [2.0])
    u0 = random_field(dom, generator(seed, "decay"), l2=10**log_norm)
    traj = simulate(u0, spec, dt=0.01, horizon=2.0, snapshot_every=1000)
    check = l2_decay_check(traj, spec)
    assert check.violations == 0
    assert check.K_fit <= check.K


def test_linear_decay_matches_closed_form(line):
    u0 = random_field(line, generator(1, "linear"), l2=5.0)
    traj = simulate(u0, LINEAR, dt=0.01, horizon=2.0, snapshot_every=50)
    lam = line.eigenvalues()
    for t, u in zip(traj.times, traj.states):
        exact = u0.coeffs * np.exp(-(lam + 1) * t)
        assert l2_norm(Field(line, exact) - u) <= 1e-8 * max(1.0, l2_norm(u))
