import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from impulseid import (ContractError, DomainError, ImpulseTrain, SampledSignal, StateVector,
                       SystemParams, add_noise, kernel_z, simulate_ode, simulate_output)
from impulseid.model import read_impulses, read_signal, write_impulses, write_signal

rates = st.floats(0.05, 5.0)


def z_mp(b1, b2, t):
    """Kernel at 50 digits."""
    with mpmath.workdps(50):
        b1, b2, t = mpmath.mpf(b1), mpmath.mpf(b2), mpmath.mpf(t)
        if t <= 0:
            return 0.0
        return float((mpmath.exp(-b2 * t) - mpmath.exp(-b1 * t)) / (b1 - b2))


# -- kernel ----------------------------------------------------------------------

def test_kernel_values():
    assert kernel_z(0.5, 1.5, -1.0) == 0.0
    assert kernel_z(0.5, 1.5, 0.0) == 0.0
    assert kernel_z(0.5, 1.5, 1.0) == pytest.approx(0.383401, abs=1e-6)
    assert kernel_z(1.0, 1.0 + 1e-14, 1.0) == pytest.approx(math.exp(-1), abs=1e-6)


def test_kernel_degenerate_limit_matches_nearby_values():
    # just outside the switch the plain formula is still accurate
    for t in (0.1, 1.0, 7.0):
        inside = kernel_z(1.0, 1.0 + 1e-12, t)
        outside = kernel_z(1.0, 1.0 + 1e-7, t)
        assert inside == pytest.approx(outside, rel=1e-6)


@given(rates, rates, st.floats(1e-6, 40.0))
def test_kernel_matches_high_precision(b1, b2, t):
    if abs(b1 - b2) < 1e-6 * max(b1, b2):
        return
    assert kernel_z(b1, b2, t) == pytest.approx(z_mp(b1, b2, t), rel=1e-9, abs=1e-300)


@given(rates, rates, st.floats(1e-3, 30.0))
def test_kernel_positive_and_symmetric(b1, b2, t):
    z = kernel_z(b1, b2, t)
    assert z > 0
    assert z == pytest.approx(kernel_z(b2, b1, t), rel=1e-12)


def test_kernel_vectorised_shape():
    t = np.linspace(-1, 5, 12).reshape(3, 4)
    z = kernel_z(0.5, 1.5, t)
    assert z.shape == (3, 4)
    assert np.all(z[t <= 0] == 0)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (-1.0, 1.0, 1.0), (0.5, 1.5, math.nan),
                                  (0.5, math.inf, 1.0)])
def test_kernel_domain_errors(args):
    with pytest.raises(DomainError):
        kernel_z(*args)


# -- closed-form output -------------------------------------------------------

def test_simulate_output_examples():
    p = SystemParams(0.5, 1.5)
    y = simulate_output(p, ImpulseTrain([0.0], [1.0]), 0.0, [0.0, 1.0])
    np.testing.assert_allclose(y.values, [0.0, 0.383401], atol=1e-6)
    y = simulate_output(p, ImpulseTrain(), 1.0, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(y.values, [1.0, 0.223130, 0.049787], atol=1e-6)
    y = simulate_output(p, ImpulseTrain(), 0.0, np.linspace(0, 3, 7))
    assert np.all(y.values == 0)


def test_impulse_on_sample_affects_only_later_samples():
    p = SystemParams(0.7, 1.3)
    t = np.arange(5.0)
    y = simulate_output(p, ImpulseTrain([2.0], [1.0]), 0.0, t)
    assert np.all(y.values[:3] == 0)
    assert np.all(y.values[3:] > 0)


@given(st.floats(0.1, 10.0), st.floats(-2, 2), st.lists(st.floats(0.01, 2), min_size=1,
                                                           max_size=4))
def test_simulate_output_linear(scale, x2_init, weights):
    p = SystemParams(0.6, 1.9)
    tau = np.cumsum(np.full(len(weights), 1.3))
    t = np.linspace(0, tau[-1] + 4, 25)
    base = simulate_output(p, ImpulseTrain(tau, weights), x2_init, t).values
    scaled = simulate_output(p, ImpulseTrain(tau, np.multiply(weights, scale)),
                             x2_init * scale, t).values
    np.testing.assert_allclose(scaled, scale * base, rtol=1e-12, atol=1e-15)


def test_output_decreases_with_either_rate():
    t = np.linspace(0.1, 15, 60)
    train = ImpulseTrain([0.0], [1.0])
    y = simulate_output(SystemParams(0.8, 1.6), train, 0.0, t).values
    assert np.all(simulate_output(SystemParams(0.8, 1.7), train, 0.0, t).values < y)
    assert np.all(simulate_output(SystemParams(0.9, 1.6), train, 0.0, t).values < y)


def test_unordered_times_rejected():
    with pytest.raises(ContractError):
        simulate_output(SystemParams(0.5, 1.5), ImpulseTrain(), 0.0, [0.0, 2.0, 1.0])


# -- ODE oracle ------------------------------------------------------------------

def test_ode_example_and_jump():
    p = SystemParams(0.5, 1.5)
    traj = simulate_ode(p, ImpulseTrain([0.0], [1.0]), StateVector(0, 0), 1.0, 1e-3)
    assert traj.at(1.0).x2 == pytest.approx(0.383401, abs=1e-6)
    traj = simulate_ode(p, ImpulseTrain([0.4], [0.7]), StateVector(0.2, 0.1), 2.0, 0.05)
    i = np.flatnonzero(np.isclose(traj.t, 0.4))
    assert i.size == 2
    assert traj.x[i[1], 0] - traj.x[i[0], 0] == pytest.approx(0.7, abs=1e-15)


def test_ode_zero_input_stays_zero():
    traj = simulate_ode(SystemParams(0.5, 1.5), ImpulseTrain(), StateVector(0, 0), 5.0, 0.1)
    assert np.all(traj.x == 0)


def test_closed_form_matches_scipy_integrator(rng):
    # scipy's adaptive RK45 between jumps, independent of both implementations
    for _ in range(5):
        b1 = rng.uniform(0.4, 1.4)
        b2 = b1 + rng.uniform(0.3, 1.3)
        tau = np.cumsum(rng.uniform(1, 5, 3))
        d = rng.uniform(0.1, 1, 3)
        x = np.zeros(2)
        t0 = 0.0
        sample_t, sample_y = [], []
        for tk, dk in [*zip(tau, d), (tau[-1] + 5, 0.0)]:
            ts = np.linspace(t0, tk, 7)
            sol = solve_ivp(lambda t, s: [-b1 * s[0], s[0] - b2 * s[1]], (t0, tk), x,
                            t_eval=ts, rtol=1e-11, atol=1e-13)
            sample_t.extend(ts[1:])
            sample_y.extend(sol.y[1, 1:])
            x = sol.y[:, -1] + [dk, 0.0]
            t0 = tk
        y = simulate_output(SystemParams(b1, b2), ImpulseTrain(tau, d), 0.0, sample_t)
        np.testing.assert_allclose(y.values, sample_y, atol=1e-9)


def test_rk4_fourth_order():
    p = SystemParams(0.5, 1.5)
    train = ImpulseTrain([0.0], [1.0])
    exact = kernel_z(0.5, 1.5, 3.0)
    errs = [abs(simulate_ode(p, train, StateVector(0, 0), 3.0, h).at(3.0).x2 - exact)
            for h in (0.1, 0.05)]
    assert 12 < errs[0] / errs[1] < 20


def test_ode_nonnegative_states(rng):
    for _ in range(10):
        b1 = rng.uniform(0.4, 1.4)
        p = SystemParams(b1, b1 + rng.uniform(0.3, 1.3))
        train = ImpulseTrain(np.cumsum(rng.uniform(1, 5, 3)), rng.uniform(0.1, 1, 3))
        traj = simulate_ode(p, train, StateVector(0, 0), 20.0, 0.01)
        assert np.all(traj.x >= 0)


# -- noise -----------------------------------------------------------------------

def test_add_noise_contract():
    s = SampledSignal(np.arange(4.0), np.ones(4))
    assert np.array_equal(add_noise(s, 0.0, 1).values, s.values)
    a = add_noise(s, 0.1, 7)
    b = add_noise(s, 0.1, 7)
    assert np.array_equal(a.values, b.values)
    with pytest.raises(ContractError):
        add_noise(s, -1.0, 0)


def test_add_noise_mean_and_std():
    n, sigma = 10**5, 0.0015
    s = SampledSignal(np.arange(float(n)), np.zeros(n))
    noise = add_noise(s, sigma, 2024).values
    assert abs(noise.mean()) < 5 * sigma / math.sqrt(n)
    assert noise.std() == pytest.approx(sigma, rel=0.02)


# -- files -----------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    s = SampledSignal([0.0, 0.25, 0.5], [0.1, -1e-17, 3.3333333333333335])
    write_signal(tmp_path / "y.csv", s)
    back = read_signal(tmp_path / "y.csv")
    assert np.array_equal(back.times, s.times) and np.array_equal(back.values, s.values)
    train = ImpulseTrain([1.0, 2.5], [0.3, 0.7])
    write_impulses(tmp_path / "i.csv", train)
    back = read_impulses(tmp_path / "i.csv")
    assert np.array_equal(back.tau, train.tau) and np.array_equal(back.d, train.d)


@pytest.mark.parametrize("text, line", [("", 1), ("a,b\n1,2\n", 1), ("t,y\n0,1\n1,x\n", 3),
                                        ("t,y\n0,1\n1\n", 3), ("t,y\n0,1\n0,2\n", 3)])
def test_malformed_csv_reports_line(tmp_path, text, line):
    f = tmp_path / "bad.csv"
    f.write_text(text, encoding="utf-8")
    with pytest.raises(ContractError, match=f"line {line}"):
        read_signal(f)


def test_params_validation():
    with pytest.raises(ContractError):
        SystemParams(1.5, 0.5)
    with pytest.raises(ContractError):
        SystemParams(0.5, 1.5, g1=2.0)
    with pytest.raises(ContractError):
        ImpulseTrain([1.0, 1.0], [0.1, 0.2])
