import math

import numpy as np
import pytest

from ksblowup import modulation as md
from ksblowup.errors import (
    DomainError,
    FitError,
    InvalidTrajectoryError,
    ParameterError,
    SamplingError,
)

GAMMA = float(np.euler_gamma)


@pytest.fixture(scope="module")
def stable():
    traj = md.integrate(md.initial_state("stable"), "stable", tau_end=1e5)
    return traj, md.to_physical(traj)


def _state(nu, mode="stable", beta=0.5, mu=1.0):
    kind, ell = ("stable", 1) if mode == "stable" else ("unstable", int(mode[9:-1]))
    a = [0.0, 0.0, 0.0, 0.0]
    a[ell - 1] = 4 * nu ** 2 * md.compatibility_rhs(nu, beta, kind)
    return md.ModulationState(0.0, nu, beta, tuple(a), mu)


def test_rhs_stable_value():
    nu, beta = 1e-3, 0.5
    L = math.log(nu)
    expect = beta * (1 / (2 * L) + (math.log(2) - GAMMA - 2 - math.log(beta)) / (4 * L * L))
    d = md.rhs(_state(nu), "stable")
    assert d["nu"] / nu == pytest.approx(expect, rel=1e-12)
    # 1/(2 ln 1e-3) = -0.0723824
    assert d["nu"] / nu == pytest.approx(-0.0393110, abs=1e-7)
    assert d["beta"] == 0.0
    assert d["mu"] == -0.5


@pytest.mark.parametrize("ell", [2, 3, 4])
def test_rhs_unstable_value(ell):
    nu, beta = 1e-3, 0.5
    d = md.rhs(_state(nu, f"unstable({ell})"), f"unstable({ell})")
    expect = beta * (1 - ell) + beta * ell / (2 * math.log(nu))
    assert d["nu"] / nu == pytest.approx(expect, rel=1e-12)


def test_rhs_domain():
    with pytest.raises(DomainError):
        md.rhs(md.ModulationState(0.0, 1.5, 0.5, (0.0,), 1.0), "stable")
    with pytest.raises(ParameterError):
        md.rhs(md.ModulationState(0.0, 1e-3, 3.0, (0.0,), 1.0), "stable")
    with pytest.raises(ParameterError):
        md.rhs(_state(1e-3), "sideways")


def test_prefactor_constant():
    assert md.stable_prefactor(0.5) == pytest.approx(2 * math.exp(-(2 + GAMMA) / 2))
    assert md.stable_prefactor(0.5) == pytest.approx(0.5513085, abs=1e-7)


def test_compatibility_round_trip():
    for nu in (1e-2, 1e-5, 1e-30):
        for beta in (0.3, 0.5, 1.7):
            a1 = 4 * nu ** 2 * md.compatibility_rhs(nu, beta)
            assert md.beta_from_compatibility(nu, a1) == pytest.approx(beta, rel=1e-10)


def test_stable_prefactor_and_compatibility(stable):
    traj, _ = stable
    pref = traj.prefactor()
    assert 0.540 <= pref[-1] <= 0.562
    assert np.max(np.abs(md.compatibility_residual(traj))) <= 1e-12
    assert np.all(np.diff(traj.nu) < 0)
    assert np.all(np.diff(traj.tau) > 0)
    # total variation of the prefactor over [tau, 2 tau] shrinks with tau
    tv = []
    for t0 in (1e3, 1e4):
        k = (traj.tau >= t0) & (traj.tau <= 2 * t0)
        tv.append(np.sum(np.abs(np.diff(pref[k]))))
    assert tv[1] < tv[0]


def test_stable_law(stable):
    _, law = stable
    ratio = law.lambda_over_law()
    far = -law.log_T_minus_t >= 100
    assert far.sum() > 30
    assert np.all(np.abs(ratio[far] - 1) <= 0.1)


def test_time_map_constant_beta(stable):
    traj, law = stable
    # T - t = mu^2 / (2 beta) for frozen beta
    expect = 2 * traj.log_mu - np.log(2 * traj.beta)
    assert np.allclose(law.log_T_minus_t, expect, atol=1e-9)
    # t itself saturates at T in double precision; T - t keeps its digits
    assert np.all(np.diff(law.log_T_minus_t) < 0)
    assert np.all(np.diff(law.t) >= 0)


def test_tolerance_halving():
    init = md.initial_state("stable")
    a = md.integrate(init, "stable", tau_end=1e4, tolerance=1e-10)
    b = md.integrate(init, "stable", tau_end=1e4, tolerance=5e-11)
    assert abs(a.log_nu[-1] - b.log_nu[-1]) <= 10 * 1e-10


def test_free_modes_decay():
    init = md.initial_state("stable", N=4, a_extra=(1e-3, 1e-3, 1e-3))
    traj = md.integrate(init, "stable", tau_end=50, samples_per_decade=400)
    for n in (2, 3, 4):
        rate = -np.polyfit(traj.tau, np.log(np.abs(traj.a[n - 1])), 1)[0]
        assert rate >= 0.9 * 2 * 0.5 * (n - 1)


def test_mod_residuals(stable):
    traj, _ = stable
    mods = md.mod_residuals(traj, "predicted")
    scale = traj.nu ** 2 / np.log(traj.nu) ** 2
    assert np.max(np.abs(mods[0] / scale)) <= 10
    assert np.max(np.abs(mods[1] / scale)) <= 10
    assert np.max(np.abs(mods[2:])) <= 1e-10
    spec = md.mod_residuals(traj, "spectral")
    ok = np.isfinite(spec[0])
    assert ok.sum() > 100
    assert np.max(np.abs(spec[0][ok] / scale[ok])) <= 10


def test_mod0_detects_broken_compatibility(stable):
    traj, _ = stable
    base = md.mod_residuals(traj, "predicted")[0]
    bumped = md.ModulationTrajectory(traj.mode, traj.tau, traj.log_nu, traj.beta, traj.log_mu,
                                     traj.a_sign, traj.a_log + np.array([[math.log(1.1)], [0], [0]]))
    broken = md.mod_residuals(bumped, "predicted")[0]
    k = np.abs(traj.log_nu) >= 6
    assert np.all(np.abs(broken[k]) >= 10 * np.abs(base[k]))


def test_mod_residuals_sparse(stable):
    t, _ = stable
    k = slice(0, 4)
    traj = md.ModulationTrajectory(t.mode, t.tau[k], t.log_nu[k], t.beta[k], t.log_mu[k],
                                   t.a_sign[:, k], t.a_log[:, k])
    with pytest.raises(SamplingError):
        md.mod_residuals(traj)


@pytest.mark.parametrize("ell", [2, 3, 4])
def test_unstable_laws(ell):
    traj = md.integrate(md.initial_state(f"unstable({ell})", N=4), f"unstable({ell})",
                        tau_end=1e4, samples_per_decade=100)
    fit = md.fit_power_law(md.to_physical(traj), window=(100, 1e4))
    assert fit.p == pytest.approx(ell / 2, abs=0.05)
    assert fit.q == pytest.approx(-ell / (2 * (ell - 1)), abs=0.15)


def test_unstable_rate():
    traj = md.integrate(md.initial_state("unstable(2)"), "unstable(2)", tau_end=400,
                        samples_per_decade=400)
    slope = np.interp(200, traj.tau, np.gradient(traj.log_nu, traj.tau))
    assert slope == pytest.approx(-0.5, rel=0.01)


def test_fit_synthetic():
    x = np.linspace(-5, -400, 200)
    y = 1.5 * x - 0.75 * np.log(-x) + 0.3
    fit = md.fit_power_law(None, log_T_minus_t=x, log_lambda=y)
    assert fit.p == pytest.approx(1.5, abs=1e-6)
    assert fit.q == pytest.approx(-0.75, abs=1e-6)
    assert fit.C == pytest.approx(math.exp(0.3), rel=1e-6)
    with pytest.raises(FitError):
        md.fit_power_law(None, log_T_minus_t=x[:20], log_lambda=y[:20])
    with pytest.raises(FitError):
        md.fit_power_law(None, log_T_minus_t=np.linspace(-5, -6, 50), log_lambda=np.zeros(50))


def test_to_physical_needs_long_run():
    traj = md.integrate(md.initial_state(), "stable", tau_end=20)
    with pytest.raises(InvalidTrajectoryError):
        md.to_physical(traj)


def test_csv_export(stable, tmp_path):
    traj, law = stable
    head = traj.to_csv(tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "tau,nu,beta,mu,a1,a2,a3"
    head = law.to_csv(tmp_path / "l.csv").read_text().splitlines()[0]
    assert head == "t,T_minus_t,lambda,lambda_over_law"


def test_initial_state_checks():
    with pytest.raises(ParameterError):
        md.initial_state("unstable(3)", N=2)
    with pytest.raises(ParameterError):
        md.initial_state(start="middle")
    bad = md.ModulationState(10.0, 1e-3, 0.5, (0.0, 0.0, 0.0), 1.0)
    with pytest.raises(ParameterError):
        md.integrate(bad, "stable", tau_end=100)
